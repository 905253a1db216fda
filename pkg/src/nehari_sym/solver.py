"""Equivariant seeds, Nehari-constrained descent and multistart search.

Seeds follow the sphere-to-manifold maps used for index arguments: a point
``z`` on the unit sphere of ``C^m`` is turned into a state whose components
have disjoint supports, in such a way that multiplying ``z`` by
``exp(2*pi*i/p)`` permutes the components by ``sigma``.  Phases are quantised
to a lattice of ``p * PHASE_Q`` points per turn so that this identity holds
bitwise on the grid.
"""

from __future__ import annotations

import math
from fractions import Fraction
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .energy import (InfeasibleRetraction, energy, gradient, nehari_residuals,
                     nehari_scale, residual_norm)
from .grid import PolarGrid, fsum
from .symmetry import SymmetryClass, SystemParams, invariance_defect, project_class

PHASE_Q = 1 << 24


# ---------------------------------------------------------------------------
# seeds

@dataclass(frozen=True)
class SeedSpec:
    """Sphere point ``z`` (``m`` complex numbers) and bump layout.

    ``shift`` is an exact extra phase, as a fraction of a full turn, applied
    to every coordinate of ``z``; :meth:`rotated` advances it so that rotated
    specs keep bitwise identical moduli.
    """

    z: tuple
    radial_margin: float = 0.08
    angular_fill: float = 0.8
    shift: Fraction = Fraction(0)

    def __post_init__(self):
        z = np.asarray(self.z, dtype=complex).reshape(-1)
        if z.size == 0:
            raise ValueError("z needs at least one coordinate")
        if abs(np.linalg.norm(z) - 1.0) > 1e-9:
            raise ValueError(f"z must lie on the unit sphere, |z| = {np.linalg.norm(z)}")
        if not 0 < self.angular_fill <= 1:
            raise ValueError("angular_fill must lie in (0, 1]")
        if not 0 <= self.radial_margin < 0.5:
            raise ValueError("radial_margin must lie in [0, 0.5)")
        object.__setattr__(self, "z", tuple(complex(c) for c in z))
        object.__setattr__(self, "shift", Fraction(self.shift) % 1)

    @property
    def m(self) -> int:
        return len(self.z)

    @property
    def point(self) -> np.ndarray:
        """``z`` with the exact shift applied (for reporting)."""
        return np.asarray(self.z) * np.exp(2j * math.pi * float(self.shift))

    @classmethod
    def random(cls, m: int, rng: np.random.Generator, **kw) -> "SeedSpec":
        v = rng.standard_normal(2 * m)
        v /= np.linalg.norm(v)
        return cls(tuple(v[:m] + 1j * v[m:]), **kw)

    def rotated(self, turns: int, p: int) -> "SeedSpec":
        """The spec of ``z * exp(2*pi*i*turns/p)``."""
        return replace(self, shift=self.shift + Fraction(turns, p))

    def lattice(self, p: int) -> tuple[np.ndarray, np.ndarray]:
        """Moduli and integer phases on the lattice ``2*pi*n/(p*PHASE_Q)``."""
        z = np.asarray(self.z)
        r = np.abs(z)
        extra = self.shift * p * PHASE_Q
        if extra.denominator != 1:
            raise ValueError(f"phase shift {self.shift} is not on the lattice for p={p}")
        n = np.rint(np.angle(z) / (2 * math.pi) * p * PHASE_Q).astype(np.int64)
        return r, (n + int(extra)) % (p * PHASE_Q)


def _annuli(grid: PolarGrid, count: int, margin: float) -> list[tuple[float, float]]:
    """``count`` disjoint radial windows inside the domain."""
    a, b = grid.r_inner, grid.r_outer
    width = (b - a) / count
    pad = margin * width
    return [(a + i * width + pad, a + (i + 1) * width - pad) for i in range(count)]


def _radial_bump(grid: PolarGrid, lo: float, hi: float) -> np.ndarray:
    x = (grid.r - lo) / (hi - lo)
    out = np.where((x > 0) & (x < 1), np.sin(np.pi * np.clip(x, 0, 1)) ** 2, 0.0)
    if not np.any(out):
        raise ValueError(f"radial window ({lo:.3g}, {hi:.3g}) contains no grid node")
    return out


def _angular_bump(theta: np.ndarray, centre: float, width: float, period: float) -> np.ndarray:
    d = np.mod(theta - centre + 0.5 * period, period) - 0.5 * period
    return np.where(np.abs(d) < 0.5 * width, np.cos(np.pi * d / width) ** 2, 0.0)


def _check_seed_grid(grid: PolarGrid, order: int):
    if grid.n_theta % order:
        raise ValueError(f"n_theta={grid.n_theta} is not divisible by {order}")


def seed_positive(grid: PolarGrid, cls: SymmetryClass, spec: SeedSpec,
                  params: SystemParams, retract_state: bool = True) -> np.ndarray:
    """Sector bumps rotated by ``theta_i/k``, weighted by ``|z_i|``, copied ``p`` times per block.

    Component ``l`` of block ``b`` is ``R_{2*pi*l/(p*k)} sum_i |z_i| R_{theta_i/k} U_i^b``,
    where ``U_i^b`` is a ``2*pi/k``-periodic train of bumps on annulus ``(i, b)``.
    """
    if cls.branch != "positive":
        raise ValueError("seed_positive needs a positive class")
    p, k = cls.p, cls.k
    if params.p != p:
        raise ValueError(f"class prime {p} differs from params prime {params.p}")
    order = p * k
    _check_seed_grid(grid, order)
    step = grid.n_theta // order
    period_nodes = grid.n_theta // k
    theta = grid.theta[:period_nodes]
    r_mod, n_phase = spec.lattice(p)
    windows = _annuli(grid, spec.m * params.B, spec.radial_margin)
    width = spec.angular_fill * 2 * math.pi / order
    U = np.zeros((params.N,) + grid.shape)
    for b in range(params.B):
        blockfield = np.zeros(grid.shape)
        for i in range(spec.m):
            if r_mod[i] == 0:
                continue
            q, rem = divmod(int(n_phase[i]), PHASE_Q)
            # rotation by theta_i/k = q*2*pi/(p*k) + rem*2*pi/(p*k*Q)
            offset = rem * 2 * math.pi / (order * PHASE_Q)
            ang = _angular_bump(theta, 0.5 * width + offset, width, 2 * math.pi / k)
            rad = _radial_bump(grid, *windows[i * params.B + b])
            piece = np.tile(rad[:, None] * ang[None, :], (1, k))
            blockfield += r_mod[i] * np.roll(piece, q * step, axis=-1)
        for l in range(p):
            U[b * p + l] = np.roll(blockfield, l * step, axis=-1)
    return _finish(grid, params, U, "positive", retract_state)


def window_weights(n_phase: int, p: int) -> np.ndarray:
    """Values ``eta_l`` (l = 1..2p) at the lattice angle ``2*pi*n_phase/(p*Q)``.

    ``eta_l`` is ``sin^2`` on ``((l-1)*pi/p, (l+1)*pi/p)`` and zero elsewhere;
    arithmetic is on integers so a shift by ``Q`` (one ``2*pi/p`` turn) moves
    each value two windows along exactly.
    """
    half = PHASE_Q // 2
    out = np.zeros(2 * p)
    for l in range(1, 2 * p + 1):
        y = (int(n_phase) - (l - 1) * half) % (p * PHASE_Q)
        if 0 < y < PHASE_Q:
            out[l - 1] = math.sin(math.pi * y / PHASE_Q) ** 2
    return out


def _nodal_profiles(grid: PolarGrid, k: int, p: int, rad: np.ndarray,
                    fill: float) -> list[np.ndarray]:
    """``2p`` fields odd under ``R_{pi/k}`` with disjoint angular supports."""
    half_nodes = grid.n_theta // (2 * k)
    theta = grid.theta[:half_nodes]
    sub = math.pi / (k * 2 * p)
    width = fill * sub
    out = []
    for l in range(2 * p):
        ang = _angular_bump(theta, (l + 0.5) * sub, width, 2 * math.pi)
        halfblock = rad[:, None] * ang[None, :]
        full = np.concatenate([halfblock if s % 2 == 0 else -halfblock for s in range(2 * k)], axis=1)
        out.append(full)
    return out


def seed_nodal(grid: PolarGrid, cls: SymmetryClass, spec: SeedSpec,
               params: SystemParams, retract_state: bool = True) -> np.ndarray:
    """Window-blended odd profiles; ``U_l^b = sum_i |z_i| U^{i,b}_{theta_i + 2*pi*l/p}``."""
    if cls.branch != "nodal":
        raise ValueError("seed_nodal needs a nodal class")
    p, k = params.p, cls.k
    _check_seed_grid(grid, 2 * k)
    r_mod, n_phase = spec.lattice(p)
    windows = _annuli(grid, spec.m * params.B, spec.radial_margin)
    U = np.zeros((params.N,) + grid.shape)
    for b in range(params.B):
        for i in range(spec.m):
            if r_mod[i] == 0:
                continue
            phis = _nodal_profiles(grid, k, p, _radial_bump(grid, *windows[i * params.B + b]),
                                   spec.angular_fill)
            for l in range(p):
                eta = window_weights(int(n_phase[i]) + l * PHASE_Q, p)
                blend = np.zeros(grid.shape)
                for w, phi in zip(eta, phis):
                    if w:
                        blend = blend + w * phi
                U[b * p + l] += r_mod[i] * blend
    return _finish(grid, params, U, "nodal", retract_state)


def seed_admissible(grid: PolarGrid, cls: SymmetryClass, spec: SeedSpec,
                    params: SystemParams, group_order: int, b_steps: int,
                    retract_state: bool = True) -> np.ndarray:
    """Seeds for a grid-aligned pair ``(C_group_order, R_{b_steps*dtheta})`` in the plane.

    Each component is the ``G``-symmetrisation of sector bumps; component
    ``l`` of a block is the image under ``b^l``.  With ``group_order = k`` and
    ``b_steps = n_theta/(p*k)`` this reproduces the positive class.
    """
    if grid.n_theta % group_order:
        raise ValueError("group rotations are not grid-exact")
    gstep = grid.n_theta // group_order
    if (params.p * b_steps) % gstep:
        raise ValueError("b^p must lie in the group")
    if cls.branch != "positive":
        raise ValueError("admissible seeds use the positive branch")
    base = seed_positive(grid, SymmetryClass("positive", group_order, params.p),
                         spec, params, retract_state=False) \
        if b_steps == grid.n_theta // (params.p * group_order) else None
    if base is None:
        raise ValueError("only the rotation pair b = R_{2*pi/(p*k)} is supported on a polar grid")
    return _finish(grid, params, base, "positive", retract_state)


def _finish(grid, params, U, branch, retract_state):
    if not retract_state:
        return U
    t = nehari_scale(grid, params, U, branch)
    return t[:, None, None] * U


# ---------------------------------------------------------------------------
# descent

@dataclass
class SolverConfig:
    max_iter: int = 4000
    tol: float = 1e-7
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    step0: float = 1.0
    step_max: float = 4.0
    min_step: float = 1e-10
    dedup_distance: float = 0.1
    starts: int = 24
    m_max: int = 3
    levels: int = 3
    seed: int = 0
    breaking_threshold: float = 0.01
    perturbation: float = 0.01
    conjugate: bool = True

    def __post_init__(self):
        for name in ("tol", "armijo_c", "step0", "dedup_distance", "min_step"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack must lie in (0, 1)")
        if self.max_iter < 0 or self.starts < 0 or self.m_max < 1 or self.levels < 1:
            raise ValueError("iteration and start counts must be non-negative")


@dataclass
class SolveReport:
    state: np.ndarray
    energy: float
    nehari_max: float
    gradient_norm: float
    pde_residual: float
    iterations: int
    defect_k: float
    defect_refined: float
    converged: bool
    reason: str = ""
    cls: Optional[SymmetryClass] = None
    energies: list = field(default_factory=list, repr=False)
    subclass: Optional[SymmetryClass] = None

    def summary(self) -> dict:
        return {
            "energy": self.energy,
            "nehari_residual_max": self.nehari_max,
            "gradient_norm": self.gradient_norm,
            "pde_residual": self.pde_residual,
            "iterations": self.iterations,
            "defect_k": self.defect_k,
            "defect_refined": self.defect_refined,
            "converged": self.converged,
            "reason": self.reason,
            "class": None if self.cls is None else
            {"branch": self.cls.branch, "k": self.cls.k, "p": self.cls.p},
            "subclass_k": None if self.subclass is None else self.subclass.k,
        }


def pde_residual(grid: PolarGrid, params: SystemParams, U: np.ndarray) -> float:
    """``|| -Lap u_j + lam_j u_j - mu_j u_j^3 - sum_k beta_jk u_j u_k^2 ||_{L2}`` over all j."""
    return residual_norm(grid, gradient(grid, params, U, "nodal"))


def class_defects(grid: PolarGrid, U: np.ndarray, cls: SymmetryClass) -> tuple[float, float]:
    """Worst component defects under ``R_{2*pi/k}`` and under the refined rotation."""
    base = max(invariance_defect(grid, u, grid.n_theta // cls.k) for u in U)
    refined = min(invariance_defect(grid, u, grid.n_theta // cls.order) for u in U)
    return base, refined


def _preconditioner(grid: PolarGrid, params: SystemParams):
    solvers = {float(l): grid.helmholtz_solver(float(l)) for l in np.unique(params.lam)}

    def apply(g: np.ndarray) -> np.ndarray:
        return np.stack([solvers[float(params.lam[j])](g[j]) for j in range(g.shape[0])])

    return apply


def _retracted(grid, params, cls, U):
    V = project_class(grid, U, cls)
    t = nehari_scale(grid, params, V, cls.branch)
    return t[:, None, None] * V


def _report(grid, params, cls, U, it, converged, reason, energies):
    g = project_class(grid, gradient(grid, params, U, cls.branch), cls)
    dk, dref = class_defects(grid, U, cls)
    neh = nehari_residuals(grid, params, U, cls.branch)
    return SolveReport(
        state=U, energy=energy(grid, params, U, cls.branch),
        nehari_max=float(np.max(np.abs(neh.residuals))),
        gradient_norm=residual_norm(grid, g), pde_residual=pde_residual(grid, params, U),
        iterations=it, defect_k=dk, defect_refined=dref, converged=converged,
        reason=reason, cls=cls, energies=energies)


def backtracking_search(step, residual, E, slope, gnorm, tau, config):
    """Armijo backtracking with a quadratic-interpolation refinement.

    ``step(tau)`` returns ``(state, energy)`` (raising ``ValueError`` when the
    trial cannot be retracted) and ``residual(state)`` the gradient norm.
    Returns ``(state, energy, tau, first_try)`` or ``None``.
    """
    slack = 1e-14 * max(abs(E), 1.0)
    first = True

    def attempt(t):
        try:
            return step(t)
        except ValueError:
            return None, math.inf

    while tau >= config.min_step:
        trial, Et = attempt(tau)
        if Et <= E - config.armijo_c * tau * slope:
            # the quadratic through E(0), E'(0) and E(tau) locates the minimiser;
            # this damps the overshoot of stiff directions
            curv = Et - E + slope * tau
            if curv > 0:
                tq = 0.5 * slope * tau * tau / curv
                if tq < 0.75 * tau:
                    tq_trial, Eq = attempt(tq)
                    if Eq < Et:
                        return tq_trial, Eq, tq, False
            return trial, Et, tau, first
        if Et <= E + slack and residual(trial) <= (1.0 - config.armijo_c) * gnorm:
            # decrease is below energy roundoff: demand progress in the residual
            return trial, Et, tau, first
        tau *= config.backtrack
        first = False
    return None


def _line_search(grid, params, cls, U, E, g, gnorm, D, tau, config):
    def step(t):
        trial = _retracted(grid, params, cls, U - t * D)
        return trial, energy(grid, params, trial, cls.branch)

    def residual(trial):
        return residual_norm(grid, project_class(grid, gradient(grid, params, trial, cls.branch), cls))

    return backtracking_search(step, residual, E, fsum(grid.weights * g * D), gnorm, tau, config)


def minimize(grid: PolarGrid, params: SystemParams, cls: SymmetryClass, start: np.ndarray,
             config: SolverConfig = SolverConfig()) -> SolveReport:
    """Preconditioned projected gradient descent on the Nehari set of ``cls``.

    Each trial point is ``retract(project(U - tau * P g))`` with ``P`` the
    inverse of ``-Lap + lam_j``; steps satisfy the Armijo condition.
    """
    grid.check(start)
    try:
        U = _retracted(grid, params, cls, start)
    except InfeasibleRetraction:
        rng = np.random.default_rng(config.seed)
        noise = rng.standard_normal(start.shape)
        scale = config.perturbation * math.sqrt(fsum(grid.weights * start * start)
                                                / fsum(grid.weights * noise * noise))
        try:
            U = _retracted(grid, params, cls, start + scale * noise)
        except InfeasibleRetraction as exc:
            return _report(grid, params, cls, project_class(grid, start, cls), 0, False,
                           f"infeasible start: {exc}", [])
    precond = _preconditioner(grid, params)
    E = energy(grid, params, U, cls.branch)
    energies = [E]
    tau = config.step0
    prev = None  # (g, G, D) of the last step, for conjugate directions
    for it in range(config.max_iter + 1):
        g = project_class(grid, gradient(grid, params, U, cls.branch), cls)
        gnorm = residual_norm(grid, g)
        if gnorm <= config.tol:
            return _report(grid, params, cls, U, it, True, "converged", energies)
        if it == config.max_iter:
            break
        G = project_class(grid, precond(g), cls)
        gG = fsum(grid.weights * g * G)
        D = G
        if config.conjugate and prev is not None:
            g0, G0, D0 = prev
            # Polak-Ribiere+ in the preconditioned metric
            b = max(0.0, (gG - fsum(grid.weights * g0 * G)) / fsum(grid.weights * g0 * G0))
            D = G + b * D0
            if fsum(grid.weights * g * D) <= 0.1 * gG:
                D = G
        step = _line_search(grid, params, cls, U, E, g, gnorm, D, tau, config)
        if step is None and D is not G:
            D = G
            step = _line_search(grid, params, cls, U, E, g, gnorm, D, tau, config)
        if step is None:
            return _report(grid, params, cls, U, it, False, "line search failed", energies)
        U, E, tau_used, first = step
        energies.append(E)
        prev = (g, G, D)
        tau = min(tau_used * 2.0, config.step_max) if first else tau_used
    return _report(grid, params, cls, U, config.max_iter, False, "max iterations", energies)


# ---------------------------------------------------------------------------
# multistart

def _block_permutations(params: SystemParams) -> list[np.ndarray]:
    """Cyclic shifts and reversals applied simultaneously inside every block."""
    perms = []
    for rev in (False, True):
        for s in range(params.p):
            perm = np.arange(params.N)
            for blk in params.blocks():
                idx = np.array(blk)
                order = np.roll(idx, -s)
                perm[idx] = order[::-1] if rev else order
            if not any(np.array_equal(perm, q) for q in perms):
                perms.append(perm)
    return perms


def aligned_distance(grid: PolarGrid, params: SystemParams, U: np.ndarray, V: np.ndarray,
                     branch: str) -> float:
    """``min_g ||U - g V|| / max(||U||, ||V||)`` over the symmetries of the functional.

    ``g`` ranges over all grid rotations, the reflection ``theta -> -theta``,
    block permutations and, for the nodal functional, sign flips of single
    components.  Rotations are scanned with one FFT per candidate.
    """
    U = grid.check(U)
    V = grid.check(V)
    w = grid.ring_weights[None, :, None]
    nu = fsum(w * U * U)
    nv = fsum(w * V * V)
    scale = max(nu, nv)
    if scale == 0.0:
        return 0.0
    FU = np.fft.rfft(U, axis=-1)
    best = math.inf
    for reflect in (False, True):
        W = V[..., (-np.arange(grid.n_theta)) % grid.n_theta] if reflect else V
        FW = np.fft.rfft(W, axis=-1)
        for perm in _block_permutations(params):
            # cross[j, s] = sum_i w_i sum_m U_j[i, m] W_perm(j)[i, m - s]
            cross = np.fft.irfft(FU * np.conj(FW[perm]), n=grid.n_theta, axis=-1)
            cross = np.sum(w * cross, axis=1)
            if branch == "nodal":
                cross = np.abs(cross)
            d2 = nu + nv - 2.0 * np.sum(cross, axis=0)
            best = min(best, float(np.min(d2)))
    return math.sqrt(max(best, 0.0) / scale)


@dataclass
class SolutionSet:
    reports: list
    distances: np.ndarray
    attempted: int = 0
    failures: list = field(default_factory=list)

    @property
    def energies(self) -> list[float]:
        return [r.energy for r in self.reports]

    def __len__(self) -> int:
        return len(self.reports)


def start_plan(cls: SymmetryClass, config: SolverConfig, index: int) -> tuple[int, SymmetryClass]:
    """Sphere dimension ``m`` and nested subclass used by start ``index``."""
    m = 1 + index % config.m_max
    level = (index // config.m_max) % config.levels
    return m, cls.nested(level)


def make_seed(grid: PolarGrid, params: SystemParams, cls: SymmetryClass, spec: SeedSpec) -> np.ndarray:
    if cls.branch == "positive":
        return seed_positive(grid, cls, spec, params)
    return seed_nodal(grid, cls, spec, params)


def run_start(grid: PolarGrid, params: SystemParams, cls: SymmetryClass,
              config: SolverConfig, index: int) -> SolveReport:
    m, sub = start_plan(cls, config, index)
    rng = np.random.default_rng([config.seed, index])
    spec = SeedSpec.random(m, rng)
    try:
        start = make_seed(grid, params, sub, spec)
    except ValueError as exc:
        U = np.zeros((params.N,) + grid.shape)
        return SolveReport(U, math.nan, math.nan, math.nan, math.nan, 0, math.nan, math.nan,
                           False, f"seed failed: {exc}", cls, subclass=sub)
    report = minimize(grid, params, sub, start, replace(config, seed=config.seed + index))
    dk, dref = class_defects(grid, report.state, cls)
    report.defect_k, report.defect_refined = dk, dref
    report.cls, report.subclass = cls, sub
    return report


def _run_start_args(args):
    return run_start(*args)


def multistart(grid: PolarGrid, params: SystemParams, cls: SymmetryClass,
               config: SolverConfig = SolverConfig(), jobs: int = 1) -> SolutionSet:
    """Run ``config.starts`` seeded descents and keep distinct converged states.

    Start ``s`` draws ``z`` from a generator keyed on ``(config.seed, s)`` and
    works in the nested subclass chosen by :func:`start_plan`; the result does
    not depend on ``jobs`` or on completion order.
    """
    tasks = [(grid, params, cls, config, s) for s in range(config.starts)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_start_args, tasks))
    else:
        results = [_run_start_args(t) for t in tasks]
    kept: list[SolveReport] = []
    failures = []
    for s, rep in enumerate(results):
        if not rep.converged:
            failures.append((s, rep.reason))
            continue
        dup = next((i for i, q in enumerate(kept)
                    if aligned_distance(grid, params, rep.state, q.state, cls.branch)
                    < config.dedup_distance), None)
        if dup is None:
            kept.append(rep)
        elif rep.energy < kept[dup].energy:
            kept[dup] = rep
    kept.sort(key=lambda r: r.energy)
    n = len(kept)
    dist = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            dist[i, j] = dist[j, i] = aligned_distance(grid, params, kept[i].state,
                                                       kept[j].state, cls.branch)
    return SolutionSet(kept, dist, config.starts, failures)
