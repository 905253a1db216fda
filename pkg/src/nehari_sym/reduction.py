"""Scalar reduction of the symmetric two-component problem.

For ``N = p = 2`` a state in the positive class of order ``k`` is determined by
one scalar field.  On a *grid pair* (reduced grid with ``n`` angles, full grid
with ``k*n`` angles) the map

    Psi_k u = (u(r, k*theta), u(r, k*theta - pi))

is realised by index copies, and the full energy pulled back through it is

    E_hat(u) = D_k(u) + int u^2 - 1/2 int (u^+)^4 - beta/2 int u(x)^2 u(-x)^2,

with ``D_k`` the Dirichlet form of the anisotropic operator
``Lap_k = d_rr + (1/r) d_r + (k^2/r^2) d_thth``.  On the grid pair the identity
``E(Psi_k u) = E_hat(u)`` holds term by term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .energy import energy, gradient, nehari_residuals, residual_norm
from .grid import GridSpec, PolarGrid, antipodal, dirichlet_form, fsum, integrate, laplacian_k
from .solver import SolveReport, SolverConfig, backtracking_search
from .symmetry import (SymmetryClass, SystemParams, class_defect, invariance_defect,
                       minimal_period)


class InfeasibleScaling(ValueError):
    """``D(u) <= 0``: no multiple of ``u`` lies on the reduced Nehari set."""


@dataclass
class ReducedProblem:
    grid: PolarGrid
    k: int = 1
    beta: float = -1.0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be a positive integer")
        if not self.beta < 0:
            raise ValueError("the reduction needs a repulsive coupling beta < 0")
        if self.grid.n_theta % 2:
            raise ValueError("the reduced grid needs an even n_theta")

    @property
    def params(self) -> SystemParams:
        return SystemParams.two_component(self.beta)

    @property
    def cls(self) -> SymmetryClass:
        return SymmetryClass("positive", self.k, 2)

    def full_grid(self) -> PolarGrid:
        s = self.grid.spec
        return PolarGrid(GridSpec(s.r_inner, s.r_outer, s.n_r, s.n_theta * self.k,
                                  2 * self.k))


@dataclass(frozen=True)
class HalfSpace:
    """Half-plane bounded by the line through 0 at angle ``axis_index * dtheta / 2``.

    ``axis_index`` counts half grid steps, so even values put the axis on grid
    nodes and odd values between them.  ``side = +1`` keeps the arc of angles
    counter-clockwise from the axis, ``side = -1`` the other one.
    """

    axis_index: int
    side: int = 1

    def __post_init__(self):
        if self.side not in (1, -1):
            raise ValueError("side must be +1 or -1")


# ---------------------------------------------------------------------------
# the isomorphism

def psi_k(u: np.ndarray, k: int) -> np.ndarray:
    """``(u(r, k theta), u(r, k theta - pi))`` on the grid with ``k * n`` angles."""
    u = np.asarray(u, dtype=float)
    n = u.shape[-1]
    if n % 2:
        raise ValueError("psi_k needs an even number of reduced angles")
    if k < 1:
        raise ValueError("k must be a positive integer")
    first = np.tile(u, (1, k))
    second = np.tile(np.roll(u, n // 2, axis=-1), (1, k))
    return np.stack([first, second])


def psi_k_inverse(U: np.ndarray, k: int, tol: float = 0.0) -> np.ndarray:
    """Recover ``u`` from a state in the image of :func:`psi_k`."""
    U = np.asarray(U, dtype=float)
    if U.shape[0] != 2 or U.shape[-1] % (2 * k):
        raise ValueError("expected two components on a grid with a multiple of 2k angles")
    n = U.shape[-1] // k
    u = U[0][:, :n]
    if np.max(np.abs(psi_k(u, k) - U)) > tol:
        raise ValueError("state is not in the image of psi_k")
    return u.copy()


# ---------------------------------------------------------------------------
# reduced functional

def _sq(x):
    return x * x


def quadratic_part(prob: ReducedProblem, u: np.ndarray) -> float:
    return math.fsum([dirichlet_form(prob.grid, u, prob.k), integrate(prob.grid, u * u)])


def interaction(prob: ReducedProblem, u: np.ndarray) -> float:
    """``D(u) = int (u^+)^4 + beta int u^2(x) u^2(-x)``."""
    g = prob.grid
    up = np.maximum(u, 0.0)
    u2 = u * u
    return math.fsum([integrate(g, _sq(up * up)), prob.beta * integrate(g, u2 * antipodal(g, u2))])


def energy_reduced(prob: ReducedProblem, u: np.ndarray) -> float:
    g = prob.grid
    u = g.check(u)
    up = np.maximum(u, 0.0)
    u2 = u * u
    return math.fsum([dirichlet_form(g, u, prob.k), integrate(g, u2),
                      -0.5 * integrate(g, _sq(up * up)),
                      -0.5 * prob.beta * integrate(g, u2 * antipodal(g, u2))])


def reduced_residual_field(prob: ReducedProblem, u: np.ndarray) -> np.ndarray:
    """``-Lap_k u + u - (u^+)^3 - beta u u(-x)^2``; half the L2 gradient of ``E_hat``."""
    g = prob.grid
    u = g.check(u)
    up = np.maximum(u, 0.0)
    return -laplacian_k(g, u, prob.k) + u - up * up * up - prob.beta * u * antipodal(g, u * u)


def gradient_reduced(prob: ReducedProblem, u: np.ndarray) -> np.ndarray:
    return 2.0 * reduced_residual_field(prob, u)


def reduced_residual(prob: ReducedProblem, u: np.ndarray) -> float:
    return residual_norm(prob.grid, reduced_residual_field(prob, u))


def reduced_nehari_residual(prob: ReducedProblem, u: np.ndarray) -> float:
    """``quadratic(u) - D(u)``, i.e. ``<grad E_hat(u), u> / 2``."""
    return math.fsum([quadratic_part(prob, u), -interaction(prob, u)])


def nehari_scale_reduced(prob: ReducedProblem, u: np.ndarray) -> float:
    """``sqrt(quadratic(u) / D(u))``; raises :class:`InfeasibleScaling` if ``D(u) <= 0``."""
    g = prob.grid
    u = g.check(u)
    if math.sqrt(integrate(g, u * u)) <= 1e-8 * math.sqrt(g.area):
        raise ValueError("u must be nonzero")
    D = interaction(prob, u)
    up = np.maximum(u, 0.0)
    scale = integrate(g, _sq(up * up)) + abs(prob.beta) * integrate(g, _sq(u * u))
    if D <= 1e-12 * scale:
        raise InfeasibleScaling(f"D(u) = {D:.3e} is not positive")
    return math.sqrt(quadratic_part(prob, u) / D)


# ---------------------------------------------------------------------------
# pullback check

@dataclass
class PullbackReport:
    full_terms: dict
    reduced_terms: dict
    ratios: dict
    full_energy: float
    reduced_energy: float
    full_gradient_norm: float
    reduced_gradient_norm: float

    def as_dict(self) -> dict:
        return {"full_terms": self.full_terms, "reduced_terms": self.reduced_terms,
                "ratios": self.ratios, "full_energy": self.full_energy,
                "reduced_energy": self.reduced_energy,
                "full_gradient_norm": self.full_gradient_norm,
                "reduced_gradient_norm": self.reduced_gradient_norm}


def _ratio(a: float, b: float) -> float:
    if b == 0.0:
        return 1.0 if a == 0.0 else math.inf
    return a / b


def pullback_consistency(prob: ReducedProblem, u: np.ndarray) -> PullbackReport:
    """Compare each term of ``E(Psi_k u)`` with its reduced counterpart."""
    g = prob.grid
    u = g.check(u)
    fg = prob.full_grid()
    U = psi_k(u, prob.k)
    P = prob.params
    full = {
        "quadratic": math.fsum([0.5 * (dirichlet_form(fg, U[j]) + P.lam[j] * integrate(fg, U[j] * U[j]))
                                for j in range(2)]),
        "quartic": math.fsum([-0.25 * P.mu[j] * integrate(fg, _sq(_sq(np.maximum(U[j], 0.0))))
                              for j in range(2)]),
        "coupling": -0.5 * prob.beta * integrate(fg, _sq(U[0]) * _sq(U[1])),
    }
    u2 = u * u
    reduced = {
        "quadratic": quadratic_part(prob, u),
        "quartic": -0.5 * integrate(g, _sq(_sq(np.maximum(u, 0.0)))),
        "coupling": -0.5 * prob.beta * integrate(g, u2 * antipodal(g, u2)),
    }
    ratios = {key: _ratio(full[key], reduced[key]) for key in full}
    return PullbackReport(
        full, reduced, ratios,
        full_energy=energy(fg, P, U, "positive"), reduced_energy=energy_reduced(prob, u),
        full_gradient_norm=residual_norm(fg, gradient(fg, P, U, "positive")),
        reduced_gradient_norm=reduced_residual(prob, u))


# ---------------------------------------------------------------------------
# ground state

def reduced_seed(prob: ReducedProblem, rng: np.random.Generator) -> np.ndarray:
    """Nonnegative bump in a random direction plus a small smooth perturbation."""
    g = prob.grid
    R, T = g.mesh()
    lo, hi = g.r_inner, g.r_outer
    centre = lo + (hi - lo) * rng.uniform(0.3, 0.7)
    width = (hi - lo) * rng.uniform(0.25, 0.45)
    alpha = rng.uniform(0, 2 * math.pi)
    spread = rng.uniform(0.6, 1.4)
    radial = np.exp(-((R - centre) / width) ** 2) * (hi - R) * (R - lo + (hi - lo) * 0.05)
    angular = np.exp(spread * (np.cos(T - alpha) - 1.0))
    noise = sum(rng.uniform(-0.1, 0.1) * np.cos(j * T + rng.uniform(0, 2 * math.pi))
                for j in range(1, 4))
    return np.maximum(radial * (angular + noise), 0.0)


def minimize_reduced(prob: ReducedProblem, start: np.ndarray,
                     config: SolverConfig = SolverConfig()) -> SolveReport:
    """Preconditioned conjugate-gradient descent of ``E_hat`` on its Nehari set."""
    g = prob.grid
    solve = g.helmholtz_solver(1.0, prob.k)

    def retract(v):
        return nehari_scale_reduced(prob, v) * v

    u = retract(g.check(start))
    E = energy_reduced(prob, u)
    energies = [E]
    tau = config.step0
    prev = None
    for it in range(config.max_iter + 1):
        r = reduced_residual_field(prob, u)
        rnorm = residual_norm(g, r)
        if rnorm <= config.tol:
            return _reduced_report(prob, u, it, True, "converged", energies)
        if it == config.max_iter:
            break
        G = solve(r)
        rG = fsum(g.weights * r * G)
        D = G
        if config.conjugate and prev is not None:
            r0, G0, D0 = prev
            b = max(0.0, (rG - fsum(g.weights * r0 * G)) / fsum(g.weights * r0 * G0))
            D = G + b * D0
            if fsum(g.weights * r * D) <= 0.1 * rG:
                D = G
        result = None
        for direction in ([D, G] if D is not G else [G]):
            def step(t, direction=direction):
                trial = retract(u - t * direction)
                return trial, energy_reduced(prob, trial)

            found = backtracking_search(step, lambda v: reduced_residual(prob, v), E,
                                        2.0 * fsum(g.weights * r * direction), rnorm, tau, config)
            if found is not None:
                result = found + (direction,)
                break
        if result is None:
            return _reduced_report(prob, u, it, False, "line search failed", energies)
        u, E, t, first, D = result
        energies.append(E)
        prev = (r, G, D)
        tau = min(2.0 * t, config.step_max) if first else t
    return _reduced_report(prob, u, config.max_iter, False, "max iterations", energies)


def _reduced_report(prob, u, it, converged, reason, energies) -> SolveReport:
    fg = prob.full_grid()
    U = psi_k(u, prob.k)
    n = fg.n_theta
    dk = max(invariance_defect(fg, c, n // prob.k) for c in U)
    dref = min(invariance_defect(fg, c, n // (2 * prob.k)) for c in U)
    P = prob.params
    neh = nehari_residuals(fg, P, U, "positive")
    return SolveReport(
        state=u[None].copy(), energy=energy_reduced(prob, u),
        nehari_max=float(np.max(np.abs(neh.residuals))),
        gradient_norm=reduced_residual(prob, u),
        pde_residual=residual_norm(fg, gradient(fg, P, U, "nodal")),
        iterations=it, defect_k=dk, defect_refined=dref, converged=converged,
        reason=reason, cls=prob.cls, energies=energies)


def ground_state_reduced(prob: ReducedProblem, config: SolverConfig = SolverConfig()) -> SolveReport:
    """Lowest-energy converged state over ``config.starts`` seeded descents."""
    best = None
    last = None
    for s in range(max(config.starts, 1)):
        rng = np.random.default_rng([config.seed, s])
        try:
            rep = minimize_reduced(prob, reduced_seed(prob, rng), config)
        except InfeasibleScaling:
            continue
        last = rep
        if rep.converged and (best is None or rep.energy < best.energy):
            best = rep
    if best is not None:
        return best
    if last is not None:
        return last
    raise InfeasibleScaling("no seed could be scaled onto the Nehari set")


# ---------------------------------------------------------------------------
# polarization and symmetry of minimizers

def _halfspace_mask(grid: PolarGrid, H: HalfSpace) -> tuple[np.ndarray, np.ndarray]:
    """Reflection index map and boolean mask of angular indices strictly inside ``H``."""
    n = grid.n_theta
    a2 = H.axis_index % (2 * n)
    refl = (a2 - np.arange(n)) % n  # m -> axis_index - m (axis at a2/2 grid steps)
    offset = (2 * np.arange(n) - a2) % (2 * n)  # twice the angle from the axis
    inside = (offset > 0) & (offset < n)
    if H.side == -1:
        inside = (offset > n)
    return refl, inside


def polarize(grid: PolarGrid, u: np.ndarray, H: HalfSpace) -> np.ndarray:
    """``max(u, u o sigma_H)`` inside ``H``, ``min`` outside, ``u`` on the axis."""
    u = grid.check(u)
    refl, inside = _halfspace_mask(grid, H)
    v = u[..., refl]
    out = np.minimum(u, v)
    out[..., inside] = np.maximum(u, v)[..., inside]
    return out


def energy_parts(prob: ReducedProblem, u: np.ndarray) -> dict:
    """``G``, ``P``, ``Q`` with ``E_hat = G + P + Q/2`` and ``Q = -beta int u^2 u^2(-x)``."""
    g = prob.grid
    up = np.maximum(u, 0.0)
    u2 = u * u
    G = dirichlet_form(g, u, prob.k)
    P = math.fsum([integrate(g, u2), -0.5 * integrate(g, _sq(up * up))])
    Q = -prob.beta * integrate(g, u2 * antipodal(g, u2))
    return {"G": G, "P": P, "Q": Q, "E": energy_reduced(prob, u)}


@dataclass
class PolarizationReport:
    before: dict
    after: dict
    scale: float
    tol: float

    @property
    def deltas(self) -> dict:
        return {key: self.after[key] - self.before[key] for key in self.before}

    @property
    def energy_ok(self) -> bool:
        return self.after["E"] <= self.before["E"] + self.tol * self.scale

    @property
    def q_ok(self) -> bool:
        return self.after["Q"] <= self.before["Q"] + self.tol * self.scale

    @property
    def g_ok(self) -> bool:
        return self.after["G"] <= self.before["G"] + self.tol * self.scale

    @property
    def p_equal(self) -> bool:
        return abs(self.after["P"] - self.before["P"]) <= 1e-12 * self.scale

    @property
    def ok(self) -> bool:
        return self.energy_ok and self.q_ok and self.g_ok and self.p_equal


def polarization_inequality_check(prob: ReducedProblem, u: np.ndarray, H: HalfSpace,
                                  tol: float = 1e-10) -> PolarizationReport:
    """Energy parts of ``u`` and of its polarization.

    ``scale`` is the sum of the absolute values of all terms of ``E_hat(u)``.
    The ``Q`` inequality relies on ``u >= 0``; for sign-changing fields the
    squares are not ordered like the values and it can fail.
    """
    before = energy_parts(prob, u)
    after = energy_parts(prob, polarize(prob.grid, u, H))
    up = np.maximum(u, 0.0)
    g = prob.grid
    scale = (before["G"] + integrate(g, u * u) + 0.5 * integrate(g, _sq(up * up))
             + 0.5 * abs(before["Q"]))
    return PolarizationReport(before, after, max(scale, 1e-300), tol)


def _arc_violation(ring: np.ndarray, start: int, n: int, direction: int) -> float:
    idx = (start + direction * np.arange(n // 2 + 1)) % n
    inc = np.diff(ring[..., idx], axis=-1)
    return np.sum(np.maximum(inc, 0.0), axis=-1)


def foliated_schwarz_defect(grid: PolarGrid, u: np.ndarray) -> tuple[float, float]:
    """Smallest angular-monotonicity violation over grid-aligned axes.

    For an axis ``e`` each ring is scanned from ``e`` to ``e + pi`` along both
    arcs, summing increases.  Rings are combined in the ``L2`` sense,
    ``sqrt(sum_i 2 pi r_i dr v_i^2)``.  Returns ``(defect, axis angle)``; the
    defect is zero iff ``u`` is non-increasing in the angle to some axis on
    every ring.
    """
    u = grid.check(u)
    n = grid.n_theta
    ring_w = 2 * math.pi * grid.r * grid.dr
    best, best_axis = math.inf, 0.0
    for a in range(n):
        # axis on node a
        v_node = _arc_violation(u, a, n, 1) + _arc_violation(u, a, n, -1)
        # axis half way between a and a+1: arcs a+1 -> a+1+n/2-1 and a -> a-n/2+1
        idx_up = (a + 1 + np.arange(n // 2)) % n
        idx_dn = (a - np.arange(n // 2)) % n
        v_half = (np.sum(np.maximum(np.diff(u[:, idx_up], axis=-1), 0.0), axis=-1)
                  + np.sum(np.maximum(np.diff(u[:, idx_dn], axis=-1), 0.0), axis=-1))
        for viol, axis in ((v_node, a), (v_half, a + 0.5)):
            d = math.sqrt(fsum(ring_w * viol * viol))
            if d < best:
                best, best_axis = d, axis * grid.dtheta
    return best, best_axis


# ---------------------------------------------------------------------------
# minimal period

@dataclass
class PeriodReport:
    k: int
    component_periods: list
    reduced_period: object
    defects: list
    reduced_defects: dict
    foliated_defect: float
    ground_state: SolveReport = field(repr=False, default=None)
    threshold: float = 0.01
    tol: float = 1e-6

    @property
    def passed(self) -> bool:
        if not (self.ground_state is not None and self.ground_state.converged):
            return False
        if self.reduced_period != 1 or any(m != self.k for m in self.component_periods):
            return False
        for table in self.defects:
            if table[self.k] >= self.tol:
                return False
            for m, d in table.items():
                if m > self.k and m % self.k == 0 and d <= self.threshold:
                    return False
        return True

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "passed": self.passed,
            "component_periods": [str(m) for m in self.component_periods],
            "reduced_period": str(self.reduced_period),
            "defects": [{str(m): d for m, d in t.items()} for t in self.defects],
            "reduced_defects": {str(m): d for m, d in self.reduced_defects.items()},
            "foliated_defect": self.foliated_defect,
        }


def minimal_period_theorem_check(prob: ReducedProblem, config: SolverConfig = SolverConfig(),
                                 tol: float = 1e-6, threshold: float = 0.01,
                                 ground_state: SolveReport | None = None) -> PeriodReport:
    """Compute (or reuse) the reduced ground state and measure angular periods.

    Components of ``Psi_k u`` should have minimal period exactly ``2*pi/k`` and
    ``u`` itself no period shorter than ``2*pi``.
    """
    rep = ground_state if ground_state is not None else ground_state_reduced(prob, config)
    u = rep.state[0]
    fg = prob.full_grid()
    U = psi_k(u, prob.k)
    n = fg.n_theta
    tables = [{m: invariance_defect(fg, c, n // m) for m in range(1, n + 1) if n % m == 0}
              for c in U]
    periods = [minimal_period(fg, c, tol) for c in U]
    g = prob.grid
    red_table = {m: invariance_defect(g, u, g.n_theta // m)
                 for m in range(1, g.n_theta + 1) if g.n_theta % m == 0}
    fs, _ = foliated_schwarz_defect(g, u)
    return PeriodReport(prob.k, periods, minimal_period(g, u, tol), tables, red_table, fs,
                        rep, threshold, tol)


def pullback_class_check(prob: ReducedProblem, u: np.ndarray) -> float:
    """Largest deviation of ``Psi_k u`` from the positive class of order ``k`` (exactly 0)."""
    return class_defect(prob.full_grid(), psi_k(u, prob.k), prob.cls)
