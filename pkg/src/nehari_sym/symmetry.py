"""Group actions, symmetry classes and structural checks for the coupled system.

Symmetry classes
----------------
``positive`` class of order ``k`` with prime ``p``:
    every component is invariant under rotation by ``2*pi/k`` and, inside each
    block of ``p`` consecutive components, ``u_{j+1} = R_{2*pi/(p*k)} u_j``.
    It is the fixed space of ``g = R_{2*pi/(p*k)} o sigma^{-1}`` (order ``p*k``).
``nodal`` class of order ``k``:
    ``u_j = -R_{pi/k} u_j`` for every component, the fixed space of
    ``g = -R_{pi/k}`` (order ``2*k``).

Projections average over the cyclic group and then rebuild the state from its
fundamental data by index copies, so the output is exactly (bitwise) in the
class and projecting twice changes nothing.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .grid import PolarGrid, l2_norm, rotate_field

Branch = Literal["positive", "nodal"]


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    return all(n % d for d in range(2, int(math.isqrt(n)) + 1))


@dataclass
class SystemParams:
    """Coefficients of ``-Lap u_j + lam_j u_j = mu_j u_j^3 + sum_{k!=j} beta_jk u_j u_k^2``.

    ``beta`` is stored as a full ``N x N`` matrix whose diagonal is overwritten
    by ``mu``.
    """

    N: int
    p: int
    lam: np.ndarray
    mu: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        self.N = int(self.N)
        self.p = int(self.p)
        self.lam = np.asarray(self.lam, dtype=float).reshape(-1)
        self.mu = np.asarray(self.mu, dtype=float).reshape(-1)
        beta = np.array(self.beta, dtype=float)
        if beta.ndim == 0:
            beta = np.full((self.N, self.N), float(beta))
        if beta.shape != (self.N, self.N):
            raise ValueError(f"beta must be {self.N}x{self.N}, got {beta.shape}")
        if self.lam.shape != (self.N,) or self.mu.shape != (self.N,):
            raise ValueError("lam and mu need one entry per component")
        np.fill_diagonal(beta, self.mu)
        self.beta = beta

    @property
    def B(self) -> int:
        return self.N // self.p

    def blocks(self) -> list[range]:
        return [range(b * self.p, (b + 1) * self.p) for b in range(self.B)]

    @classmethod
    def two_component(cls, beta: float = -1.0, lam: float = 1.0, mu: float = 1.0):
        return cls(2, 2, [lam, lam], [mu, mu], [[mu, beta], [beta, mu]])

    def as_dict(self) -> dict:
        return {"N": self.N, "p": self.p, "lambda": self.lam.tolist(),
                "mu": self.mu.tolist(), "beta": self.beta.tolist()}


@dataclass(frozen=True)
class SymmetryClass:
    branch: Branch
    k: int
    p: int = 2

    def __post_init__(self):
        if self.branch not in ("positive", "nodal"):
            raise ValueError(f"unknown branch {self.branch!r}")
        if self.k < 1:
            raise ValueError("k must be a positive integer")
        if self.branch == "positive" and not is_prime(self.p):
            raise ValueError(f"p={self.p} is not prime")

    @property
    def order(self) -> int:
        """Order of the cyclic group whose fixed space is the class."""
        return self.p * self.k if self.branch == "positive" else 2 * self.k

    @property
    def refined_order(self) -> int:
        """``m`` such that class members are *not* ``2*pi/m``-invariant."""
        return self.order

    def nested(self, level: int) -> "SymmetryClass":
        """A subclass contained in this one (``level=0`` is the class itself)."""
        step = self.p if self.branch == "positive" else 2
        return SymmetryClass(self.branch, self.k * (1 + step * level), self.p)


def _block_cycle(params: SystemParams) -> np.ndarray:
    """Permutation ``perm`` with ``(sigma U)[j] = U[perm[j]]``."""
    perm = np.arange(params.N)
    for blk in params.blocks():
        idx = np.array(blk)
        perm[idx] = np.roll(idx, -1)
    return perm


def validate_params(params: SystemParams) -> list[str]:
    """List every violated structural assumption; empty when all hold."""
    out: list[str] = []
    N, p = params.N, params.p
    if not is_prime(p):
        out.append(f"p={p} is not prime")
        return out
    if N % p:
        out.append(f"p={p} does not divide N={N}")
        return out
    lam, mu, beta = params.lam, params.mu, params.beta
    for b, blk in enumerate(params.blocks()):
        vals = lam[list(blk)]
        if np.any(vals <= 0):
            out.append(f"(A) block {b + 1}: lambda must be positive, got {vals.tolist()}")
        if np.any(vals != vals[0]):
            out.append(f"(A) block {b + 1}: lambda not constant, got {vals.tolist()}")
    if np.any(mu <= 0):
        out.append(f"(B) mu must be positive, got {mu.tolist()}")
    if not np.array_equal(beta, beta.T):
        out.append("(B) beta is not symmetric")
    off = beta[~np.eye(N, dtype=bool)]
    if np.any(off > 0):
        out.append("(B) off-diagonal beta must be <= 0")
    for b, blk in enumerate(params.blocks()):
        # conjugate by the cycle of block b only
        q = np.arange(N)
        idx = np.array(blk)
        q[idx] = np.roll(idx, -1)
        conj = beta[np.ix_(q, q)]
        if np.max(np.abs(conj - beta)) > 1e-12:
            out.append(f"(C) beta not invariant under the cyclic shift of block {b + 1}")
    for blk in params.blocks():
        for j in blk:
            total = math.fsum([mu[j]] + [beta[i, j] for i in blk if i != j])
            if total > 0:
                out.append(f"(D) component {j + 1}: mu + sum of in-block beta = {total:.6g} > 0")
    return out


def sigma_permute(state: np.ndarray, params: SystemParams) -> np.ndarray:
    """Blockwise cyclic shift ``(u_1, ..., u_p) -> (u_2, ..., u_p, u_1)``."""
    state = np.asarray(state)
    if state.shape[0] != params.N:
        raise ValueError(f"state has {state.shape[0]} components, expected {params.N}")
    return state[_block_cycle(params)]


def _check_alignment(grid: PolarGrid, order: int) -> int:
    if grid.n_theta % order:
        raise ValueError(
            f"grid with n_theta={grid.n_theta} cannot represent rotations by 2*pi/{order}")
    return grid.n_theta // order


def _exact_mean(stack: np.ndarray) -> np.ndarray:
    # returns stack[0] bitwise when all entries agree
    base = stack[0]
    return base + np.mean(stack - base, axis=0)


def project_class(grid: PolarGrid, state: np.ndarray, cls: SymmetryClass) -> np.ndarray:
    """Orthogonal projection onto the class (average over its cyclic group)."""
    U = grid.check(state)
    n = grid.n_theta
    if cls.branch == "positive":
        p, k = cls.p, cls.k
        if U.shape[0] % p:
            raise ValueError(f"{U.shape[0]} components cannot be split into blocks of {p}")
        step = _check_alignment(grid, p * k)
        period = n // k
        out = np.empty_like(U)
        for b in range(U.shape[0] // p):
            blk = U[b * p:(b + 1) * p]
            # g^s maps u_1 to R^{s} u_{1-s}; collect every preimage of u_1
            images = [np.roll(blk[(-s) % p], s * step, axis=-1) for s in range(p * k)]
            first = _exact_mean(np.stack(images))[..., :period]
            first = np.tile(first, (1, k))
            for l in range(p):
                out[b * p + l] = np.roll(first, l * step, axis=-1)
        return out
    k = cls.k
    step = _check_alignment(grid, 2 * k)
    images = [(-1) ** s * np.roll(U, s * step, axis=-1) for s in range(2 * k)]
    half = _exact_mean(np.stack(images))[..., :step]
    out = np.empty_like(U)
    for s in range(2 * k):
        out[..., s * step:(s + 1) * step] = half if s % 2 == 0 else -half
    return out


def class_defect(grid: PolarGrid, state: np.ndarray, cls: SymmetryClass) -> float:
    """Largest entrywise deviation from class membership (0 iff exactly in class)."""
    U = grid.check(state)
    return float(np.max(np.abs(U - project_class(grid, U, cls)))) if U.size else 0.0


def invariance_defect(grid: PolarGrid, f: np.ndarray, steps: int) -> float:
    """``||f - R f|| / ||f||`` for the rotation by ``steps`` grid angles."""
    f = grid.check(f)
    norm = l2_norm(grid, f)
    diff = l2_norm(grid, f - rotate_field(grid, f, steps))
    return diff / max(norm, 1e-300)


def minimal_period(grid: PolarGrid, f: np.ndarray, tol: float) -> int | str:
    """Largest ``m | n_theta`` with ``f`` invariant under ``2*pi/m``, or ``"radial"``.

    The minimal angular period is then ``2*pi/m``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = grid.n_theta
    if invariance_defect(grid, f, 1) < tol:
        return "radial"
    best = 1
    for m in range(2, n + 1):
        if n % m == 0 and invariance_defect(grid, f, n // m) < tol:
            best = m
    return best


def defect_table(grid: PolarGrid, f: np.ndarray) -> dict[int, float]:
    """Invariance defect for every grid-exact rotation ``2*pi/m``."""
    n = grid.n_theta
    return {m: invariance_defect(grid, f, n // m) for m in range(1, n + 1) if n % m == 0}


# ---------------------------------------------------------------------------
# finite orthogonal groups and admissible pairs

TOL_POINT = 1e-9


def _contains(mats: Sequence[np.ndarray], g: np.ndarray, tol: float = 1e-12) -> bool:
    return any(np.max(np.abs(h - g)) <= tol for h in mats)


@dataclass
class FiniteGroup:
    elements: list

    def __post_init__(self):
        self.elements = [np.asarray(g, dtype=float) for g in self.elements]
        if not self.elements:
            raise ValueError("a group needs at least the identity")
        n = self.elements[0].shape[0]
        if n not in (2, 3) or any(g.shape != (n, n) for g in self.elements):
            raise ValueError("elements must be 2x2 or 3x3 matrices")
        for g in self.elements:
            if np.max(np.abs(g @ g.T - np.eye(n))) > 1e-12:
                raise ValueError("group elements must be orthogonal")
        if not _contains(self.elements, np.eye(n)):
            raise ValueError("group does not contain the identity")
        for g, h in itertools.product(self.elements, repeat=2):
            if not _contains(self.elements, g @ h):
                raise ValueError("elements are not closed under products")
        for g in self.elements:
            if not _contains(self.elements, g.T):
                raise ValueError("elements are not closed under inverses")

    @property
    def dim(self) -> int:
        return self.elements[0].shape[0]

    def __len__(self) -> int:
        return len(self.elements)

    def __contains__(self, g) -> bool:
        return _contains(self.elements, np.asarray(g, dtype=float))

    @classmethod
    def generated_by(cls, generators: Sequence, max_order: int = 1000) -> "FiniteGroup":
        gens = [np.asarray(g, dtype=float) for g in generators]
        n = gens[0].shape[0]
        elems = [np.eye(n)]
        frontier = [np.eye(n)]
        while frontier:
            new = []
            for g in frontier:
                for h in gens:
                    gh = g @ h
                    gh[np.abs(gh) < 1e-15] = 0.0
                    if not _contains(elems, gh):
                        elems.append(gh)
                        new.append(gh)
            if len(elems) > max_order:
                raise ValueError("generators do not span a finite group")
            frontier = new
        return cls(elems)


def rotation_matrix(theta: float, dim: int = 2) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    R = np.eye(dim)
    R[:2, :2] = [[c, -s], [s, c]]
    return R


def orbit(group: FiniteGroup, x0: Sequence[float]) -> np.ndarray:
    """Orbit ``{g x0}`` with points closer than ``1e-9`` merged."""
    x0 = np.asarray(x0, dtype=float)
    if not np.any(x0):
        raise ValueError("x0 must be nonzero")
    pts: list[np.ndarray] = []
    for g in group.elements:
        y = g @ x0
        if not any(np.max(np.abs(y - q)) <= TOL_POINT for q in pts):
            pts.append(y)
    return np.array(pts)


@dataclass
class AdmissiblePairReport:
    normalizer_ok: bool
    power_in_group: bool
    orbit_disjoint: bool
    witness_orbits: list = field(default_factory=list)
    min_orbit_distance: float = math.inf

    @property
    def admissible(self) -> bool:
        return self.normalizer_ok and self.power_in_group and self.orbit_disjoint


def check_admissible(group: FiniteGroup, b: np.ndarray, p: int,
                     x0: Sequence[float]) -> AdmissiblePairReport:
    b = np.asarray(b, dtype=float)
    if np.max(np.abs(b @ b.T - np.eye(b.shape[0]))) > 1e-12:
        raise ValueError("b must be orthogonal")
    normal = all(b @ g @ b.T in group for g in group.elements)
    power = np.linalg.matrix_power(b, p) in group
    x0 = np.asarray(x0, dtype=float)
    orbits = [orbit(group, np.linalg.matrix_power(b, s) @ x0) for s in range(p)]
    dmin = math.inf
    for s, t in itertools.combinations(range(p), 2):
        d = np.min(np.linalg.norm(orbits[s][:, None, :] - orbits[t][None, :, :], axis=-1))
        dmin = min(dmin, float(d))
    disjoint = dmin > TOL_POINT
    return AdmissiblePairReport(normal, power, disjoint, orbits, dmin)
