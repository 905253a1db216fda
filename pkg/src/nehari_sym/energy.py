"""Discrete energies, gradients and Nehari retraction for the coupled system.

The coupling energy sums over unordered pairs,

    E(U) = sum_j [ 1/2 ||u_j||_j^2 - mu_j/4 int q(u_j)^4 ] - 1/2 sum_{i<j} beta_ij int u_i^2 u_j^2,

with ``q(u) = u^+`` on the positive branch and ``q(u) = u`` on the nodal
branch.  With this normalisation the Euler-Lagrange equation is exactly
``-Lap u_j + lam_j u_j = mu_j q(u_j)^3 + sum_{k!=j} beta_jk u_j u_k^2`` and
``E = 1/4 sum_j ||u_j||_j^2`` on the Nehari set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import PolarGrid, dirichlet_form, fsum, integrate, laplacian_k
from .symmetry import Branch, SystemParams


class InfeasibleRetraction(ValueError):
    """No positive componentwise scaling puts the state on the Nehari set."""


def _pos(U: np.ndarray, branch: Branch) -> np.ndarray:
    if branch == "positive":
        return np.maximum(U, 0.0)
    if branch == "nodal":
        return U
    raise ValueError(f"unknown branch {branch!r}")


def _fourth(x: np.ndarray) -> np.ndarray:
    x2 = x * x
    return x2 * x2


def _check(grid: PolarGrid, params: SystemParams, U: np.ndarray) -> np.ndarray:
    U = grid.check(U)
    if U.ndim != 3 or U.shape[0] != params.N:
        raise ValueError(f"state must have shape ({params.N}, {grid.n_r}, {grid.n_theta})")
    return U


def coupling_matrix(grid: PolarGrid, U: np.ndarray) -> np.ndarray:
    """``C[j, k] = int u_j^2 u_k^2``."""
    sq = U * U
    N = U.shape[0]
    C = np.empty((N, N))
    for j in range(N):
        for k in range(j, N):
            C[j, k] = C[k, j] = integrate(grid, sq[j] * sq[k])
    return C


def component_norms(grid: PolarGrid, params: SystemParams, U: np.ndarray) -> np.ndarray:
    """``||u_j||_j^2 = int |grad u_j|^2 + lam_j u_j^2``."""
    return np.array([dirichlet_form(grid, U[j]) + params.lam[j] * integrate(grid, U[j] * U[j])
                     for j in range(U.shape[0])])


def quartic(grid: PolarGrid, U: np.ndarray, branch: Branch) -> np.ndarray:
    P = _pos(U, branch)
    return np.array([integrate(grid, _fourth(P[j])) for j in range(U.shape[0])])


def energy(grid: PolarGrid, params: SystemParams, U: np.ndarray, branch: Branch) -> float:
    U = _check(grid, params, U)
    norms = component_norms(grid, params, U)
    quart = quartic(grid, U, branch)
    C = coupling_matrix(grid, U)
    iu = np.triu_indices(params.N, 1)
    terms = list(0.5 * norms) + list(-0.25 * params.mu * quart) + list(-0.5 * params.beta[iu] * C[iu])
    return math.fsum(terms)


def energy_positive(grid: PolarGrid, params: SystemParams, U: np.ndarray) -> float:
    return energy(grid, params, U, "positive")


def energy_nodal(grid: PolarGrid, params: SystemParams, U: np.ndarray) -> float:
    return energy(grid, params, U, "nodal")


def gradient(grid: PolarGrid, params: SystemParams, U: np.ndarray, branch: Branch) -> np.ndarray:
    """L2 (quadrature) representative of dE, i.e. the strong-form residual."""
    U = _check(grid, params, U)
    P = _pos(U, branch)
    sq = U * U
    off = params.beta - np.diag(np.diag(params.beta))
    cross = np.einsum("jk,k...->j...", off, sq)
    return (-laplacian_k(grid, U) + params.lam[:, None, None] * U
            - params.mu[:, None, None] * P * P * P - U * cross)


def residual_norm(grid: PolarGrid, G: np.ndarray) -> float:
    """L2 norm of a (multi-component) field."""
    return math.sqrt(max(fsum(grid.weights * G * G), 0.0))


@dataclass
class NehariReport:
    residuals: np.ndarray
    norms: np.ndarray
    feasible: bool


def nonzero_components(grid: PolarGrid, U: np.ndarray) -> np.ndarray:
    thresh = 1e-8 * math.sqrt(grid.area)
    return np.array([math.sqrt(integrate(grid, u * u)) > thresh for u in U])


def nehari_residuals(grid: PolarGrid, params: SystemParams, U: np.ndarray, branch: Branch,
                     tol: float = 1e-8) -> NehariReport:
    """``dE(U)[u_j e_j] = ||u_j||_j^2 - mu_j int q(u_j)^4 - sum_{k!=j} beta_jk int u_j^2 u_k^2``."""
    U = _check(grid, params, U)
    norms = component_norms(grid, params, U)
    quart = quartic(grid, U, branch)
    C = coupling_matrix(grid, U)
    res = np.array([
        math.fsum([norms[j], -params.mu[j] * quart[j]]
                  + [-params.beta[j, k] * C[j, k] for k in range(params.N) if k != j])
        for j in range(params.N)])
    feasible = bool(np.all(nonzero_components(grid, U)) and np.all(np.abs(res) <= tol))
    return NehariReport(res, norms, feasible)


def nehari_system(grid: PolarGrid, params: SystemParams, U: np.ndarray,
                  branch: Branch) -> tuple[np.ndarray, np.ndarray]:
    """Matrix ``M`` and right side ``d`` of the linear system for ``s_j = t_j^2``."""
    U = _check(grid, params, U)
    C = coupling_matrix(grid, U)
    M = params.beta * C
    np.fill_diagonal(M, params.mu * quartic(grid, U, branch))
    d = component_norms(grid, params, U)
    return M, d


def _solve_positive(M: np.ndarray, d: np.ndarray, gap: float = 1e-10) -> np.ndarray:
    off = M - np.diag(np.diag(M))
    diag = np.diag(M)
    if np.any(diag <= 0):
        raise InfeasibleRetraction("a component has no positive quartic mass")
    if not np.any(off):
        return d / diag
    scale = 1.0 / np.sqrt(diag)
    Mn = scale[:, None] * M * scale[None, :]
    if np.all(off <= 0):
        # Z-matrix: a positive solution exists iff M is a nonsingular M-matrix,
        # i.e. (being symmetric) positive definite
        if np.min(np.linalg.eigvalsh(0.5 * (Mn + Mn.T))) <= gap:
            raise InfeasibleRetraction("scaling matrix is not positive definite")
        s = np.linalg.solve(M, d)
        if np.all(s > 0):
            return s
        raise InfeasibleRetraction("no positive solution of the scaling system")
    s = None
    if np.linalg.cond(Mn) < 1e12:
        s = np.linalg.solve(M, d)
        if np.all(s > 0):
            return s
    return _damped_newton(M, d, s)


def _damped_newton(M: np.ndarray, d: np.ndarray, s0, max_iter: int = 100) -> np.ndarray:
    """Newton on ``F(y) = M exp(y) - d`` (keeps ``s = exp(y)`` positive)."""
    y = np.log(np.abs(s0)) if s0 is not None and np.all(np.isfinite(s0)) and np.all(s0 != 0) \
        else np.log(d / np.diag(M))
    for _ in range(max_iter):
        s = np.exp(y)
        F = M @ s - d
        if np.max(np.abs(F)) <= 1e-13 * np.max(np.abs(d)):
            return s
        J = M * s[None, :]
        try:
            step = np.linalg.lstsq(J, -F, rcond=None)[0]
        except np.linalg.LinAlgError:
            break
        t = 1.0
        f0 = np.linalg.norm(F)
        while t > 1e-8:
            if np.linalg.norm(M @ np.exp(y + t * step) - d) < (1 - 1e-4 * t) * f0:
                break
            t *= 0.5
        else:
            break
        y = y + t * step
    raise InfeasibleRetraction("damped Newton did not find a positive scaling")


def nehari_scale(grid: PolarGrid, params: SystemParams, U: np.ndarray,
                 branch: Branch) -> np.ndarray:
    """Positive ``t`` with ``dE(t U)[t_j u_j e_j] = 0`` for every ``j``.

    Raises :class:`InfeasibleRetraction` when no positive solution exists and
    ``ValueError`` when a component vanishes.
    """
    U = _check(grid, params, U)
    if not np.all(nonzero_components(grid, U)):
        raise ValueError("every component must be nonzero")
    M, d = nehari_system(grid, params, U, branch)
    return np.sqrt(_solve_positive(M, d))


def retract(grid: PolarGrid, params: SystemParams, U: np.ndarray, branch: Branch) -> np.ndarray:
    t = nehari_scale(grid, params, U, branch)
    return t[:, None, None] * U


def lambda_scaling(grid: PolarGrid, params: SystemParams, U: np.ndarray) -> np.ndarray:
    """Closed form ``||u_j||_j / (sqrt(mu_j) ||u_j^+||_{L4}^2)`` for disjoint supports."""
    U = _check(grid, params, U)
    norms = component_norms(grid, params, U)
    quart = quartic(grid, U, "positive")
    return np.sqrt(norms) / (np.sqrt(params.mu) * np.sqrt(quart))
