"""Cell-centred polar grids on discs and annuli.

Fields are plain ``ndarray`` objects whose last two axes are ``(n_r, n_theta)``;
a state with ``N`` components is an array of shape ``(N, n_r, n_theta)``.
Rotations and reflections act by index permutation only, so membership of a
field in a symmetry subspace is decided exactly rather than up to
interpolation error.

Radial nodes sit at ``r_i = r_inner + (i + 1/2) dr``.  Homogeneous Dirichlet
data is imposed on the boundary faces with a half-cell flux, and on a disc the
face at ``r = 0`` has zero length, so the centre closure carries no flux.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


def fsum(values: np.ndarray) -> float:
    """Correctly rounded sum; independent of the order of ``values``."""
    return math.fsum(np.ravel(values).tolist())


@dataclass(frozen=True)
class GridSpec:
    r_inner: float = 0.0
    r_outer: float = 1.0
    n_r: int = 32
    n_theta: int = 48
    alignment_order: int = 4

    def with_n_theta(self, n_theta: int) -> "GridSpec":
        return GridSpec(self.r_inner, self.r_outer, self.n_r, n_theta,
                        self.alignment_order)


class PolarGrid:
    """Polar discretisation of a disc (``r_inner == 0``) or an annulus."""

    def __init__(self, spec: GridSpec):
        if spec.r_inner < 0 or spec.r_outer <= spec.r_inner:
            raise ValueError(
                f"need 0 <= r_inner < r_outer, got {spec.r_inner}, {spec.r_outer}")
        if spec.n_r < 1 or spec.n_theta < 1 or spec.alignment_order < 1:
            raise ValueError("n_r, n_theta and alignment_order must be positive")
        if spec.n_theta % 2:
            raise ValueError(f"n_theta={spec.n_theta} must be even")
        if spec.n_theta % spec.alignment_order:
            raise ValueError(
                f"n_theta={spec.n_theta} is not divisible by "
                f"alignment_order={spec.alignment_order}")
        self.spec = spec
        self.n_r = spec.n_r
        self.n_theta = spec.n_theta
        self.r_inner = float(spec.r_inner)
        self.r_outer = float(spec.r_outer)
        self.dr = (self.r_outer - self.r_inner) / self.n_r
        self.dtheta = 2.0 * math.pi / self.n_theta
        self.r = self.r_inner + (np.arange(self.n_r) + 0.5) * self.dr
        self.theta = np.arange(self.n_theta) * self.dtheta
        self.ring_weights = self.r * self.dr * self.dtheta
        self.weights = np.repeat(self.ring_weights[:, None], self.n_theta, axis=1)

        # face conductances a = r_face / distance; flux = a * (u_out - u_in)
        inner = self.r_inner + np.arange(1, self.n_r) * self.dr
        self.face_interior = inner / self.dr
        self.face_outer = self.r_outer / (0.5 * self.dr)
        self.face_inner = self.r_inner / (0.5 * self.dr)  # zero on a disc
        self._helmholtz = {}

    def __getstate__(self):
        # factorisations are not picklable; workers rebuild them on demand
        state = dict(self.__dict__)
        state["_helmholtz"] = {}
        state.pop("_laplacian_parts", None)
        return state

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_r, self.n_theta)

    @property
    def is_ball(self) -> bool:
        return self.r_inner == 0.0

    @property
    def area(self) -> float:
        return math.pi * (self.r_outer ** 2 - self.r_inner ** 2)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(R, Theta)`` node arrays of shape ``(n_r, n_theta)``."""
        return np.meshgrid(self.r, self.theta, indexing="ij")

    def cartesian(self) -> tuple[np.ndarray, np.ndarray]:
        R, T = self.mesh()
        return R * np.cos(T), R * np.sin(T)

    def check(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape[-2:] != self.shape:
            raise ValueError(f"field shape {f.shape} does not match grid {self.shape}")
        return f

    def steps_for(self, order: int) -> int:
        """Index shift realising a rotation by ``2*pi/order``."""
        if order < 1 or self.n_theta % order:
            raise ValueError(
                f"rotation by 2*pi/{order} is not a grid shift for n_theta={self.n_theta}")
        return self.n_theta // order

    @cached_property
    def _laplacian_parts(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        n_r, n_t = self.shape
        idx = np.arange(n_r * n_t).reshape(n_r, n_t)
        rows, cols, vals = [], [], []
        inv_area = 1.0 / (self.r * self.dr)
        for i in range(n_r - 1):
            a = self.face_interior[i]
            for (p, q) in ((i, i + 1), (i + 1, i)):
                rows += [idx[p], idx[p]]
                cols += [idx[q], idx[p]]
                vals += [np.full(n_t, a * inv_area[p]), np.full(n_t, -a * inv_area[p])]
        rows.append(idx[n_r - 1])
        cols.append(idx[n_r - 1])
        vals.append(np.full(n_t, -self.face_outer * inv_area[n_r - 1]))
        if not self.is_ball:
            rows.append(idx[0])
            cols.append(idx[0])
            vals.append(np.full(n_t, -self.face_inner * inv_area[0]))
        N = n_r * n_t
        radial = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(N, N))
        c = (1.0 / (self.r * self.dtheta) ** 2)[:, None] * np.ones(n_t)
        plus = np.roll(idx, -1, axis=1)
        minus = np.roll(idx, 1, axis=1)
        angular = sp.csr_matrix(
            (np.concatenate([c.ravel(), c.ravel(), -2 * c.ravel()]),
             (np.concatenate([idx.ravel()] * 3),
              np.concatenate([plus.ravel(), minus.ravel(), idx.ravel()]))),
            shape=(N, N))
        return radial, angular

    def laplacian_matrix(self, k: int = 1) -> sp.csr_matrix:
        """Sparse matrix of ``laplacian_k`` acting on raveled fields."""
        radial, angular = self._laplacian_parts
        return (radial + (k * k) * angular).tocsr()

    def helmholtz_solver(self, lam: float, k: int = 1):
        """Return ``solve(b)`` for ``(-laplacian_k + lam) x = b`` (cached LU)."""
        key = (float(lam), int(k))
        if key not in self._helmholtz:
            A = (-self.laplacian_matrix(k) + lam * sp.identity(self.n_r * self.n_theta)).tocsc()
            self._helmholtz[key] = spla.splu(A)
        lu = self._helmholtz[key]

        def solve(b: np.ndarray) -> np.ndarray:
            b = self.check(b)
            flat = b.reshape(-1, self.n_r * self.n_theta).T
            return lu.solve(np.ascontiguousarray(flat)).T.reshape(b.shape)

        return solve


def build_grid(spec: GridSpec) -> PolarGrid:
    return PolarGrid(spec)


def integrate(grid: PolarGrid, f: np.ndarray) -> float:
    """Midpoint quadrature ``sum w_im f_im`` over the last two axes (summed)."""
    f = grid.check(f)
    return fsum(grid.weights * f)


def inner(grid: PolarGrid, f: np.ndarray, g: np.ndarray) -> float:
    return integrate(grid, np.asarray(f) * np.asarray(g))


def l2_norm(grid: PolarGrid, f: np.ndarray) -> float:
    return math.sqrt(max(integrate(grid, np.square(f)), 0.0))


def laplacian_k(grid: PolarGrid, f: np.ndarray, k: int = 1) -> np.ndarray:
    """Second-order stencil of ``(1/r) d_r(r d_r u) + (k^2/r^2) d_theta^2 u``.

    Works on any array whose trailing axes match the grid.
    """
    f = grid.check(f)
    flux = np.zeros(f.shape[:-2] + (grid.n_r + 1, grid.n_theta))
    flux[..., 1:-1, :] = grid.face_interior[:, None] * np.diff(f, axis=-2)
    flux[..., -1, :] = -grid.face_outer * f[..., -1, :]
    flux[..., 0, :] = grid.face_inner * f[..., 0, :]
    radial = np.diff(flux, axis=-2) / (grid.r * grid.dr)[:, None]
    second = np.roll(f, -1, axis=-1) - 2.0 * f + np.roll(f, 1, axis=-1)
    angular = (k * k) * second / ((grid.r * grid.dtheta) ** 2)[:, None]
    return radial + angular


def dirichlet_form(grid: PolarGrid, f: np.ndarray, k: int = 1) -> float:
    """``int |d_r f|^2 + (k^2/r^2)|d_theta f|^2`` as the quadratic form of ``-laplacian_k``.

    Radial differences live on the cell faces (half-node metric); angular
    differences are periodic and centred on the half-angle ``theta_{m+1/2}``.
    """
    f = grid.check(f)
    dth = grid.dtheta
    parts = [
        (grid.face_interior[:, None] * dth) * np.square(np.diff(f, axis=-2)),
        (grid.face_outer * dth) * np.square(f[..., -1, :]),
        ((k * k) * grid.dr / (grid.r * dth))[:, None]
        * np.square(np.roll(f, -1, axis=-1) - f),
    ]
    if not grid.is_ball:
        parts.append((grid.face_inner * dth) * np.square(f[..., 0, :]))
    return fsum(np.concatenate([p.ravel() for p in parts]))


def h1_norm_sq(grid: PolarGrid, f: np.ndarray, lam: float) -> float:
    if lam <= 0:
        raise ValueError("lambda must be positive")
    return dirichlet_form(grid, f, 1) + lam * integrate(grid, np.square(f))


def rotate_field(grid: PolarGrid, f: np.ndarray, steps: int) -> np.ndarray:
    """Rotation by ``steps * dtheta``: ``(R f)(r, theta) = f(r, theta - steps*dtheta)``."""
    f = grid.check(f)
    return np.roll(f, int(steps) % grid.n_theta, axis=-1)


def antipodal(grid: PolarGrid, f: np.ndarray) -> np.ndarray:
    if grid.n_theta % 2:
        raise ValueError("antipodal map needs an even n_theta")
    return rotate_field(grid, f, grid.n_theta // 2)


def reflection_index(grid: PolarGrid, axis_index: int) -> np.ndarray:
    return (2 * int(axis_index) - np.arange(grid.n_theta)) % grid.n_theta


def reflect_field(grid: PolarGrid, f: np.ndarray, axis_index: int) -> np.ndarray:
    """Reflection across the line through the origin at angle ``axis_index*dtheta``.

    Acts on angular indices as ``m -> (2*axis_index - m) mod n_theta``.
    """
    f = grid.check(f)
    return f[..., reflection_index(grid, axis_index)]
