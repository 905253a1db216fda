import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nehari_sym.energy import (InfeasibleRetraction, energy, energy_nodal, energy_positive,
                               gradient, lambda_scaling, nehari_residuals, nehari_scale,
                               nehari_system, retract)
from nehari_sym.grid import dirichlet_form, integrate
from nehari_sym.symmetry import SymmetryClass, SystemParams, project_class, sigma_permute

from conftest import bump, make_grid, random_field


def state(grid, rng, N=2, **kw):
    return np.stack([random_field(grid, rng, **kw) for _ in range(N)])


def disjoint_state(grid, scale=(1.0, 1.0)):
    _, T = grid.mesh()
    b = bump(grid)
    return np.stack([scale[0] * np.maximum(np.sin(T), 0) ** 2 * b,
                     scale[1] * np.maximum(-np.sin(T), 0) ** 2 * b])


def fd_error(grid, params, U, V, branch, h=1e-5):
    fd = (energy(grid, params, U + h * V, branch) - energy(grid, params, U - h * V, branch)) / (2 * h)
    ip = integrate(grid, np.sum(gradient(grid, params, U, branch) * V, axis=0))
    return abs(fd - ip) / max(abs(ip), 1e-12)


class TestEnergy:
    @pytest.mark.parametrize("branch", ["positive", "nodal"])
    def test_zero(self, grid, params, branch):
        Z = np.zeros((2,) + grid.shape)
        assert energy(grid, params, Z, branch) == 0.0
        assert np.array_equal(gradient(grid, params, Z, branch), Z)

    def test_sigma_invariant(self, grid, params, rng):
        for _ in range(5):
            U = state(grid, rng)
            E = energy_positive(grid, params, U)
            assert abs(energy_positive(grid, params, sigma_permute(U, params)) - E) <= 1e-12 * abs(E)

    def test_single_component_term_oracle(self, grid):
        P = SystemParams(2, 2, [1.5, 1.5], [0.7, 0.7], 0.0)
        u = bump(grid) * 1.3
        U = np.stack([u, np.zeros_like(u)])
        R, _ = grid.mesh()
        # independent quadrature of each term with a plain numpy sum
        w = R * grid.dr * grid.dtheta
        grad = dirichlet_form(grid, u)
        want = 0.5 * (grad + 1.5 * np.sum(w * u * u)) - 0.7 / 4 * np.sum(w * u ** 4)
        assert math.isclose(energy_positive(grid, P, U), want, rel_tol=1e-13)

    def test_coupling_counts_unordered_pairs(self, grid, params):
        u = bump(grid)
        U = np.stack([u, u])
        base = SystemParams.two_component(0.0)
        diff = energy_positive(grid, params, U) - energy_positive(grid, base, U)
        assert math.isclose(diff, 0.5 * integrate(grid, u ** 4), rel_tol=1e-13)

    def test_nodal_even(self, grid, params, rng):
        U = state(grid, rng)
        assert energy_nodal(grid, params, -U) == energy_nodal(grid, params, U)

    def test_nodal_equals_positive_on_nonnegative(self, grid, params, rng):
        U = state(grid, rng, nonnegative=True)
        assert energy_nodal(grid, params, U) == energy_positive(grid, params, U)

    def test_positive_ignores_negative_part_in_quartic(self, grid, params):
        u = bump(grid)
        U = np.stack([-u, u])
        P0 = SystemParams.two_component(0.0)
        norms = 0.5 * sum(dirichlet_form(grid, c) + integrate(grid, c * c) for c in U)
        assert math.isclose(energy_positive(grid, P0, U), norms - 0.25 * integrate(grid, u ** 4),
                            rel_tol=1e-13)

    def test_shape_check(self, grid, params):
        with pytest.raises(ValueError):
            energy_positive(grid, params, np.zeros((3,) + grid.shape))


class TestGradient:
    @pytest.mark.parametrize("branch", ["positive", "nodal"])
    def test_finite_differences(self, params, rng, branch):
        g = make_grid(32, 48)
        for _ in range(20):
            U = 2 * state(g, rng)
            V = state(g, rng)
            assert fd_error(g, params, U, V, branch) <= 1e-6

    def test_finite_differences_general_params(self, rng):
        g = make_grid(12, 24, 0.3, 1.2)
        beta = np.array([[1, -0.4, -0.3], [-0.4, 2, -0.2], [-0.3, -0.2, 0.5]])
        P = SystemParams(3, 3, [1, 2, 3], [1, 2, 0.5], beta)
        for _ in range(5):
            U, V = state(g, rng, 3), state(g, rng, 3)
            assert fd_error(g, P, U, V, "positive") <= 1e-6

    def test_residual_inner_product_identity(self, grid, params, rng):
        for branch in ("positive", "nodal"):
            U = state(grid, rng)
            rep = nehari_residuals(grid, params, U, branch)
            G = gradient(grid, params, U, branch)
            for j in range(2):
                ip = integrate(grid, G[j] * U[j])
                assert abs(rep.residuals[j] - ip) <= 1e-10 * max(1.0, abs(ip))


class TestNehari:
    def test_zero_component_infeasible(self, grid, params):
        U = disjoint_state(grid)
        U[1] = 0.0
        assert not nehari_residuals(grid, params, U, "positive").feasible
        with pytest.raises(ValueError):
            nehari_scale(grid, params, U, "positive")

    def test_lambda_formula_on_disjoint_supports(self, grid, params):
        U = disjoint_state(grid, (0.3, 2.0))
        t = nehari_scale(grid, params, U, "positive")
        # closed form ||u_j|| / ||u_j^+||_{L4}^2 (mu = 1)
        want = [math.sqrt(dirichlet_form(grid, u) + integrate(grid, u * u))
                / math.sqrt(integrate(grid, np.maximum(u, 0) ** 4)) for u in U]
        assert np.allclose(t, want, rtol=1e-13)
        assert np.allclose(lambda_scaling(grid, params, U), want, rtol=1e-13)
        rep = nehari_residuals(grid, params, t[:, None, None] * U, "positive", tol=1e-10)
        assert rep.feasible and np.max(np.abs(rep.residuals)) <= 1e-10

    def test_diagonal_state_infeasible(self, grid, params, rng):
        for _ in range(10):
            u = random_field(grid, rng, nonnegative=True)
            with pytest.raises(InfeasibleRetraction):
                nehari_scale(grid, params, np.stack([u, u]), "positive")

    def test_decoupled_overlap(self, grid, rng):
        P = SystemParams(2, 2, [1, 1], [2, 3], 0.0)
        U = state(grid, rng, nonnegative=True)
        t = nehari_scale(grid, P, U, "positive")
        s = [(dirichlet_form(grid, u) + integrate(grid, u * u)) / (mu * integrate(grid, u ** 4))
             for u, mu in zip(U, (2, 3))]
        assert np.allclose(t ** 2, s, rtol=1e-13)

    def test_retraction_fixes_nehari_set(self, grid, params, rng):
        cls = SymmetryClass("positive", 1)
        for _ in range(5):
            U0 = disjoint_state(grid) + 0.05 * state(grid, rng)
            U = retract(grid, params, project_class(grid, U0, cls), "positive")
            t = nehari_scale(grid, params, U, "positive")
            assert np.max(np.abs(t - 1)) <= 1e-8

    def test_energy_on_nehari_set(self, grid, params, rng):
        for branch in ("positive", "nodal"):
            U = disjoint_state(grid) + 0.1 * state(grid, rng)
            V = retract(grid, params, U, branch)
            norms = nehari_residuals(grid, params, V, branch).norms
            assert math.isclose(energy(grid, params, V, branch), 0.25 * norms.sum(), rel_tol=1e-8)

    def test_sigma_equivariance(self, grid, params, rng):
        U = disjoint_state(grid, (1.0, 0.5)) + 0.05 * state(grid, rng)
        t = nehari_scale(grid, params, U, "positive")
        ts = nehari_scale(grid, params, sigma_permute(U, params), "positive")
        assert np.allclose(ts, t[::-1], rtol=1e-12)

    def test_general_system_residuals_vanish(self, grid, rng):
        beta = np.array([[1, -0.3, 0.4], [-0.3, 1, -0.2], [0.4, -0.2, 1]])
        P = SystemParams(3, 3, [1, 1, 1], [1, 1, 1], beta)
        U = state(grid, rng, 3, nonnegative=True)
        t = nehari_scale(grid, P, U, "positive")
        res = nehari_residuals(grid, P, t[:, None, None] * U, "positive").residuals
        norms = nehari_residuals(grid, P, t[:, None, None] * U, "positive").norms
        assert np.all(t > 0) and np.max(np.abs(res) / norms) <= 1e-10

    def test_system_matrix(self, grid, params, rng):
        U = state(grid, rng)
        M, d = nehari_system(grid, params, U, "nodal")
        assert math.isclose(M[0, 1], -integrate(grid, U[0] ** 2 * U[1] ** 2), rel_tol=1e-14)
        assert math.isclose(M[0, 0], integrate(grid, U[0] ** 4), rel_tol=1e-14)
        assert math.isclose(d[1], dirichlet_form(grid, U[1]) + integrate(grid, U[1] ** 2),
                            rel_tol=1e-14)

    @given(a=st.floats(0.1, 10), b=st.floats(0.1, 10), seed=st.integers(0, 10 ** 6))
    @settings(max_examples=25, deadline=None)
    def test_scaling_covariance(self, a, b, seed):
        """Rescaling the input by c divides the returned t by c."""
        g = make_grid(8, 16)
        P = SystemParams.two_component(-1.0)
        r = np.random.default_rng(seed)
        U = disjoint_state(g) + 0.05 * np.stack([random_field(g, r) for _ in range(2)])
        try:
            t = nehari_scale(g, P, U, "positive")
        except InfeasibleRetraction:
            return
        ts = nehari_scale(g, P, np.array([a, b])[:, None, None] * U, "positive")
        assert np.allclose(ts * [a, b], t, rtol=1e-9)
