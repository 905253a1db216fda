import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nehari_sym.checks import tetrahedral_group
from nehari_sym.energy import energy_positive
from nehari_sym.grid import integrate, l2_norm, rotate_field
from nehari_sym.symmetry import (FiniteGroup, SymmetryClass, SystemParams, check_admissible,
                                 class_defect, invariance_defect, is_prime, minimal_period,
                                 orbit, project_class, rotation_matrix, sigma_permute,
                                 validate_params)

from conftest import bump, make_grid


def four_component(cross=-0.2):
    beta = np.full((4, 4), cross)
    beta[0, 1] = beta[1, 0] = beta[2, 3] = beta[3, 2] = -1.0
    return SystemParams(4, 2, [1, 1, 2, 2], [1, 1, 0.5, 0.5], beta)


class TestValidateParams:
    def test_reference_parameters_valid(self):
        assert validate_params(SystemParams.two_component(-1.0)) == []

    def test_weak_repulsion_violates_d(self):
        problems = validate_params(SystemParams.two_component(-0.5))
        assert len(problems) == 2 and all(p.startswith("(D)") for p in problems)

    def test_block_cyclic_four_component_valid(self):
        P = four_component()
        assert validate_params(P) == []
        # explicit conjugation oracle
        perm = np.array([[0, 1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], float)
        assert np.array_equal(perm @ P.beta @ perm.T, P.beta)

    @pytest.mark.parametrize("mutate,tag", [
        (lambda P: SystemParams(2, 2, [1, 2], P.mu, P.beta), "(A)"),
        (lambda P: SystemParams(2, 2, [-1, -1], P.mu, P.beta), "(A)"),
        (lambda P: SystemParams(2, 2, P.lam, [-1, -1], P.beta), "(B)"),
        (lambda P: SystemParams(2, 2, P.lam, P.mu, [[1, 0.5], [0.5, 1]]), "(B)"),
        (lambda P: SystemParams(2, 2, P.lam, P.mu, [[1, -1], [-2, 1]]), "(B)"),
        (lambda P: SystemParams(2, 2, P.lam, P.mu, [[1, -0.9], [-0.9, 1]]), "(D)"),
    ])
    def test_single_mutations_rejected(self, mutate, tag):
        problems = validate_params(mutate(SystemParams.two_component(-1.0)))
        assert any(p.startswith(tag) for p in problems)

    def test_block_cycle_mutation_rejected(self):
        P = four_component()
        beta = P.beta.copy()
        beta[0, 2] = beta[2, 0] = -0.4
        problems = validate_params(SystemParams(4, 2, P.lam, P.mu, beta))
        assert any(p.startswith("(C)") for p in problems)

    def test_nonprime_and_divisibility(self):
        assert validate_params(SystemParams(4, 4, [1] * 4, [1] * 4, -1.0))
        assert validate_params(SystemParams(3, 2, [1] * 3, [1] * 3, -1.0))

    def test_shape_errors(self):
        with pytest.raises(ValueError):
            SystemParams(2, 2, [1, 1, 1], [1, 1], -1.0)
        with pytest.raises(ValueError):
            SystemParams(2, 2, [1, 1], [1, 1], np.zeros((3, 3)))

    def test_primes(self):
        assert [n for n in range(20) if is_prime(n)] == [2, 3, 5, 7, 11, 13, 17, 19]


class TestSigma:
    def test_swap_two(self, params):
        U = np.arange(2 * 12.0).reshape(2, 3, 4)
        S = sigma_permute(U, params)
        assert np.array_equal(S[0], U[1]) and np.array_equal(S[1], U[0])

    def test_three_cycle(self):
        P = SystemParams(3, 3, [1] * 3, [1] * 3, -0.5)
        U = np.arange(3.0)[:, None, None] * np.ones((3, 2, 2))
        assert np.array_equal(sigma_permute(U, P)[:, 0, 0], [1, 2, 0])

    @pytest.mark.parametrize("N,p", [(2, 2), (3, 3), (6, 3), (4, 2), (5, 5)])
    def test_order_p(self, N, p):
        P = SystemParams(N, p, [1] * N, [1] * N, -1.0)
        U = np.random.default_rng(0).standard_normal((N, 2, 4))
        V = U
        for _ in range(p):
            V = sigma_permute(V, P)
        assert np.array_equal(V, U)

    def test_count_mismatch(self, params):
        with pytest.raises(ValueError):
            sigma_permute(np.zeros((3, 2, 2)), params)


CLASSES = [SymmetryClass("positive", 1), SymmetryClass("positive", 2), SymmetryClass("positive", 3),
           SymmetryClass("nodal", 1), SymmetryClass("nodal", 2), SymmetryClass("nodal", 3)]


class TestProjection:
    @pytest.mark.parametrize("cls", CLASSES, ids=str)
    def test_idempotent_and_nonexpansive(self, rng, params, cls):
        g = make_grid(8, 48)
        U = rng.standard_normal((2,) + g.shape)
        P = project_class(g, U, cls)
        assert np.array_equal(project_class(g, P, cls), P)
        assert l2_norm(g, P) <= l2_norm(g, U) * (1 + 1e-14)
        assert class_defect(g, P, cls) == 0.0

    @pytest.mark.parametrize("k", [1, 2, 3, 4])
    def test_positive_block_structure(self, rng, k):
        g = make_grid(6, 48)
        P = project_class(g, rng.standard_normal((2,) + g.shape), SymmetryClass("positive", k))
        assert np.array_equal(P[1], rotate_field(g, P[0], 48 // (2 * k)))
        assert np.array_equal(P[0], rotate_field(g, P[0], 48 // k))

    def test_positive_p3_blocks(self, rng):
        g = make_grid(4, 36)
        P6 = SystemParams(6, 3, [1] * 6, [1] * 6, -1.0)
        cls = SymmetryClass("positive", 2, 3)
        P = project_class(g, rng.standard_normal((6,) + g.shape), cls)
        for b in (0, 3):
            for j in range(2):
                assert np.array_equal(P[b + j + 1], rotate_field(g, P[b + j], 36 // 6))
        # the class is the fixed space of R_{2 pi/(pk)} o sigma^{-1}
        inv = sigma_permute(sigma_permute(P, P6), P6)
        assert np.array_equal(rotate_field(g, inv, 6), P)

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_nodal_antisymmetry(self, rng, k):
        g = make_grid(6, 48)
        P = project_class(g, rng.standard_normal((2,) + g.shape), SymmetryClass("nodal", k))
        assert np.array_equal(P, -rotate_field(g, P, 48 // (2 * k)))

    def test_members_are_fixed(self, rng):
        g = make_grid(6, 48)
        half = rng.standard_normal((6, 8))
        u = np.concatenate([half, -half] * 3, axis=1)
        assert np.array_equal(project_class(g, np.stack([u, u]), SymmetryClass("nodal", 3)),
                              np.stack([u, u]))

    def test_orthogonal_projection(self, rng):
        g = make_grid(6, 24)
        cls = SymmetryClass("positive", 2)
        U, V = rng.standard_normal((2, 2) + g.shape)
        PU, PV = project_class(g, U, cls), project_class(g, V, cls)
        assert math.isclose(integrate(g, (U - PU) * PV), 0.0, abs_tol=1e-12)

    def test_alignment_error(self, rng):
        g = make_grid(4, 10)
        with pytest.raises(ValueError):
            project_class(g, rng.standard_normal((2,) + g.shape), SymmetryClass("positive", 3))

    def test_energy_invariant_under_g(self, rng, params):
        g = make_grid(12, 48)
        for k in (1, 2, 3):
            cls = SymmetryClass("positive", k)
            P = project_class(g, rng.standard_normal((2,) + g.shape), cls)
            gP = rotate_field(g, sigma_permute(P, params), 48 // (2 * k))
            E = energy_positive(g, params, P)
            assert abs(energy_positive(g, params, gP) - E) <= 1e-12 * max(1, abs(E))

    def test_bad_class(self):
        with pytest.raises(ValueError):
            SymmetryClass("positive", 1, 4)
        with pytest.raises(ValueError):
            SymmetryClass("other", 1)
        with pytest.raises(ValueError):
            SymmetryClass("nodal", 0)


class TestDefects:
    def test_radial_and_zero(self, grid):
        assert invariance_defect(grid, bump(grid), 5) == 0.0
        assert invariance_defect(grid, np.zeros(grid.shape), 5) == 0.0

    def test_cos2(self, grid):
        _, T = grid.mesh()
        f = np.cos(2 * T) * bump(grid)
        n = grid.n_theta
        assert invariance_defect(grid, f, n // 2) <= 1e-14
        # quarter turn maps cos 2theta to -cos 2theta, so ||f - Rf|| = 2 ||f||
        direct = math.sqrt(integrate(grid, (f - np.roll(f, n // 4, axis=1)) ** 2)
                           / integrate(grid, f * f))
        assert math.isclose(invariance_defect(grid, f, n // 4), direct, rel_tol=1e-14)
        assert math.isclose(direct, 2.0, rel_tol=1e-12)

    def test_minimal_period_examples(self, grid):
        _, T = grid.mesh()
        b = bump(grid)
        assert minimal_period(grid, np.cos(3 * T) * b, 1e-10) == 3
        assert minimal_period(grid, b, 1e-10) == "radial"
        f = (np.cos(3 * T) + 0.1 * np.cos(6 * T)) * b
        table = {m: invariance_defect(grid, f, 48 // m) for m in (3, 6)}
        assert table[3] < 1e-12 and table[6] > 0.1
        assert minimal_period(grid, f, 1e-10) == 3

    def test_minimal_period_rejects_tol(self, grid):
        with pytest.raises(ValueError):
            minimal_period(grid, bump(grid), 0.0)

    @given(s=st.integers(0, 47), m=st.sampled_from([1, 2, 3, 4, 6, 8, 12]),
           seed=st.integers(0, 1000))
    @settings(max_examples=40, deadline=None)
    def test_period_rotation_invariant(self, s, m, seed):
        g = make_grid(6, 48)
        r = np.random.default_rng(seed)
        _, T = g.mesh()
        f = (np.cos(m * T + r.uniform(0, 6)) + 0.3 * np.sin(2 * m * T)) * bump(g)
        assert minimal_period(g, rotate_field(g, f, s), 1e-9) == minimal_period(g, f, 1e-9) == m


class TestGroups:
    def test_tetrahedral_orbit(self):
        pts = {tuple(p) for p in orbit(tetrahedral_group(), (1, 1, 1))}
        assert pts == {(1, 1, 1), (-1, -1, 1), (1, -1, -1), (-1, 1, -1)}

    def test_trivial_group(self):
        assert np.array_equal(orbit(FiniteGroup([np.eye(2)]), (0.3, 0.4)), [[0.3, 0.4]])

    @pytest.mark.parametrize("k", [2, 3, 5, 8])
    def test_cyclic_free_orbit(self, k):
        G = FiniteGroup.generated_by([rotation_matrix(2 * math.pi / k)])
        assert len(G) == k
        assert len(orbit(G, (0.7, 0.2))) == k

    def test_zero_point_rejected(self):
        with pytest.raises(ValueError):
            orbit(FiniteGroup([np.eye(2)]), (0, 0))

    def test_invalid_groups(self):
        with pytest.raises(ValueError):
            FiniteGroup([np.eye(2), rotation_matrix(1.0)])
        with pytest.raises(ValueError):
            FiniteGroup([np.eye(2) * 2])

    @pytest.mark.parametrize("k,p", [(1, 2), (2, 2), (3, 3), (2, 5)])
    def test_example_rotation_pair(self, k, p):
        G0 = FiniteGroup.generated_by([rotation_matrix(2 * math.pi / k, 3)] if k > 1 else [np.eye(3)])
        b = rotation_matrix(2 * math.pi / (p * k), 3)
        rep = check_admissible(G0, b, p, (1, 0, 0))
        assert rep.admissible
        F = np.diag([1.0, 1.0, -1.0])
        G = FiniteGroup.generated_by([rotation_matrix(2 * math.pi / k, 3), F])
        assert check_admissible(G, b, p, (1, 0, 0)).admissible

    def test_example_tetrahedral(self):
        rep = check_admissible(tetrahedral_group(), -np.eye(3), 2, (1, 1, 1))
        assert rep.admissible
        assert {tuple(p) for p in rep.witness_orbits[1]} == {
            (-1, -1, -1), (1, 1, -1), (-1, 1, 1), (1, -1, 1)}

    def test_element_of_group_rejected(self):
        G = FiniteGroup.generated_by([rotation_matrix(math.pi)])
        rep = check_admissible(G, rotation_matrix(math.pi), 2, (1, 0))
        assert rep.normalizer_ok and rep.power_in_group and not rep.orbit_disjoint
        assert not rep.admissible

    def test_non_normalizing(self):
        G = FiniteGroup([np.eye(2), np.diag([1.0, -1.0])])
        rep = check_admissible(G, rotation_matrix(math.pi / 3), 2, (1, 0.2))
        assert not rep.normalizer_ok
