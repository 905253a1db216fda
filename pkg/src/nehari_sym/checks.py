"""Invariant suite run by ``nehari-sym check``.

Every check returns a :class:`CheckResult`; the suite never raises on a
failed property, it records it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import i1

from . import energy as en
from .grid import (GridSpec, PolarGrid, antipodal, build_grid, h1_norm_sq, inner, integrate,
                   l2_norm, laplacian_k, reflect_field, rotate_field)
from .reduction import (HalfSpace, ReducedProblem, foliated_schwarz_defect, ground_state_reduced,
                        nehari_scale_reduced, polarization_inequality_check, psi_k,
                        reduced_nehari_residual, quadratic_part)
from .solver import SeedSpec, SolverConfig, minimize, seed_positive
from .symmetry import (FiniteGroup, SymmetryClass, SystemParams, check_admissible,
                       minimal_period, project_class, rotation_matrix, sigma_permute,
                       validate_params)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), "detail": self.detail}


@dataclass
class CheckSettings:
    n_r: int = 16
    n_theta: int = 48
    samples: int = 5
    seed: int = 0
    inject: str = ""


def smooth_field(grid: PolarGrid, rng: np.random.Generator, modes: int = 4,
                 nonnegative: bool = False) -> np.ndarray:
    """Random trigonometric field vanishing at the outer boundary."""
    R, T = grid.mesh()
    a, b = grid.r_inner, grid.r_outer
    envelope = (b - R) * (R - a + 0.1 * (b - a))
    f = rng.uniform(-1, 1) * np.ones_like(R)
    for j in range(1, modes + 1):
        f = f + rng.uniform(-1, 1) / j * np.cos(j * T + rng.uniform(0, 2 * math.pi)) \
            * np.cos(rng.uniform(0, 3) * R)
    f = f * envelope
    return np.abs(f) if nonnegative else f


def gradient_fd_error(grid: PolarGrid, params: SystemParams, U: np.ndarray, V: np.ndarray,
                      branch: str, h: float = 1e-5,
                      grad: Callable | None = None) -> float:
    """Relative gap between a central difference of ``E`` and ``<grad E, V>``."""
    grad = grad or en.gradient
    fd = (en.energy(grid, params, U + h * V, branch)
          - en.energy(grid, params, U - h * V, branch)) / (2 * h)
    an = integrate(grid, grad(grid, params, U, branch) * V)
    return abs(fd - an) / max(abs(an), abs(fd), 1e-300)


def _check(name, fn) -> CheckResult:
    try:
        passed, detail = fn()
    except Exception as exc:  # a crash is a failed invariant
        return CheckResult(name, False, {"error": f"{type(exc).__name__}: {exc}"})
    return CheckResult(name, bool(passed), detail)


def run_invariants(settings: CheckSettings = CheckSettings()) -> list[CheckResult]:
    rng = np.random.default_rng(settings.seed)
    grid = build_grid(GridSpec(0.0, 1.0, settings.n_r, settings.n_theta, 4))
    annulus = build_grid(GridSpec(1.0, 2.0, settings.n_r, settings.n_theta, 4))
    params = SystemParams.two_component(-1.0)
    pos1 = SymmetryClass("positive", 1, 2)
    results: list[CheckResult] = []

    def quadrature_order():
        # int over the unit disc of e^x is 2 pi I_1(1)
        exact = 2 * math.pi * float(i1(1.0))
        errs = []
        for n in (settings.n_r, 2 * settings.n_r):
            g = build_grid(GridSpec(0.0, 1.0, n, 2 * n, 2))
            R, T = g.mesh()
            errs.append(abs(integrate(g, np.exp(R * np.cos(T))) - exact))
        order = math.log2(errs[0] / errs[1])
        return order >= 1.9, {"observed_order": order}

    def permutations_preserve():
        worst = 0.0
        for g in (grid, annulus):
            for _ in range(settings.samples):
                f = smooth_field(g, rng)
                s = int(rng.integers(g.n_theta))
                for h in (rotate_field(g, f, s), antipodal(g, f), reflect_field(g, f, s)):
                    worst = max(worst, abs(integrate(g, h) - integrate(g, f)),
                                abs(h1_norm_sq(g, h, 1.0) - h1_norm_sq(g, f, 1.0)))
        return worst <= 1e-12, {"max_abs_change": worst}

    def laplacian_symmetric():
        worst = 0.0
        for g in (grid, annulus):
            for k in (1, 3):
                f, h = rng.standard_normal((2,) + g.shape)
                gap = abs(inner(g, laplacian_k(g, f, k), h) - inner(g, f, laplacian_k(g, h, k)))
                worst = max(worst, gap / (l2_norm(g, f) * l2_norm(g, h)))
        return worst <= 1e-10, {"max_relative_gap": worst}

    def projection_properties():
        worst_idem, worst_norm, worst_e = 0.0, -math.inf, 0.0
        for cls in (pos1, SymmetryClass("positive", 2, 2), SymmetryClass("nodal", 1),
                    SymmetryClass("nodal", 2)):
            for _ in range(settings.samples):
                U = rng.standard_normal((2,) + grid.shape)
                P = project_class(grid, U, cls)
                worst_idem = max(worst_idem, float(np.max(np.abs(project_class(grid, P, cls) - P))))
                worst_norm = max(worst_norm, l2_norm(grid, P) - l2_norm(grid, U))
                if cls.branch == "positive":
                    gP = sigma_permute(rotate_field(grid, P, grid.n_theta // cls.order), params)
                    e0 = en.energy(grid, params, P, "positive")
                    worst_e = max(worst_e, abs(en.energy(grid, params, gP, "positive") - e0)
                                  / max(abs(e0), 1.0))
        ok = worst_idem == 0.0 and worst_norm <= 1e-12 and worst_e <= 1e-12
        return ok, {"idempotence": worst_idem, "norm_growth": worst_norm,
                    "energy_change_under_g": worst_e}

    def period_rotation_invariant():
        bad = 0
        R, T = grid.mesh()
        bump = (1 - R * R) ** 2
        for m in (1, 2, 3, 4):
            f = bump * (np.cos(m * T) + 0.3)
            base = minimal_period(grid, f, 1e-8)
            for s in range(0, grid.n_theta, 5):
                bad += minimal_period(grid, rotate_field(grid, f, s), 1e-8) != base
        return bad == 0, {"mismatches": bad}

    def params_mutations():
        good = [params, SystemParams(4, 2, [1, 1, 2, 2], [1, 1, 1, 1],
                                     [[1, -1, -.2, -.2], [-1, 1, -.2, -.2],
                                      [-.2, -.2, 1, -1.5], [-.2, -.2, -1.5, 1]])]
        accepted = all(not validate_params(p) for p in good)
        mutants = [
            SystemParams(2, 2, [1, 2], [1, 1], [[1, -1], [-1, 1]]),    # (A)
            SystemParams(2, 2, [1, 1], [1, 1], [[1, 0.5], [0.5, 1]]),  # (B)
            SystemParams(2, 2, [1, 1], [1, 0.5], [[1, -1], [-1, 0.5]]),  # (C)
            SystemParams(2, 2, [1, 1], [1, 1], [[1, -0.5], [-0.5, 1]]),  # (D)
        ]
        rejected = [bool(validate_params(p)) for p in mutants]
        return accepted and all(rejected), {"accepted": accepted, "rejected": rejected}

    def retraction_fixes_nehari():
        worst_t, worst_e, worst_eq = 0.0, 0.0, 0.0
        for _ in range(settings.samples):
            U = project_class(grid, np.abs(rng.standard_normal((2,) + grid.shape)) + 0.1, pos1)
            V = en.retract(grid, params, U, "positive")
            t = en.nehari_scale(grid, params, V, "positive")
            worst_t = max(worst_t, float(np.max(np.abs(t - 1))))
            norms = en.component_norms(grid, params, V)
            E = en.energy(grid, params, V, "positive")
            worst_e = max(worst_e, abs(E - 0.25 * math.fsum(norms)) / max(abs(E), 1.0))
            W = np.abs(rng.standard_normal((2,) + grid.shape))
            ts = en.nehari_scale(grid, params, W, "positive")
            tsig = en.nehari_scale(grid, params, sigma_permute(W, params), "positive")
            worst_eq = max(worst_eq, float(np.max(np.abs(tsig - ts[[1, 0]]))))
        ok = worst_t <= 1e-8 and worst_e <= 1e-8 and worst_eq <= 1e-12
        return ok, {"fixed_point": worst_t, "quarter_norm_identity": worst_e,
                    "sigma_equivariance": worst_eq}

    def gradient_consistency():
        grad = en.gradient
        if settings.inject == "gradient_sign":
            grad = lambda *a: -en.gradient(*a)  # noqa: E731
        worst = 0.0
        for branch in ("positive", "nodal"):
            for _ in range(settings.samples):
                U = np.stack([smooth_field(grid, rng) for _ in range(2)])
                V = np.stack([smooth_field(grid, rng) for _ in range(2)])
                worst = max(worst, gradient_fd_error(grid, params, U, V, branch, grad=grad))
        return worst <= 1e-5, {"max_relative_error": worst}

    def solver_structure():
        g = build_grid(GridSpec(0.0, 1.0, settings.n_r, settings.n_theta, 4))
        cfg = SolverConfig(max_iter=2000, tol=1e-7)
        start = seed_positive(g, pos1, SeedSpec((0.6, 0.8j)), params)
        a = minimize(g, params, pos1, start, cfg)
        b = minimize(g, params, pos1, start, cfg)
        U = a.state
        half = g.n_theta // 2
        detail = {"converged": a.converged, "min_value": float(U.min()),
                  "defect_k": a.defect_k, "defect_refined": a.defect_refined,
                  "pairing_exact": bool(np.array_equal(U[1], rotate_field(g, U[0], half))),
                  "deterministic": bool(np.array_equal(a.state, b.state))}
        ok = (a.converged and detail["min_value"] >= -1e-8 and a.defect_k <= 1e-10
              and a.defect_refined >= 0.01 and detail["pairing_exact"] and detail["deterministic"])
        return ok, detail

    def reduction_properties():
        g = grid
        worst_map, worst_neh = 0.0, 0.0
        for k in (1, 2, 3):
            prob = ReducedProblem(g, k, -1.0)
            fg = prob.full_grid()
            for _ in range(settings.samples):
                u = smooth_field(g, rng, nonnegative=True)
                U = psi_k(u, k)
                step = fg.n_theta // (2 * k)
                # sigma(Psi u) = R_{pi/k}-image, and equals Psi of the antipodal field
                img = sigma_permute(U, prob.params)
                worst_map = max(worst_map,
                                float(np.max(np.abs(rotate_field(fg, U[0], step) - U[1]))),
                                float(np.max(np.abs(img - psi_k(antipodal(g, u), k)))))
                lam = nehari_scale_reduced(prob, u)
                worst_neh = max(worst_neh, abs(reduced_nehari_residual(prob, lam * u))
                                / quadratic_part(prob, lam * u))
        return worst_map == 0.0 and worst_neh <= 1e-10, {"intertwining": worst_map,
                                                         "nehari_identity": worst_neh}

    def polarization():
        prob = ReducedProblem(grid, 2, -1.0)
        bad = 0
        for _ in range(10 * settings.samples):
            u = smooth_field(grid, rng, nonnegative=True)
            H = HalfSpace(int(rng.integers(2 * grid.n_theta)), int(rng.choice([-1, 1])))
            bad += not polarization_inequality_check(prob, u, H).ok
        return bad == 0, {"violations": bad}

    def foliated_ground_state():
        prob = ReducedProblem(grid, 1, -1.0)
        rep = ground_state_reduced(prob, SolverConfig(starts=2))
        u = rep.state[0]
        d, axis = foliated_schwarz_defect(grid, u)
        rel = d / l2_norm(grid, u)
        return rep.converged and rel <= 1e-3, {"relative_defect": rel, "axis": axis}

    def admissible_examples():
        k, p = 2, 2
        g1 = FiniteGroup.generated_by([rotation_matrix(2 * math.pi / k)])
        ex1 = check_admissible(g1, rotation_matrix(2 * math.pi / (p * k)), p, (1.0, 0.0))
        F = np.diag([1.0, 1.0, -1.0])
        g2 = FiniteGroup.generated_by([rotation_matrix(2 * math.pi / k, 3), F])
        ex2 = check_admissible(g2, rotation_matrix(2 * math.pi / (p * k), 3), p, (1.0, 0.0, 0.0))
        g4 = tetrahedral_group()
        ex4 = check_admissible(g4, -np.eye(3), 2, (1.0, 1.0, 1.0))
        reject = check_admissible(g1, rotation_matrix(2 * math.pi / k), p, (1.0, 0.0))
        ok = ex1.admissible and ex2.admissible and ex4.admissible and not reject.admissible
        return ok, {"example1": ex1.admissible, "example2": ex2.admissible,
                    "example4": ex4.admissible, "b_in_group_rejected": not reject.admissible}

    checks = [
        ("grid.quadrature_order", quadrature_order),
        ("grid.permutations_preserve_integrals", permutations_preserve),
        ("grid.laplacian_symmetric", laplacian_symmetric),
        ("symmetry.projection", projection_properties),
        ("symmetry.minimal_period_rotation_invariant", period_rotation_invariant),
        ("symmetry.validate_params_mutations", params_mutations),
        ("energy.nehari_retraction", retraction_fixes_nehari),
        ("energy.gradient_consistency", gradient_consistency),
        ("solver.structure", solver_structure),
        ("reduction.identities", reduction_properties),
        ("reduction.polarization", polarization),
        ("reduction.foliated_schwarz", foliated_ground_state),
        ("symmetry.admissible_pairs", admissible_examples),
    ]
    for name, fn in checks:
        results.append(_check(name, fn))
    return results


def tetrahedral_group() -> FiniteGroup:
    """Group generated by coordinate permutations and ``diag(1, -1, -1)`` (order 24)."""
    cyc = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    swap = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    return FiniteGroup.generated_by([cyc, swap, np.diag([1.0, -1.0, -1.0])])
