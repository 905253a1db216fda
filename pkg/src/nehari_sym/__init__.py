"""Symmetric positive and nodal solutions of coupled cubic elliptic systems on polar grids."""

from .energy import (InfeasibleRetraction, energy_nodal, energy_positive, gradient,
                     nehari_residuals, nehari_scale, retract)
from .grid import GridSpec, PolarGrid, dirichlet_form, integrate, laplacian_k
from .reduction import (HalfSpace, ReducedProblem, energy_reduced, ground_state_reduced,
                        minimal_period_theorem_check, polarize, psi_k, pullback_consistency)
from .solver import SeedSpec, SolveReport, SolverConfig, make_seed, minimize, multistart
from .symmetry import SymmetryClass, SystemParams, minimal_period, project_class, validate_params

__version__ = "0.1.0"

__all__ = [
    "GridSpec", "PolarGrid", "integrate", "dirichlet_form", "laplacian_k",
    "SystemParams", "SymmetryClass", "validate_params", "project_class", "minimal_period",
    "InfeasibleRetraction", "energy_positive", "energy_nodal", "gradient",
    "nehari_residuals", "nehari_scale", "retract",
    "SeedSpec", "SolverConfig", "SolveReport", "make_seed", "minimize", "multistart",
    "ReducedProblem", "HalfSpace", "psi_k", "energy_reduced", "ground_state_reduced",
    "polarize", "pullback_consistency", "minimal_period_theorem_check",
]
