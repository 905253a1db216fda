import numpy as np
import pytest

from nehari_sym.grid import GridSpec, PolarGrid
from nehari_sym.symmetry import SystemParams


def make_grid(n_r=16, n_theta=48, r_inner=0.0, r_outer=1.0, align=None):
    if align is None:
        align = n_theta
    return PolarGrid(GridSpec(r_inner, r_outer, n_r, n_theta, align))


def bump(grid):
    """Smooth radial profile vanishing at the outer boundary (and inner, on annuli)."""
    R, _ = grid.mesh()
    s = (R - grid.r_inner) / (grid.r_outer - grid.r_inner)
    return np.sin(np.pi * s) ** 2


def random_field(grid, rng, modes=4, nonnegative=False):
    R, T = grid.mesh()
    s = (R - grid.r_inner) / (grid.r_outer - grid.r_inner)
    f = np.zeros_like(R)
    for n in range(modes + 1):
        a, b = rng.standard_normal(2)
        radial = sum(rng.standard_normal() * np.sin(np.pi * (j + 1) * s) for j in range(3))
        f += (a * np.cos(n * T) + b * np.sin(n * T)) * radial / (1 + n)
    return np.abs(f) if nonnegative else f


@pytest.fixture
def grid():
    return make_grid()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def params():
    return SystemParams.two_component(-1.0)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
