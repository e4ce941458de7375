import math

import numpy as np
import pytest

from csh_vortex.energy import make_params
from csh_vortex.minimize import SolveOptions, initial_guess, minimize_J
from csh_vortex.torus import TorusGrid, VortexConfig

SU3_VORTICES = (((0.3, 0.4),), ((0.7, 0.65),))


def su3_params(n1=64, multiple=8.0):
    grid = TorusGrid(1.0, 1.0, n1, n1)
    p = make_params(grid, VortexConfig(SU3_VORTICES), 1.0)
    return p.with_lambda(multiple * p.lambda0)


def one_vortex_each(n, n1=64, multiple=8.0):
    grid = TorusGrid(1.0, 1.0, n1, n1)
    comps = tuple((((0.2 + 0.15 * i) % 1.0, (0.3 + 0.17 * i) % 1.0),) for i in range(n))
    p = make_params(grid, VortexConfig(comps), 1.0)
    return p.with_lambda(multiple * p.lambda0)


def smooth_field(grid, rng, modes=3, scale=1.0):
    """Random mean-zero trigonometric polynomial."""
    X, Y = grid.coords
    f = np.zeros(grid.shape)
    for k1 in range(-modes, modes + 1):
        for k2 in range(-modes, modes + 1):
            if k1 == k2 == 0:
                continue
            amp = rng.normal() / (1 + k1 * k1 + k2 * k2)
            f += amp * np.cos(2 * math.pi * (k1 * X / grid.L1 + k2 * Y / grid.L2) + rng.uniform(0, 2 * math.pi))
    return scale * (f - f.mean())


@pytest.fixture(scope="session")
def su3():
    return su3_params()


@pytest.fixture(scope="session")
def su3_solution(su3):
    state, report = minimize_J(su3, initial_guess(su3), SolveOptions(gtol=1e-8))
    return state, report


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
