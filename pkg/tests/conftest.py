import functools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cosserat_lab.energy import ModelParams, State
from cosserat_lab.fields import Grid
from cosserat_lab.geometry import random_rotations
from cosserat_lab.solver import SolveConfig, initial_state, minimize, twist_state

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"ACCEPTANCE {k}: {'PASS' if ok else 'FAIL'} | {detail}")


def random_state(n, seed, amp=0.1):
    """Smooth-ish random state on an ``n^3`` unit cube (boundary values included)."""
    rng = np.random.default_rng(seed)
    g = Grid.cube(n)
    phi = g.coords() + amp * rng.standard_normal(g.dims + (3,))
    return State(g, phi, random_rotations(rng, g.dims))


@functools.lru_cache(maxsize=None)
def twist_minimizer(n, p, rate=0.5 * np.pi):
    """Converged minimizer with twisted boundary rotations, cached per session."""
    g = Grid.cube(n)
    s0 = initial_state(twist_state(g, rate=rate), "perturb", 0.1, seed=0)
    prm = ModelParams(p=p)
    state, rep = minimize(s0, prm, SolveConfig())
    return state, prm, rep


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
