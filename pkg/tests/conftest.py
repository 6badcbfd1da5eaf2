import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hjdisc.grid import PeriodicGrid
from hjdisc.scenarios import get_scenario
from hjdisc.semigroup import Direction, SemigroupConfig, solve_stationary

settings.register_profile(
    "hjdisc", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("hjdisc")

GRID = PeriodicGrid(512)
CFG = SemigroupConfig()


@pytest.fixture(scope="session")
def grid():
    return GRID


@pytest.fixture(scope="session")
def cfg():
    return CFG


@pytest.fixture(scope="session")
def pendulum():
    return get_scenario("pendulum-sine").model(1.0)


@pytest.fixture(scope="session")
def quadratic():
    return get_scenario("quadratic-sine").model(1.0)


@pytest.fixture(scope="session")
def pendulum_u_minus(pendulum):
    return solve_stationary(pendulum, Direction.BACKWARD, CFG, GRID)


@pytest.fixture(scope="session")
def pendulum_v_plus(pendulum):
    return solve_stationary(pendulum, Direction.FORWARD, CFG, GRID)


@pytest.fixture(scope="session")
def quadratic_u_minus(quadratic):
    return solve_stationary(quadratic, Direction.BACKWARD, CFG, GRID)


# c = 0 is critical for both sine scenarios: the approach is slow, so relax tol and extend the horizon
CRITICAL_CFG = SemigroupConfig(t_max=4000.0, tol=1e-6)


@pytest.fixture(scope="session")
def quadratic0_u_minus():
    return solve_stationary(get_scenario("quadratic-sine").model(0.0), Direction.BACKWARD, CRITICAL_CFG, GRID)


@pytest.fixture(scope="session")
def pendulum0_u_minus():
    return solve_stationary(get_scenario("pendulum-sine").model(0.0), Direction.BACKWARD, CRITICAL_CFG, GRID)


def random_walk(rng, n, scale=0.05):
    steps = rng.normal(size=n) * scale
    steps -= steps.mean()
    w = np.cumsum(steps)
    return w - w.mean()


SQRT3 = math.sqrt(3.0)


@pytest.fixture(scope="session")
def pendulum_rates():
    from hjdisc.rates import rate_report

    return rate_report(get_scenario("pendulum-sine").model, [1.0, 3.0, 10.0, 100.0], CFG, grid=GRID)


@pytest.fixture(scope="session")
def quadratic_rates():
    from hjdisc.rates import rate_report

    return rate_report(get_scenario("quadratic-sine").model, [0.5, 1.0, 5.0], CFG, grid=GRID)


# acceptance lines, filled by test_acceptance.py and printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
