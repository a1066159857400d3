import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from psc_limits.assembly import build_block
from psc_limits.geometry import FlatTorus, Sphere
from psc_limits.packing import AxisGeodesicChart, GreatCircle, TubeChart
from psc_limits.profiles import constant_factor, cosine_factor, linear_factor

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def s4():
    return Sphere(4)


@pytest.fixture(scope="session")
def t4():
    return FlatTorus.cube(4)


@pytest.fixture(scope="session")
def sphere_chart(s4):
    e = np.eye(5)
    return TubeChart(GreatCircle(e[0], e[1]))


@pytest.fixture(scope="session")
def torus_chart(t4):
    return AxisGeodesicChart(t4, np.full(4, 0.3), 0)


@pytest.fixture(scope="session")
def sphere_block(s4, sphere_chart):
    """Reference block: n = 4, f = -1, eps = 0.5, R = 0.005."""
    return build_block(sphere_chart, constant_factor(s4, -1.0), 0.5, 0.005)


@pytest.fixture(scope="session")
def sphere_block_linear(s4, sphere_chart):
    return build_block(sphere_chart, linear_factor(s4, 1.5, 0.3), 0.5, 0.005)


@pytest.fixture(scope="session")
def torus_block(t4, torus_chart):
    """Torus block with a nonconstant factor: n = 4, eps = 0.1."""
    return build_block(torus_chart, cosine_factor(t4, 1.5, 0.3, axis=1), 0.1, 0.2)


# one line per acceptance criterion, printed after the run
CRITERIA: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[k])
