import numpy as np
import pytest

from cqinterp import generate_cube_mesh, unit_cube
from cqinterp.kernel import build_ball_quadrature


@pytest.fixture(scope="session")
def cube():
    return unit_cube()


@pytest.fixture(scope="session")
def mesh1():
    return generate_cube_mesh(1)


@pytest.fixture(scope="session")
def mesh2():
    return generate_cube_mesh(2)


@pytest.fixture(scope="session")
def mesh4():
    return generate_cube_mesh(4)


@pytest.fixture(scope="session")
def ball_small():
    return build_ball_quadrature(6)


@pytest.fixture(scope="session")
def ball_default():
    return build_ball_quadrature()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# acceptance criteria report: one line per criterion in the terminal summary
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
