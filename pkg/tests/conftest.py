import numpy as np
import pytest

from hodgelab.complex import generate_flat_torus, generate_icosphere

# filled by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture(scope="session")
def ring16():
    return generate_flat_torus(1, 16)


@pytest.fixture(scope="session")
def torus2():
    return generate_flat_torus(2, 8)


@pytest.fixture(scope="session")
def torus3():
    return generate_flat_torus(3, 4)


@pytest.fixture(scope="session")
def sphere2():
    return generate_icosphere(2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
