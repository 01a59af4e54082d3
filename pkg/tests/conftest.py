import numpy as np
import pytest

from rsvol.model import ModelSpec, paper_example

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def paper():
    return paper_example()


@pytest.fixture
def cir():
    """Single-regime square-root process with Gamma(2, rate 1) stationary law."""
    return ModelSpec(a=[4.0], b=[2.0], sigma=[2.0], theta=[0.5], q=[[0.0]], x0=2.0, i0=1)


@pytest.fixture
def two_state():
    return np.array([[-1.0, 1.0], [1.0, -1.0]])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
