import numpy as np
import pytest

from fracpar.coefficients import CoefficientField
from fracpar.grid import Grid
from fracpar.operator import ParabolicOperator


@pytest.fixture
def grid1():
    return Grid(1, 32, 32)


@pytest.fixture
def grid2():
    return Grid(2, 8, 8)


@pytest.fixture
def heat_op(grid1):
    return ParabolicOperator(CoefficientField.identity(grid1))


def rel(a, b):
    """Relative L2 distance of two arrays."""
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
