import math

import numpy as np
import pytest

from qstab.linalg import LinearSystem
from qstab.noise import NoiseModel
from qstab.quantizer import design_bins

ACCEPTANCE_LINES = []


def rot(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@pytest.fixture
def ref_sys():
    return LinearSystem(rot(math.pi / 3), [[1.0], [0.0]])


@pytest.fixture
def q8():
    return design_bins(2, 7.0, math.pi / 8)


@pytest.fixture
def gauss2():
    return NoiseModel("gaussian_isotropic", 2, 1.0)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
