import math

import numpy as np
import pytest

from dampedkam.flow import example_system

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def fig1_sys():
    return example_system("fig1")


@pytest.fixture(scope="session")
def pendulum_sys():
    return example_system("pendulum")


@pytest.fixture(scope="session")
def lam():
    return 1 / math.sqrt(2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
