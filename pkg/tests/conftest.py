import numpy as np
import pytest

from rbsde.filtration import binomial_tree, explicit_tree

ACCEPTANCE_LINES = []


@pytest.fixture
def one_period():
    """One period, two children, p = 1/2 (node 1 is the up branch)."""
    return binomial_tree(1, 1.0, 0.5)


@pytest.fixture
def single_branch():
    return explicit_tree([{"id": 0, "parent": -1}, {"id": 1, "parent": 0, "prob": 1.0}])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
