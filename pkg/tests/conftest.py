import numpy as np
import pytest

from multistop.tree import binary_tree, random_tree


@pytest.fixture
def depth1():
    """Binary depth-1 tree, p = 1/2, reward 0 at root, 2 up, 0 down."""
    return binary_tree(1), np.array([0.0, 2.0, 0.0])


@pytest.fixture(params=[2, 3, 4])
def depth(request):
    return request.param


def make_random(seed, depth, branching=2):
    rng = np.random.default_rng(seed)
    return random_tree(depth, rng, branching), rng


_ACCEPTANCE = []


def pytest_runtest_logreport(report):
    if report.when == "call":
        for key, value in report.user_properties:
            if key == "acceptance":
                _ACCEPTANCE.append((value, report.outcome.upper()))


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line, outcome in sorted(_ACCEPTANCE):
            terminalreporter.write_line(f"{'PASS' if outcome == 'PASSED' else 'FAIL'}  {line}")
