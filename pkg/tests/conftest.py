import itertools
import math

import numpy as np
import pytest

from tspdiff.tsp_core import TspInstance, tour_cost


def brute_force_cost(instance: TspInstance) -> float:
    """Shortest cycle by enumerating every permutation with vertex 0 fixed."""
    best = math.inf
    for rest in itertools.permutations(range(1, instance.n)):
        if rest[0] > rest[-1]:
            continue  # each undirected cycle once
        best = min(best, tour_cost(instance, (0,) + rest))
    return best


@pytest.fixture
def square():
    from tspdiff.tsp_core import make_instance

    return make_instance([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    lines = getattr(sys.modules.get("test_acceptance"), "LINES", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
