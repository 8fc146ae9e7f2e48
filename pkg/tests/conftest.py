import numpy as np
import pytest

import lqshift as lq

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    # surface the acceptance verdicts even when stdout capture is on
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def free1():
    return lq.ControlDomain.free(1)


@pytest.fixture
def bench2():
    """Depth-2 scalar benchmark with a fully known landscape."""
    return lq.example5_instance(2)


@pytest.fixture
def bits_control(free1):
    """Build a scalar binary control from one bit per node, root first."""

    def make(tree, bits):
        levels = []
        pos = 0
        for m in range(tree.depth):
            count = tree.num_nodes(m)
            levels.append(np.asarray(bits[pos:pos + count], dtype=float).reshape(count, 1))
            pos += count
        assert pos == len(bits)
        return lq.ControlProcess.from_levels(free1, tree, levels, kind="binary")

    return make


def all_scalar_binary_controls(tree):
    """Every bit assignment on the tree, lexicographic with the root first."""
    nodes = tree.num_nodes(tree.depth) - 1
    for code in range(2 ** nodes):
        bits = [(code >> (nodes - 1 - i)) & 1 for i in range(nodes)]
        yield bits
