from functools import lru_cache

import pytest

from plaptrace import build_interval_mesh, constant_weight


@lru_cache(maxsize=None)
def unit_interval(n_cells: int):
    """Cached uniform mesh of (0, 1) with its constant weight."""
    mesh = build_interval_mesh(0.0, 1.0, n_cells)
    return mesh, constant_weight(mesh)


@pytest.fixture
def unit256():
    return unit_interval(256)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
