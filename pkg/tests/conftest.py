from __future__ import annotations

import itertools

import numpy as np
import pytest

from loopsoup.lattice import Window


def closed_walks(sites, k):
    """All closed nearest-neighbour walks of length k inside a site set (brute force)."""
    pts = [tuple(int(c) for c in p) for p in sites]
    S = set(pts)
    d = len(pts[0])
    steps = [tuple(s if j == a else 0 for j in range(d)) for a in range(d) for s in (1, -1)]
    out = []

    def rec(path):
        if len(path) == k:
            if sum(abs(a - b) for a, b in zip(path[-1], path[0])) == 1:
                out.append(list(path))
            return
        for st in steps:
            q = tuple(a + b for a, b in zip(path[-1], st))
            if q in S:
                path.append(q)
                rec(path)
                path.pop()

    for p in pts:
        rec([p])
    return out


@pytest.fixture
def unit_cube():
    return Window(np.zeros(3, np.int64), np.ones(3, np.int64))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report(capsys):
    """Print one acceptance line immediately and repeat it in the terminal summary."""
    def emit(line: str) -> None:
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
