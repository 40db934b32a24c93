from __future__ import annotations

import numpy as np
import pytest

from streetnav.env import EnvGraph
from streetnav.worldgen import generate_world


def random_graph(rng: np.random.Generator, n: int, p: float = 0.3, undirected: bool = False) -> EnvGraph:
    """Random directed graph with distinct random headings; every node gets an outgoing edge."""
    ids = [f"n{i}" for i in range(n)]
    pairs = set()
    for i in range(n):
        for j in range(n):
            if i != j and rng.random() < p:
                pairs.add((i, j))
                if undirected:
                    pairs.add((j, i))
    for i in range(n):
        if n > 1 and not any(a == i for a, _ in pairs):
            j = int(rng.integers(n - 1))
            pairs.add((i, j if j < i else j + 1))
    by_src: dict[int, list[int]] = {}
    for a, b in sorted(pairs):
        by_src.setdefault(a, []).append(b)
    edges = []
    for a, dsts in by_src.items():
        headings = rng.choice(360, size=len(dsts), replace=False)
        edges += [(ids[a], ids[b], float(h)) for b, h in zip(dsts, headings)]
    return EnvGraph(ids, edges)


@pytest.fixture(scope="session")
def small_world():
    return generate_world(nodes=12, route_count=6, feature_dim=16, seed=5)


@pytest.fixture(scope="session")
def world20():
    return generate_world(nodes=20, route_count=10, seed=3)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
