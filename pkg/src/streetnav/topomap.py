"""Dynamically growing scene topology map.

Nodes are visited, current (exactly one) or contiguous (seen as a neighbor
but not entered).  Nothing is ever removed.  Map edges are undirected and
form a star around every node the agent has stood on.
"""

from __future__ import annotations

from dataclasses import dataclass
from types import MappingProxyType
from typing import Callable, Mapping

import numpy as np

from .env import EnvGraph
from .errors import IllegalMove

VISITED = "visited"
CURRENT = "current"
CONTIGUOUS = "contiguous"
CATEGORIES = (VISITED, CURRENT, CONTIGUOUS)

FeatureInit = Callable[[str], np.ndarray]


def _edge(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class TopoMap:
    order: tuple[str, ...]
    categories: Mapping[str, str]
    features: Mapping[str, np.ndarray]
    edges: frozenset[tuple[str, str]]
    current: str
    step: int = 0

    def __len__(self) -> int:
        return len(self.order)

    def __contains__(self, node) -> bool:
        return node in self.categories

    def nodes_in(self, category: str) -> list[str]:
        return [n for n in self.order if self.categories[n] == category]

    @property
    def visited(self) -> list[str]:
        return self.nodes_in(VISITED)

    @property
    def contiguous(self) -> list[str]:
        return self.nodes_in(CONTIGUOUS)

    def index(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.order)}

    def neighbor_sets(self) -> list[list[int]]:
        idx = self.index()
        out: list[list[int]] = [[] for _ in self.order]
        for a, b in sorted(self.edges):
            out[idx[a]].append(idx[b])
            out[idx[b]].append(idx[a])
        return [sorted(s) for s in out]

    def same_structure(self, other: "TopoMap") -> bool:
        return (
            set(self.order) == set(other.order)
            and self.edges == other.edges
            and dict(self.categories) == dict(other.categories)
        )

    def __reduce__(self):
        # mapping proxies do not pickle; rebuild them from plain dicts
        return _rebuild, (self.order, dict(self.categories), dict(self.features), self.edges, self.current, self.step)

    def snapshot(self) -> dict:
        return {
            "step": self.step,
            "current": self.current,
            "nodes": [{"id": n, "category": self.categories[n]} for n in self.order],
            "edges": [list(e) for e in sorted(self.edges)],
        }


def _rebuild(order, categories, features, edges, current, step) -> TopoMap:
    return TopoMap(order, MappingProxyType(categories), MappingProxyType(features), edges, current, step)


def _zero_feature(_node: str) -> np.ndarray:
    return np.zeros(1)


def init_topomap(graph: EnvGraph, start: str, feature_init: FeatureInit | None = None) -> TopoMap:
    feature_init = feature_init or _zero_feature
    nbrs = [n for n in graph.neighbors(start) if n != start]
    order = (start, *nbrs)
    cats = {start: CURRENT, **{n: CONTIGUOUS for n in nbrs}}
    return TopoMap(
        order=order,
        categories=MappingProxyType(cats),
        features=MappingProxyType({n: np.asarray(feature_init(n), dtype=np.float64) for n in order}),
        edges=frozenset(_edge(start, n) for n in nbrs),
        current=start,
        step=0,
    )


def update_on_move(
    topo: TopoMap, graph: EnvGraph, new_node: str, feature_init: FeatureInit | None = None
) -> TopoMap:
    """Return the map after the agent moves from ``topo.current`` to ``new_node``."""
    graph.check(new_node)
    old = topo.current
    if new_node == old or new_node not in graph.neighbors(old):
        raise IllegalMove(f"{new_node!r} is not adjacent to the current node {old!r}")
    feature_init = feature_init or _zero_feature
    order = list(topo.order)
    cats = dict(topo.categories)
    feats = dict(topo.features)
    edges = set(topo.edges)

    cats[old] = VISITED
    if new_node not in cats:
        order.append(new_node)
        feats[new_node] = np.asarray(feature_init(new_node), dtype=np.float64)
    cats[new_node] = CURRENT
    edges.add(_edge(old, new_node))
    for n in graph.neighbors(new_node):
        if n == new_node:
            continue
        if n not in cats:
            order.append(n)
            cats[n] = CONTIGUOUS
            feats[n] = np.asarray(feature_init(n), dtype=np.float64)
        edges.add(_edge(new_node, n))
    return TopoMap(
        order=tuple(order),
        categories=MappingProxyType(cats),
        features=MappingProxyType(feats),
        edges=frozenset(edges),
        current=new_node,
        step=topo.step + 1,
    )


def node_feature_matrix(topo: TopoMap) -> np.ndarray:
    """Rows ``[appearance feature | one-hot(visited, current, contiguous)]`` in map order."""
    rows = []
    for n in topo.order:
        onehot = np.zeros(3)
        onehot[CATEGORIES.index(topo.categories[n])] = 1.0
        rows.append(np.concatenate([topo.features[n], onehot]))
    return np.vstack(rows)


@dataclass(frozen=True)
class AdjacencyMatrix:
    order: tuple[str, ...]
    A: np.ndarray
    normalized: bool


def _raw_adjacency(order, edges) -> np.ndarray:
    idx = {n: i for i, n in enumerate(order)}
    A = np.zeros((len(order), len(order)))
    for a, b in edges:
        if a in idx and b in idx and a != b:
            A[idx[a], idx[b]] = A[idx[b], idx[a]] = 1.0
    return A


def to_adjacency(topo: TopoMap, normalize: bool = False) -> AdjacencyMatrix:
    """Raw 0/1 adjacency, or ``D^-1/2 (A + I) D^-1/2`` when ``normalize``."""
    A = _raw_adjacency(topo.order, topo.edges)
    if normalize:
        A = A + np.eye(len(topo.order))
        dinv = 1.0 / np.sqrt(A.sum(axis=1))
        A = A * dinv[:, None] * dinv[None, :]
    return AdjacencyMatrix(topo.order, A, normalize)


def topo_loss(S: TopoMap, C: TopoMap) -> float:
    """Squared Frobenius distance of raw adjacencies aligned on the union of node ids."""
    order = list(S.order) + [n for n in C.order if n not in S.categories]
    diff = _raw_adjacency(order, S.edges) - _raw_adjacency(order, C.edges)
    return float((diff * diff).sum())
