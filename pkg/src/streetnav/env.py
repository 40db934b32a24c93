"""Directed street-graph environment and the agent transition function.

Headings are compass-style degrees in ``[0, 360)``.  At every node the
outgoing edge headings form a sorted cycle; LEFT steps to the previous
heading in that cycle and RIGHT to the next one.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterable, NamedTuple

from .errors import AlreadyTerminated, DeadEnd, InvariantViolation, UnknownNode

HEADING_TOL = 1e-9


class Action(str, enum.Enum):
    FORWARD = "FORWARD"
    LEFT = "LEFT"
    RIGHT = "RIGHT"
    STOP = "STOP"


def normalize_heading(deg: float) -> float:
    h = float(deg) % 360.0
    # -1e-17 % 360 rounds to 360.0
    return 0.0 if h >= 360.0 else h


def circular_distance(a: float, b: float) -> float:
    d = abs(normalize_heading(a) - normalize_heading(b))
    return min(d, 360.0 - d)


def same_heading(a: float, b: float) -> bool:
    return circular_distance(a, b) <= HEADING_TOL


class Edge(NamedTuple):
    src: str
    dst: str
    heading: float


class EnvGraph:
    """Immutable directed graph with one heading per edge.

    ``terminal`` lists nodes allowed to have no outgoing edge.
    """

    def __init__(self, nodes: Iterable[str], edges: Iterable[tuple], terminal: Iterable[str] = ()):
        node_list: list[str] = []
        seen: set[str] = set()
        for n in nodes:
            n = str(n)
            if n in seen:
                raise InvariantViolation("unique-node-id", f"duplicate node {n!r}")
            seen.add(n)
            node_list.append(n)

        terminal = frozenset(str(t) for t in terminal)
        for t in terminal:
            if t not in seen:
                raise InvariantViolation("edge-endpoints", f"terminal flag on unknown node {t!r}")

        out: dict[str, list[tuple[str, float]]] = {n: [] for n in node_list}
        edge_list: list[Edge] = []
        pairs: set[tuple[str, str]] = set()
        for e in edges:
            src, dst, heading = str(e[0]), str(e[1]), normalize_heading(e[2])
            if src not in seen or dst not in seen:
                raise InvariantViolation("edge-endpoints", f"edge {src!r}->{dst!r} references an unknown node")
            if (src, dst) in pairs:
                raise InvariantViolation("no-duplicate-edges", f"duplicate edge {src!r}->{dst!r}")
            for _, h in out[src]:
                if same_heading(h, heading):
                    raise InvariantViolation(
                        "distinct-outgoing-headings", f"node {src!r} has two outgoing edges at {heading} deg"
                    )
            pairs.add((src, dst))
            out[src].append((dst, heading))
            edge_list.append(Edge(src, dst, heading))

        for n in node_list:
            if not out[n] and n not in terminal:
                raise InvariantViolation("outgoing-or-terminal", f"node {n!r} has no outgoing edge and is not terminal")

        undirected: dict[str, set[str]] = {n: set() for n in node_list}
        for e in edge_list:
            if e.src != e.dst:
                undirected[e.src].add(e.dst)
                undirected[e.dst].add(e.src)

        self._nodes = tuple(node_list)
        self._node_set = frozenset(node_list)
        self._edges = tuple(edge_list)
        self._terminal = terminal
        self._pairs = frozenset(pairs)
        self._out = MappingProxyType({n: tuple(sorted(v, key=lambda x: x[1])) for n, v in out.items()})
        self._nbrs = MappingProxyType({n: tuple(sorted(v)) for n, v in undirected.items()})

    @property
    def nodes(self) -> tuple[str, ...]:
        return self._nodes

    @property
    def edges(self) -> tuple[Edge, ...]:
        return self._edges

    @property
    def terminal(self) -> frozenset[str]:
        return self._terminal

    def __contains__(self, node) -> bool:
        return node in self._node_set

    def __len__(self) -> int:
        return len(self._nodes)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EnvGraph):
            return NotImplemented
        return (
            self._nodes == other._nodes
            and self._edges == other._edges
            and self._terminal == other._terminal
        )

    def __hash__(self) -> int:
        return hash((self._nodes, self._edges))

    def __reduce__(self):
        return EnvGraph, (self._nodes, self._edges, self._terminal)

    def __repr__(self) -> str:
        return f"EnvGraph(nodes={len(self._nodes)}, edges={len(self._edges)})"

    def check(self, node) -> None:
        if node not in self._node_set:
            raise UnknownNode(node)

    def outgoing(self, node) -> tuple[tuple[str, float], ...]:
        self.check(node)
        return self._out[node]

    def neighbors(self, node) -> tuple[str, ...]:
        """Nodes joined to ``node`` by an edge in either direction."""
        self.check(node)
        return self._nbrs[node]

    def has_edge(self, src, dst) -> bool:
        return (src, dst) in self._pairs

    def edge_to(self, src, dst) -> float:
        """Heading of the edge ``src -> dst``."""
        for d, h in self.outgoing(src):
            if d == dst:
                return h
        raise InvariantViolation("edge-exists", f"no edge {src!r}->{dst!r}")


def outgoing(graph: EnvGraph, node) -> list[tuple[str, float]]:
    """Outgoing ``(target, heading)`` pairs sorted by ascending heading."""
    return list(graph.outgoing(node))


@dataclass(frozen=True)
class AgentState:
    node: str
    heading: float
    terminated: bool = False

    def to_json(self) -> dict:
        return {"node": self.node, "heading": self.heading, "terminated": self.terminated}

    @classmethod
    def from_json(cls, d: dict) -> "AgentState":
        return cls(str(d["node"]), float(d["heading"]), bool(d["terminated"]))


def heading_index(graph: EnvGraph, node, heading: float) -> int:
    for i, (_, h) in enumerate(graph.outgoing(node)):
        if same_heading(h, heading):
            return i
    raise InvariantViolation("heading-matches-edge", f"heading {heading} matches no outgoing edge of {node!r}")


def arrival_heading(graph: EnvGraph, node, previous: float) -> float:
    """Outgoing heading at ``node`` closest to ``previous``; ties go to the smaller degree."""
    out = graph.outgoing(node)
    return min((h for _, h in out), key=lambda h: (circular_distance(h, previous), h))


def apply_action(graph: EnvGraph, state: AgentState, action: Action) -> AgentState:
    """The transition function.

    Raises ``DeadEnd`` (carrying the terminated arrival state) when FORWARD
    lands on a node without outgoing edges.
    """
    if state.terminated:
        raise AlreadyTerminated(f"episode already terminated at {state.node!r}")
    action = Action(action)
    if action is Action.STOP:
        return AgentState(state.node, state.heading, True)

    out = graph.outgoing(state.node)
    idx = heading_index(graph, state.node, state.heading)
    if action is Action.LEFT:
        return AgentState(state.node, out[(idx - 1) % len(out)][1])
    if action is Action.RIGHT:
        return AgentState(state.node, out[(idx + 1) % len(out)][1])

    nxt = out[idx][0]
    if not graph.outgoing(nxt):
        raise DeadEnd(AgentState(nxt, state.heading, True))
    return AgentState(nxt, arrival_heading(graph, nxt, state.heading))


def is_success(graph: EnvGraph, stop, goal) -> bool:
    """Stopped on the goal or on a node sharing an edge with it."""
    graph.check(stop)
    graph.check(goal)
    return stop == goal or graph.has_edge(stop, goal) or graph.has_edge(goal, stop)


def replay(graph: EnvGraph, start: AgentState, actions: Iterable[Action]) -> list[AgentState]:
    """States visited while applying ``actions`` from ``start`` (start included)."""
    states = [start]
    for a in actions:
        states.append(apply_action(graph, states[-1], a))
    return states
