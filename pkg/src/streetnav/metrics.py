"""Navigation metrics: stop-to-goal hop distance, task completion and
key-point accuracy, plus message error counts for recognition threshold
studies.

Metrics are accumulated as raw counts in :class:`EvalResult` so results
from several worlds combine exactly; percentages are derived on demand.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Sequence

from .data import NavInstance
from .env import Action, EnvGraph, is_success
from .errors import EmptyInput, Unreachable
from .extractor import match_key


def _bfs(graph: EnvGraph, src: str, dst: str, directed: bool) -> int | None:
    if src == dst:
        return 0
    seen = {src}
    queue = deque([(src, 0)])
    while queue:
        node, d = queue.popleft()
        nxt = [n for n, _ in graph.outgoing(node)] if directed else graph.neighbors(node)
        for n in nxt:
            if n == dst:
                return d + 1
            if n not in seen:
                seen.add(n)
                queue.append((n, d + 1))
    return None


def spd(graph: EnvGraph, stop: str, goal: str) -> int:
    """Hop count of the shortest directed path from ``stop`` to ``goal``.

    Falls back to the undirected graph when no directed path exists; raises
    :class:`Unreachable` when the two nodes are disconnected altogether.
    """
    graph.check(stop)
    graph.check(goal)
    d = _bfs(graph, stop, goal, directed=True)
    if d is None:
        d = _bfs(graph, stop, goal, directed=False)
    if d is None:
        raise Unreachable(f"{goal!r} is not reachable from {stop!r}")
    return d


def round_half_up(value: float, digits: int = 1) -> float:
    q = Decimal(1).scaleb(-digits)
    return float(Decimal(repr(value)).quantize(q, rounding=ROUND_HALF_UP))


def keypoint_positions(instance: NavInstance) -> list[int]:
    """Route positions that count as key points: start, annotated nodes and the goal."""
    annotated = {a.node for a in instance.landmark_annotations}
    last = len(instance.gold_route) - 1
    return [k for k, n in enumerate(instance.gold_route) if k == 0 or k == last or n in annotated]


def gold_keypoint_actions(instance: NavInstance) -> dict[int, Action]:
    """Route position -> first gold action taken there.

    Gold routes never hit dead ends, so every FORWARD advances one position.
    """
    out: dict[int, Action] = {}
    pos = 0
    for a in instance.gold_actions:
        out.setdefault(pos, a)
        if a is Action.FORWARD:
            pos += 1
    return out


def keypoint_counts(trace, instance: NavInstance) -> tuple[int, int]:
    """(correct, total) key-point decisions for one episode.

    A key point is judged at the first decision the agent makes after
    arriving there while its visited node sequence still equals the gold
    route prefix.  Key points the agent never reaches that way count as
    incorrect.
    """
    keypoints = set(keypoint_positions(instance))
    gold = gold_keypoint_actions(instance)
    judged: set[int] = set()
    correct = 0
    path: list[str] = []
    prev = None
    for step in trace.steps:
        node = step.state.node
        arrived = node != prev
        if arrived:
            path.append(node)
            prev = node
        on_prefix = path == list(instance.gold_route[: len(path)])
        k = len(path) - 1
        if arrived and on_prefix and k in keypoints and k not in judged:
            judged.add(k)
            correct += step.action == gold.get(k, Action.STOP)
    return correct, len(keypoints)


def tc(results: Sequence[tuple], graph: EnvGraph) -> float:
    """Percentage of ``(trace, instance)`` episodes that stopped at or next to the goal."""
    if not results:
        raise EmptyInput("no episodes")
    return 100.0 * sum(is_success(graph, t.stop_node, i.goal) for t, i in results) / len(results)


def kpa(results: Sequence[tuple]) -> float:
    """Key-point accuracy in percent over ``(trace, instance)`` episodes."""
    if not results:
        raise EmptyInput("no episodes")
    counts = [keypoint_counts(t, i) for t, i in results]
    return 100.0 * sum(c for c, _ in counts) / sum(n for _, n in counts)


@dataclass(frozen=True)
class EvalResult:
    episodes: int
    successes: int
    spd_sum: float
    spd_count: int
    kpa_correct: int
    kpa_total: int
    unreachable: int = 0

    @property
    def tc(self) -> float:
        return 100.0 * self.successes / self.episodes

    @property
    def spd(self) -> float:
        return self.spd_sum / self.spd_count if self.spd_count else float("nan")

    @property
    def kpa(self) -> float:
        return 100.0 * self.kpa_correct / self.kpa_total if self.kpa_total else float("nan")

    @classmethod
    def combine(cls, results: Iterable["EvalResult"]) -> "EvalResult":
        results = list(results)
        if not results:
            raise EmptyInput("nothing to combine")
        fields = asdict(results[0]).keys()
        return cls(**{f: sum(getattr(r, f) for r in results) for f in fields})

    def summary(self) -> dict:
        return {
            "SPD": round(self.spd, 3),
            "KPA": round_half_up(self.kpa),
            "TC": round_half_up(self.tc),
            "episodes": self.episodes,
            "unreachable": self.unreachable,
        }

    def to_json(self) -> str:
        return json.dumps({**asdict(self), "summary": self.summary()}, indent=1, sort_keys=True)

    def table(self, label: str = "agent") -> str:
        s = self.summary()
        head = f"{'method':<16}{'SPD↓':>10}{'KPA↑':>10}{'TC↑':>10}"
        row = f"{label:<16}{s['SPD']:>10.2f}{s['KPA']:>10.1f}{s['TC']:>10.1f}"
        return head + "\n" + row


def evaluate(results: Sequence[tuple], graph: EnvGraph) -> EvalResult:
    """Score ``(trace, instance)`` pairs that were all run on ``graph``.

    Episodes whose stop node cannot reach the goal at all are left out of
    the SPD mean and counted in ``unreachable``.
    """
    if not results:
        raise EmptyInput("no episodes to evaluate")
    successes = spd_count = kc = kt = unreachable = 0
    spd_sum = 0.0
    for trace, inst in results:
        successes += is_success(graph, trace.stop_node, inst.goal)
        try:
            spd_sum += spd(graph, trace.stop_node, inst.goal)
            spd_count += 1
        except Unreachable:
            unreachable += 1
        c, t = keypoint_counts(trace, inst)
        kc += c
        kt += t
    return EvalResult(len(results), successes, spd_sum, spd_count, kc, kt, unreachable)


def message_errors(trace, instance: NavInstance) -> tuple[int, int]:
    """(false positives, false negatives) of the landmark messages along a trace.

    A message is a false positive unless its phrase is annotated at that
    node in that direction.  Each step at an annotated node whose
    instruction landmark got no message in the annotated direction is a
    false negative.
    """

    gold: dict[str, set[tuple[str, str]]] = {}
    for a in instance.landmark_annotations:
        gold.setdefault(a.node, set()).add((match_key(a.phrase), a.direction))
    mentioned = {match_key(p) for p in trace.landmarks}
    fp = fn = 0
    for step in trace.steps:
        here = gold.get(step.state.node, set())
        said = {(match_key(m.phrase), m.direction) for m in step.messages}
        fp += len(said - here)
        fn += sum(1 for key in here if key[0] in mentioned and key not in said)
    return fp, fn
