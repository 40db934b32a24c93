"""On-disk formats: environment graphs, navigation instances, landmark
annotation records and whole world bundles; record splits and statistics.

File layouts (all UTF-8, headings in decimal degrees):

* graph JSON: ``{"nodes": [{"id": ..., "terminal": false}], "edges": [{"from", "to", "heading"}]}``
* instances JSONL: one :class:`NavInstance` object per line
* annotations JSON: ``{"records": [{"image_id", "bbox": [x, y, w, h], "caption", "category"}]}``
* a world bundle is a directory holding ``graph.json``, ``observations.json``
  and ``instances.jsonl``
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .env import Action, AgentState, EnvGraph, apply_action, same_heading
from .errors import DeadEnd, EmptyDataset, InvariantViolation, ParseError, RouteInconsistent, StreetNavError
from .fusion import DIRECTIONS, Panorama

HEADING_MODES = ("random", "aligned")
LANDMARK_CATEGORIES = ("traffic light", "signpost", "mailbox", "bus stop", "building", "other")


# -- env graph -----------------------------------------------------------------------


def graph_to_json(graph: EnvGraph) -> dict:
    nodes = []
    for n in graph.nodes:
        rec: dict[str, Any] = {"id": n}
        if n in graph.terminal:
            rec["terminal"] = True
        nodes.append(rec)
    return {
        "nodes": nodes,
        "edges": [{"from": e.src, "to": e.dst, "heading": e.heading} for e in graph.edges],
    }


def graph_from_json(doc: Any) -> EnvGraph:
    if not isinstance(doc, Mapping):
        raise ParseError("graph document must be an object")
    for key in ("nodes", "edges"):
        if not isinstance(doc.get(key), list):
            raise ParseError("expected a list", field=key)
    nodes, terminal = [], []
    for i, rec in enumerate(doc["nodes"]):
        if not isinstance(rec, Mapping) or "id" not in rec:
            raise ParseError("node entry needs an 'id'", field=f"nodes[{i}].id")
        nodes.append(str(rec["id"]))
        if rec.get("terminal", False):
            terminal.append(str(rec["id"]))
    edges = []
    for i, rec in enumerate(doc["edges"]):
        for key in ("from", "to", "heading"):
            if not isinstance(rec, Mapping) or key not in rec:
                raise ParseError("missing key", field=f"edges[{i}].{key}")
        try:
            heading = float(rec["heading"])
        except (TypeError, ValueError) as exc:
            raise ParseError(f"heading is not a number: {rec['heading']!r}", field=f"edges[{i}].heading") from exc
        if not np.isfinite(heading):
            raise ParseError("heading must be finite", field=f"edges[{i}].heading")
        edges.append((str(rec["from"]), str(rec["to"]), heading))
    return EnvGraph(nodes, edges, terminal)


def _read_json(path: str | Path) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from exc


def load_env_graph(path: str | Path) -> EnvGraph:
    return graph_from_json(_read_json(path))


def save_env_graph(graph: EnvGraph, path: str | Path) -> None:
    _write_json(path, graph_to_json(graph))


def _write_json(path: str | Path, doc: Any) -> None:
    Path(path).write_text(json.dumps(doc, ensure_ascii=False, indent=1) + "\n", encoding="utf-8")


# -- navigation instances ---------------------------------------------------------------


@dataclass(frozen=True)
class LandmarkAnnotation:
    phrase: str
    node: str
    direction: str

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"annotation direction must be one of {DIRECTIONS}, got {self.direction!r}")


@dataclass(frozen=True)
class NavInstance:
    id: str
    instruction: str
    gold_route: tuple[str, ...]
    gold_actions: tuple[Action, ...]
    landmark_annotations: tuple[LandmarkAnnotation, ...] = ()
    initial_heading_mode: str = "aligned"
    initial_heading: float = 0.0

    @property
    def start(self) -> str:
        return self.gold_route[0]

    @property
    def goal(self) -> str:
        return self.gold_route[-1]

    def initial_state(self) -> AgentState:
        return AgentState(self.start, self.initial_heading)

    def landmark_phrases(self) -> list[str]:
        return [a.phrase for a in self.landmark_annotations]

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "instruction": self.instruction,
            "gold_route": list(self.gold_route),
            "gold_actions": [a.value for a in self.gold_actions],
            "landmark_annotations": [
                {"phrase": a.phrase, "node": a.node, "direction": a.direction} for a in self.landmark_annotations
            ],
            "initial_heading_mode": self.initial_heading_mode,
            "initial_heading": self.initial_heading,
        }

    @classmethod
    def from_json(cls, rec: Mapping, line: int | None = None) -> "NavInstance":
        def need(key, kind):
            if key not in rec:
                raise ParseError("missing key", line=line, field=key)
            if not isinstance(rec[key], kind):
                raise ParseError(f"expected {getattr(kind, '__name__', kind)}", line=line, field=key)
            return rec[key]

        try:
            actions = tuple(Action(a) for a in need("gold_actions", list))
        except ValueError as exc:
            raise ParseError(str(exc), line=line, field="gold_actions") from exc
        anns = []
        for i, a in enumerate(need("landmark_annotations", list)):
            try:
                anns.append(LandmarkAnnotation(str(a["phrase"]), str(a["node"]), str(a["direction"])))
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(str(exc), line=line, field=f"landmark_annotations[{i}]") from exc
        mode = need("initial_heading_mode", str)
        if mode not in HEADING_MODES:
            raise ParseError(f"must be one of {HEADING_MODES}", line=line, field="initial_heading_mode")
        route = tuple(str(n) for n in need("gold_route", list))
        if not route:
            raise ParseError("gold route is empty", line=line, field="gold_route")
        heading = rec.get("initial_heading")
        if not isinstance(heading, (int, float)) or isinstance(heading, bool):
            raise ParseError("expected a number", line=line, field="initial_heading")
        return cls(
            id=str(need("id", (str, int))),
            instruction=need("instruction", str),
            gold_route=route,
            gold_actions=actions,
            landmark_annotations=tuple(anns),
            initial_heading_mode=mode,
            initial_heading=float(heading),
        )


def node_sequence(states: Iterable[AgentState]) -> list[str]:
    """Node ids along a state sequence with consecutive repeats collapsed."""
    seq: list[str] = []
    for s in states:
        if not seq or seq[-1] != s.node:
            seq.append(s.node)
    return seq


def validate_instance(inst: NavInstance, graph: EnvGraph) -> None:
    """Check the replay, annotation and heading-mode invariants of one instance."""
    for n in inst.gold_route:
        if n not in graph:
            raise RouteInconsistent(f"{inst.id}: route node {n!r} not in graph")
    if len(inst.gold_route) > 1:
        a, b = inst.gold_route[:2]
        if not graph.has_edge(a, b):
            raise RouteInconsistent(f"{inst.id}: route is not a path in the graph")
        if inst.initial_heading_mode == "aligned" and not same_heading(graph.edge_to(a, b), inst.initial_heading):
            raise InvariantViolation("aligned-initial-heading", f"{inst.id}: initial heading is not the route's first heading")
    if not any(same_heading(h, inst.initial_heading) for _, h in graph.outgoing(inst.start)):
        raise RouteInconsistent(f"{inst.id}: initial heading {inst.initial_heading} matches no outgoing edge")
    state = inst.initial_state()
    states = [state]
    try:
        for a in inst.gold_actions:
            state = apply_action(graph, state, a)
            states.append(state)
    except DeadEnd as exc:
        raise RouteInconsistent(f"{inst.id}: gold actions run into a dead end at {exc.state.node!r}") from exc
    except StreetNavError as exc:
        raise RouteInconsistent(f"{inst.id}: gold actions do not replay: {exc}") from exc
    if not state.terminated or inst.gold_actions[-1] is not Action.STOP:
        raise RouteInconsistent(f"{inst.id}: gold actions must end with STOP")
    visited = node_sequence(states)
    if tuple(visited) != inst.gold_route:
        raise RouteInconsistent(f"{inst.id}: gold actions visit {visited}, route is {list(inst.gold_route)}")
    route_nodes = set(inst.gold_route)
    for a in inst.landmark_annotations:
        if a.node not in route_nodes:
            raise InvariantViolation("annotation-on-route", f"{inst.id}: annotation node {a.node!r} is off the route")


def load_instances(path: str | Path, graph: EnvGraph | None = None) -> list[NavInstance]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(exc.msg, line=lineno) from exc
            if not isinstance(rec, Mapping):
                raise ParseError("instance line must be an object", line=lineno)
            inst = NavInstance.from_json(rec, line=lineno)
            if graph is not None:
                validate_instance(inst, graph)
            out.append(inst)
    return out


def save_instances(instances: Iterable[NavInstance], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_json(), ensure_ascii=False) + "\n")


# -- world bundle ----------------------------------------------------------------------------


@dataclass
class WorldBundle:
    graph: EnvGraph
    node_observations: dict[str, Panorama]
    instances: list[NavInstance] = field(default_factory=list)

    @property
    def feature_dim(self) -> int:
        return next(iter(self.node_observations.values())).dim

    def instance(self, inst_id: str) -> NavInstance:
        for inst in self.instances:
            if inst.id == inst_id:
                return inst
        raise KeyError(inst_id)

    def validate(self) -> None:
        for n in self.graph.nodes:
            if n not in self.node_observations:
                raise InvariantViolation("observation-per-node", f"node {n!r} has no panorama")
        for inst in self.instances:
            validate_instance(inst, self.graph)

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        save_env_graph(self.graph, d / "graph.json")
        obs = {n: self.node_observations[n].to_json() for n in self.graph.nodes if n in self.node_observations}
        (d / "observations.json").write_text(json.dumps(obs) + "\n", encoding="utf-8")
        save_instances(self.instances, d / "instances.jsonl")

    @classmethod
    def load(cls, directory: str | Path, validate: bool = True) -> "WorldBundle":
        d = Path(directory)
        graph = load_env_graph(d / "graph.json")
        raw = _read_json(d / "observations.json")
        obs = {}
        for n, doc in raw.items():
            try:
                obs[n] = Panorama.from_json(doc)
            except (KeyError, ValueError) as exc:
                raise ParseError(f"bad panorama for node {n!r}: {exc}", field=f"observations.{n}") from exc
        bundle = cls(graph, obs, load_instances(d / "instances.jsonl", graph if validate else None))
        if validate:
            bundle.validate()
        return bundle


# -- landmark annotation records --------------------------------------------------------------


@dataclass(frozen=True)
class LandmarkRecord:
    image_id: str
    bbox: tuple[float, float, float, float]
    caption: str
    category: str

    def __post_init__(self):
        if len(self.bbox) != 4:
            raise InvariantViolation("bbox-shape", f"{self.image_id}: bbox needs 4 numbers")
        if not (self.bbox[2] > 0 and self.bbox[3] > 0):
            raise InvariantViolation("bbox-positive", f"{self.image_id}: bbox width and height must be > 0")
        if self.category not in LANDMARK_CATEGORIES:
            raise InvariantViolation("landmark-category", f"{self.image_id}: unknown category {self.category!r}")

    def to_json(self) -> dict:
        return {"image_id": self.image_id, "bbox": list(self.bbox), "caption": self.caption, "category": self.category}


def load_landmark_records(path: str | Path) -> list[LandmarkRecord]:
    doc = _read_json(path)
    if not isinstance(doc, Mapping) or not isinstance(doc.get("records"), list):
        raise ParseError("expected an object with a 'records' list", field="records")
    out = []
    for i, rec in enumerate(doc["records"]):
        try:
            bbox = tuple(float(v) for v in rec["bbox"])
            out.append(LandmarkRecord(str(rec["image_id"]), bbox, str(rec["caption"]), str(rec["category"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(str(exc), field=f"records[{i}]") from exc
    return out


def save_landmark_records(records: Iterable[LandmarkRecord], path: str | Path) -> None:
    _write_json(path, {"records": [r.to_json() for r in records]})


@dataclass(frozen=True)
class SplitAssignment:
    train: tuple
    val: tuple
    test: tuple

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)


def _record_id(r):
    return r.image_id if isinstance(r, LandmarkRecord) else r


def split_records(records: Sequence, ratio: Sequence[float] = (6, 2, 2), seed: int = 0) -> SplitAssignment:
    """Shuffle deterministically and split; val/test sizes are floored, the remainder goes to train."""
    if not records:
        raise EmptyDataset("nothing to split")
    if len(ratio) != 3 or any(r < 0 for r in ratio) or sum(ratio) <= 0:
        raise ValueError(f"ratio must be three non-negative weights, got {ratio}")
    ids = [_record_id(r) for r in records]
    if len(set(ids)) != len(ids):
        raise InvariantViolation("unique-record-ids", "record ids must be unique")
    n = len(ids)
    total = float(sum(ratio))
    n_val = int(n * ratio[1] // total)
    n_test = int(n * ratio[2] // total)
    perm = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in perm]
    n_train = n - n_val - n_test
    return SplitAssignment(
        tuple(shuffled[:n_train]),
        tuple(shuffled[n_train : n_train + n_val]),
        tuple(shuffled[n_train + n_val :]),
    )


def dataset_stats(records: Sequence[LandmarkRecord]) -> dict:
    if not records:
        raise EmptyDataset("no records")
    words = [len(r.caption.strip().split()) for r in records]
    hist = Counter(r.category for r in records)
    return {
        "count": len(records),
        "avg_caption_words": sum(words) / len(words),
        "category_histogram": {c: hist.get(c, 0) for c in LANDMARK_CATEGORIES},
    }
