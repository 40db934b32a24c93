"""Seeded synthetic street worlds.

Nodes are random points in the unit square joined to their nearest
neighbours; edge headings are compass bearings.  Each navigation route
turns by exactly one rotation at its turn points, and every decision point
(a turn, an initial re-orientation, the goal) gets a planted landmark: a
region in the matching view whose feature is a scaled copy of the phrase
embedding.  Turns are planted in the view on the turning side, the goal in
the front view.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .data import HEADING_MODES, LandmarkAnnotation, NavInstance, WorldBundle, validate_instance
from .env import Action, EnvGraph, arrival_heading, heading_index
from .errors import ConfigError
from .extractor import DEFAULT_LEXICON
from .fusion import Panorama, ViewObservation, encode_text

# Modifier pools are chosen so that extraction recovers each phrase verbatim.
COLOURS = ("red", "green", "blue", "yellow", "black", "white", "gray", "brown", "orange", "purple", "pink", "silver")
DESCRIPTORS = ("big", "small", "tall", "short", "wide", "round", "old", "new", "modern", "brick", "glass",
               "metal", "wooden", "stone", "striped", "painted", "rusty", "shiny", "ornate", "corner")
NUMBER_WORDS = ("two", "three")
NO_PLURAL = frozenset({"scaffolding"})
NOUNS = tuple(sorted(DEFAULT_LEXICON))

FORWARD_FILLERS = ("Go forward.", "Walk straight ahead.", "Continue forward.", "Keep going straight.")


@dataclass(frozen=True)
class WorldConfig:
    nodes: int = 20
    branching: int = 3
    route_count: int = 5
    landmarks_per_route: int = 2  # interior turn landmarks; start and goal landmarks come on top
    feature_dim: int = 32
    seed: int = 0
    regions_per_view: int = 4
    heading_mode: str = "random"
    oneway_prob: float = 0.1
    min_route_len: int = 4
    max_route_len: int = 8
    plant_strength: float = 4.0
    region_noise: float = 0.15
    max_phrase_cos: float = 0.25

    def validate(self) -> None:
        if self.nodes < 2:
            raise ConfigError(f"nodes must be >= 2, got {self.nodes}")
        if self.feature_dim < 2:
            raise ConfigError(f"feature_dim must be >= 2, got {self.feature_dim}")
        if self.branching < 1:
            raise ConfigError("branching must be >= 1")
        if self.route_count < 0 or self.landmarks_per_route < 0:
            raise ConfigError("route_count and landmarks_per_route must be non-negative")
        if self.regions_per_view < 1:
            raise ConfigError("regions_per_view must be >= 1")
        if self.heading_mode not in HEADING_MODES:
            raise ConfigError(f"heading_mode must be one of {HEADING_MODES}")
        if not 1 <= self.min_route_len <= self.max_route_len:
            raise ConfigError("need 1 <= min_route_len <= max_route_len")
        if not 0.0 <= self.oneway_prob < 1.0:
            raise ConfigError("oneway_prob must be in [0, 1)")
        longest = min(self.max_route_len, self.nodes - 1)
        if self.route_count and self.landmarks_per_route > longest - 1:
            raise ConfigError(
                f"{self.landmarks_per_route} turns per route do not fit routes of at most {longest} edges"
            )

    def to_json(self) -> dict:
        return asdict(self)


def _bearing(p, q) -> float:
    dx, dy = q[0] - p[0], q[1] - p[1]
    return round(math.degrees(math.atan2(dx, dy)) % 360.0, 2) % 360.0


def _build_graph(cfg: WorldConfig, rng: np.random.Generator) -> EnvGraph:
    n = cfg.nodes
    width = len(str(n - 1))
    ids = [f"n{i:0{width}d}" for i in range(n)]
    pos = rng.uniform(0.0, 1.0, size=(n, 2))
    dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    np.fill_diagonal(dist, np.inf)

    und: set[tuple[int, int]] = set()
    k = min(cfg.branching, n - 1)
    for i in range(n):
        for j in np.argsort(dist[i], kind="stable")[:k]:
            und.add((min(i, int(j)), max(i, int(j))))

    # join components through their closest pair until connected
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in und:
        parent[find(a)] = find(b)
    while len({find(i) for i in range(n)}) > 1:
        best = None
        for i in range(n):
            for j in range(i + 1, n):
                if find(i) != find(j) and (best is None or dist[i, j] < dist[best]):
                    best = (i, j)
        und.add(best)
        parent[find(best[0])] = find(best[1])

    directed: dict[tuple[int, int], float] = {}
    for a, b in sorted(und):
        directed[(a, b)] = _bearing(pos[a], pos[b])
        directed[(b, a)] = _bearing(pos[b], pos[a])
    outdeg = {i: 0 for i in range(n)}
    for a, _ in directed:
        outdeg[a] += 1
    for a, b in sorted(und):
        if rng.random() < cfg.oneway_prob:
            src, dst = (a, b) if rng.random() < 0.5 else (b, a)
            if outdeg[src] >= 2:
                del directed[(src, dst)]
                outdeg[src] -= 1

    edges = []
    used: dict[int, set[float]] = {i: set() for i in range(n)}
    for (a, b), h in sorted(directed.items()):
        while any(abs(h - u) < 1e-6 or abs(abs(h - u) - 360) < 1e-6 for u in used[a]):
            h = round((h + 0.01) % 360.0, 2)
        used[a].add(h)
        edges.append((ids[a], ids[b], h))
    return EnvGraph(ids, edges)


def _plural(noun: str) -> str:
    if noun.endswith(("s", "x", "ch", "sh")):
        return noun + "es"
    if noun.endswith("y") and noun[-2] not in "aeiou":
        return noun[:-1] + "ies"
    return noun + "s"


def _random_phrase(rng: np.random.Generator) -> str:
    noun = NOUNS[rng.integers(len(NOUNS))]
    mods = [COLOURS[rng.integers(len(COLOURS))]]
    if rng.random() < 0.5:
        mods.insert(0, DESCRIPTORS[rng.integers(len(DESCRIPTORS))])
    if noun not in NO_PLURAL and rng.random() < 0.2:
        head = [NUMBER_WORDS[rng.integers(len(NUMBER_WORDS))]]
        noun = _plural(noun)
    else:
        head = ["the" if rng.random() < 0.7 else ("an" if mods[0][0] in "aeiou" else "a")]
    return " ".join(head + mods + [noun])


class _PhrasePool:
    """Hands out phrases unique within a world whose embeddings stay mutually dissimilar."""

    def __init__(self, dim: int, max_cos: float, rng: np.random.Generator):
        self.dim, self.max_cos, self.rng = dim, max_cos, rng
        self.phrases: list[str] = []
        self.vecs = np.zeros((0, dim))

    def draw(self, tries: int = 200) -> str:
        best, best_cos = None, math.inf
        for _ in range(tries):
            p = _random_phrase(self.rng)
            if p in self.phrases:
                continue
            v = encode_text(p, self.dim)
            worst = float((self.vecs @ v).max()) if len(self.vecs) else -1.0
            if worst < best_cos:
                best, best_cos = p, worst
            if worst <= self.max_cos:
                break
        if best is None:
            raise ConfigError("could not draw a fresh landmark phrase")
        self.phrases.append(best)
        self.vecs = np.vstack([self.vecs, encode_text(best, self.dim)])
        return best


def _rotation(graph: EnvGraph, node: str, h_from: float, h_to: float) -> list[Action]:
    out = graph.outgoing(node)
    i, j = heading_index(graph, node, h_from), heading_index(graph, node, h_to)
    k_left, k_right = (i - j) % len(out), (j - i) % len(out)
    if k_left == 0:
        return []
    return [Action.LEFT] * k_left if k_left <= k_right else [Action.RIGHT] * k_right


def _sample_route(graph: EnvGraph, cfg: WorldConfig, rng: np.random.Generator):
    """One candidate route, or None if the random walk gets stuck."""
    starts = [n for n in graph.nodes if graph.outgoing(n)]
    start = starts[rng.integers(len(starts))]
    longest = min(cfg.max_route_len, cfg.nodes - 1)
    shortest = max(cfg.min_route_len, cfg.landmarks_per_route + 1)
    if shortest > longest:
        shortest = longest
    length = int(rng.integers(shortest, longest + 1))
    turns = set(int(t) for t in rng.choice(np.arange(1, length), size=cfg.landmarks_per_route, replace=False)) \
        if cfg.landmarks_per_route else set()

    first = [(d, h) for d, h in graph.outgoing(start) if d != start]
    if not first:
        return None
    dst, h_first = first[rng.integers(len(first))]
    if cfg.heading_mode == "aligned":
        h0 = h_first
    else:
        headings = [h for _, h in graph.outgoing(start)]
        h0 = headings[rng.integers(len(headings))]

    actions: list[Action] = []
    marks: list[tuple[str, str]] = []  # (node, direction) in route order
    rot = _rotation(graph, start, h0, h_first)
    if rot:
        marks.append((start, "left" if rot[0] is Action.LEFT else "right"))
    actions += rot + [Action.FORWARD]
    route = [start, dst]
    seen = {start, dst}
    heading = arrival_heading(graph, dst, h_first)
    for k in range(1, length):
        node = route[-1]
        out = graph.outgoing(node)
        idx = heading_index(graph, node, heading)
        if k in turns:
            options = []
            for act, step in ((Action.LEFT, -1), (Action.RIGHT, 1)):
                d, h = out[(idx + step) % len(out)]
                if h != heading and d not in seen and all(h != o[1] for _, o in options):
                    options.append((act, (d, h)))
            if not options:
                return None
            act, (d, h) = options[rng.integers(len(options))]
            actions += [act, Action.FORWARD]
            marks.append((node, "left" if act is Action.LEFT else "right"))
        else:
            d, h = out[idx]
            if d in seen:
                return None
            actions.append(Action.FORWARD)
        if not graph.outgoing(d):
            return None
        route.append(d)
        seen.add(d)
        heading = arrival_heading(graph, d, h)
    actions.append(Action.STOP)
    marks.append((route[-1], "front"))
    return route, actions, marks, h0


def _instruction(marks, phrases, actions, rng: np.random.Generator) -> str:
    sentences = []
    turn_marks = list(zip(marks[:-1], phrases[:-1]))
    rot_at_start = actions[0] in (Action.LEFT, Action.RIGHT)
    for i, ((_, direction), phrase) in enumerate(turn_marks):
        if i > 0 or not rot_at_start:
            sentences.append(FORWARD_FILLERS[rng.integers(len(FORWARD_FILLERS))])
        sentences.append(f"Turn {direction} at {phrase}.")
    sentences.append(FORWARD_FILLERS[rng.integers(len(FORWARD_FILLERS))])
    sentences.append(f"Stop at {phrases[-1]}.")
    text = " ".join(sentences)
    return text[0].upper() + text[1:]


def generate_world(cfg: WorldConfig | None = None, **overrides) -> WorldBundle:
    """Build a graph, per-node panoramas and ``route_count`` replayable instances."""
    cfg = cfg or WorldConfig()
    if overrides:
        cfg = WorldConfig(**{**asdict(cfg), **overrides})
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    graph = _build_graph(cfg, rng)
    d, R = cfg.feature_dim, cfg.regions_per_view
    views = {
        n: {dr: cfg.region_noise * rng.standard_normal((R, d)) for dr in ("left", "front", "right")}
        for n in graph.nodes
    }
    free = {(n, dr): list(range(R)) for n in graph.nodes for dr in ("left", "front", "right")}
    pool = _PhrasePool(d, cfg.max_phrase_cos, rng)

    instances = []
    attempts = 0
    while len(instances) < cfg.route_count:
        attempts += 1
        if attempts > 500 * max(1, cfg.route_count):
            raise ConfigError(
                f"could only build {len(instances)} of {cfg.route_count} routes; "
                "try more nodes, fewer turns or shorter routes"
            )
        sample = _sample_route(graph, cfg, rng)
        if sample is None:
            continue
        route, actions, marks, h0 = sample
        need: dict[tuple[str, str], int] = {}
        for m in marks:
            need[m] = need.get(m, 0) + 1
        if any(len(free[m]) < c for m, c in need.items()):
            continue
        phrases = [pool.draw() for _ in marks]
        for (node, direction), phrase in zip(marks, phrases):
            slot = free[(node, direction)].pop(int(rng.integers(len(free[(node, direction)]))))
            views[node][direction][slot] = cfg.plant_strength * encode_text(phrase, d) + cfg.region_noise * rng.standard_normal(d)
        inst = NavInstance(
            id=f"w{cfg.seed}-r{len(instances):03d}",
            instruction=_instruction(marks, phrases, actions, rng),
            gold_route=tuple(route),
            gold_actions=tuple(actions),
            landmark_annotations=tuple(
                LandmarkAnnotation(p, node, direction) for (node, direction), p in zip(marks, phrases)
            ),
            initial_heading_mode=cfg.heading_mode,
            initial_heading=h0,
        )
        validate_instance(inst, graph)
        instances.append(inst)

    observations = {
        n: Panorama(tuple(ViewObservation(dr, views[n][dr]) for dr in ("left", "front", "right")))
        for n in graph.nodes
    }
    return WorldBundle(graph, observations, instances)
