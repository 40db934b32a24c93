"""Episode loop, decision policies, traces, the combined loss and training.

Per step the agent recognizes the instruction's landmarks in the current
panorama, updates its topology map, encodes the map against the current
regions and hands the projected feature plus the verbalized messages to a
policy.  Landmarks are extracted once, before the loop starts.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol, Sequence

import numpy as np

from .data import NavInstance, WorldBundle
from .encoder import encode, encode_grad, encoder_dim, encoder_out_dim, init_encoder_params
from .env import Action, AgentState, EnvGraph, apply_action, is_success
from .errors import ComponentDimMismatch, ConfigError, DeadEnd, MissingLogits
from .extractor import DEFAULT_LEXICON, LandmarkSet, extract_landmarks
from .fusion import (
    DEFAULT_TAU,
    DIRECTIONS,
    FusionParams,
    LandmarkRecognizer,
    ScoreReport,
    VerbalizedMessage,
)
from .kernels import ParamBundle, init_uniform, softmax_rows
from .topomap import (
    TopoMap,
    init_topomap,
    node_feature_matrix,
    to_adjacency,
    topo_loss,
    update_on_move,
)

ACTIONS = (Action.FORWARD, Action.LEFT, Action.RIGHT, Action.STOP)
STOPPED, MAX_STEPS, DEAD_END = "stopped", "max_steps", "dead_end"


# -- configuration ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 0.5
    lambda2: float = 0.5

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("loss weights must be non-negative")


@dataclass(frozen=True)
class RunConfig:
    max_steps: int | None = None  # None: 2 * len(gold_route) + 10
    tau: float = DEFAULT_TAU
    seed: int = 0
    rounds: int = 2
    out_dim: int = 16
    max_landmarks: int = 8

    def __post_init__(self):
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")

    def step_limit(self, instance: NavInstance) -> int:
        return self.max_steps if self.max_steps is not None else 2 * len(instance.gold_route) + 10


def episode_seed(seed: int, instance_id: str) -> int:
    h = hashlib.blake2b(f"{seed}:{instance_id}".encode(), digest_size=8).digest()
    return int.from_bytes(h, "little")


# -- components ---------------------------------------------------------------------------------


@dataclass
class Components:
    """Everything the loop needs besides the policy."""

    recognizer: LandmarkRecognizer
    params: ParamBundle  # encoder weights (``enc.*``); extra keys are ignored
    lexicon: frozenset = DEFAULT_LEXICON
    extractor: Callable[[str], LandmarkSet] | None = None

    def extract(self, text: str) -> LandmarkSet:
        if self.extractor is not None:
            return self.extractor(text)
        return extract_landmarks(text, self.lexicon)

    @property
    def dim(self) -> int:
        return encoder_dim(self.params)


def init_agent_params(dim: int, out_dim: int = 16, max_landmarks: int = 8, seed: int = 0) -> ParamBundle:
    """Fresh encoder plus linear-policy weights."""
    rng = np.random.default_rng(seed)
    arrays = init_encoder_params(rng, dim, out_dim)
    fin = out_dim + 3 + max_landmarks + 1
    arrays["pol.W"] = init_uniform(rng, (len(ACTIONS), fin), fin)
    arrays["pol.b"] = np.zeros(len(ACTIONS))
    return ParamBundle(arrays)


def build_components(
    dim: int,
    params: ParamBundle | None = None,
    cfg: RunConfig = RunConfig(),
    noise_std: float = 0.0,
    noise_seed: int = 0,
    fusion: FusionParams | None = None,
) -> Components:
    if params is None:
        params = init_agent_params(dim, cfg.out_dim, cfg.max_landmarks, cfg.seed)
    fusion = fusion or FusionParams.identity(dim, cfg.rounds)
    return Components(LandmarkRecognizer(fusion, cfg.tau, noise_std, noise_seed), params)


# -- policies -------------------------------------------------------------------------------------


@dataclass
class PolicyInput:
    feature: np.ndarray  # projected topology feature
    messages: list[VerbalizedMessage]
    landmarks: tuple[str, ...]
    cursor: int
    step: int

    def direction_flags(self) -> np.ndarray:
        """One-hot (left, front, right) of the message about the cursor landmark, if any."""
        flags = np.zeros(3)
        if self.cursor < len(self.landmarks):
            target = self.landmarks[self.cursor]
            for m in self.messages:
                if m.phrase == target:
                    flags[DIRECTIONS.index(m.direction)] = 1.0
        return flags


class DecisionPolicy(Protocol):
    def reset(self, instance: NavInstance, seed: int) -> None: ...

    def decide(self, inp: PolicyInput) -> tuple[Action, np.ndarray | None]: ...


class OraclePolicy:
    """Replays the gold actions."""

    def reset(self, instance: NavInstance, seed: int) -> None:
        self._gold = instance.gold_actions

    def decide(self, inp: PolicyInput):
        if inp.step < len(self._gold):
            return self._gold[inp.step], None
        return Action.STOP, None


class RandomPolicy:
    def reset(self, instance: NavInstance, seed: int) -> None:
        self._rng = np.random.default_rng(seed)

    def decide(self, inp: PolicyInput):
        return ACTIONS[int(self._rng.integers(len(ACTIONS)))], None


def policy_features(inp: PolicyInput, max_landmarks: int) -> np.ndarray:
    cursor = np.zeros(max_landmarks + 1)
    cursor[min(inp.cursor, max_landmarks)] = 1.0
    return np.concatenate([inp.feature, inp.direction_flags(), cursor])


class LinearPolicy:
    """Affine map from [feature | message flags | cursor one-hot] to action logits; greedy."""

    def __init__(self, params: ParamBundle):
        self.W = params["pol.W"]
        self.b = params["pol.b"]
        self.max_landmarks = self.W.shape[1] - encoder_out_dim(params) - 4

    def reset(self, instance: NavInstance, seed: int) -> None:
        pass

    def logits(self, inp: PolicyInput) -> np.ndarray:
        return self.W @ policy_features(inp, self.max_landmarks) + self.b

    def decide(self, inp: PolicyInput):
        z = self.logits(inp)
        return ACTIONS[int(np.argmax(z))], z


class TeacherForcedPolicy:
    """Takes the gold action while recording the wrapped policy's logits."""

    def __init__(self, inner):
        self.inner = inner

    def reset(self, instance: NavInstance, seed: int) -> None:
        self._gold = instance.gold_actions
        self.inner.reset(instance, seed)

    def decide(self, inp: PolicyInput):
        _, z = self.inner.decide(inp)
        action = self._gold[inp.step] if inp.step < len(self._gold) else Action.STOP
        return action, z


# -- episodes -----------------------------------------------------------------------------------


@dataclass
class StepRecord:
    state: AgentState
    topomap: TopoMap | dict
    score_report: ScoreReport
    messages: list[VerbalizedMessage]
    action: Action
    logits: np.ndarray | None = None
    cursor: int = 0

    def to_json(self, t: int) -> dict:
        topo = self.topomap.snapshot() if isinstance(self.topomap, TopoMap) else self.topomap
        return {
            "t": t,
            "state": self.state.to_json(),
            "topomap": topo,
            "scores": self.score_report.to_json(),
            "messages": [m.to_json() for m in self.messages],
            "action": self.action.value,
            "logits": None if self.logits is None else [float(v) for v in self.logits],
            "cursor": self.cursor,
        }


@dataclass
class StepInputs:
    """Parameter-independent encoder/policy inputs of one step, kept for training."""

    F: np.ndarray
    neighbor_sets: list
    A_norm: np.ndarray
    regions: np.ndarray
    flags: np.ndarray
    cursor: int


@dataclass
class EpisodeTrace:
    instance_id: str
    steps: list[StepRecord]
    final_state: AgentState
    terminal_reason: str
    landmarks: tuple[str, ...] = ()
    inputs: list[StepInputs] | None = field(default=None, repr=False, compare=False)

    @property
    def actions(self) -> list[Action]:
        return [s.action for s in self.steps]

    @property
    def states(self) -> list[AgentState]:
        return [s.state for s in self.steps] + [self.final_state]

    @property
    def stop_node(self) -> str:
        return self.final_state.node

    def to_lines(self, graph: EnvGraph | None = None, goal: str | None = None) -> list[str]:
        lines = [json.dumps(s.to_json(t)) for t, s in enumerate(self.steps)]
        footer: dict[str, Any] = {
            "footer": True,
            "instance_id": self.instance_id,
            "terminal_reason": self.terminal_reason,
            "final_state": self.final_state.to_json(),
            "landmarks": list(self.landmarks),
        }
        if graph is not None and goal is not None:
            footer["success"] = is_success(graph, self.stop_node, goal)
        lines.append(json.dumps(footer))
        return lines


def save_trace(trace: EpisodeTrace, path: str | Path, graph: EnvGraph | None = None, goal: str | None = None):
    Path(path).write_text("\n".join(trace.to_lines(graph, goal)) + "\n", encoding="utf-8")


def load_trace(path: str | Path) -> EpisodeTrace:
    lines = [json.loads(l) for l in Path(path).read_text(encoding="utf-8").splitlines() if l.strip()]
    footer = lines[-1]
    steps = [
        StepRecord(
            AgentState.from_json(r["state"]),
            r["topomap"],
            ScoreReport.from_json(r["scores"]),
            [VerbalizedMessage.from_json(m) for m in r["messages"]],
            Action(r["action"]),
            None if r["logits"] is None else np.asarray(r["logits"]),
            r.get("cursor", 0),
        )
        for r in lines[:-1]
    ]
    return EpisodeTrace(
        footer["instance_id"],
        steps,
        AgentState.from_json(footer["final_state"]),
        footer["terminal_reason"],
        tuple(footer.get("landmarks", ())),
    )


def topomap_from_snapshot(snap: dict) -> TopoMap:
    from types import MappingProxyType

    order = tuple(n["id"] for n in snap["nodes"])
    return TopoMap(
        order=order,
        categories=MappingProxyType({n["id"]: n["category"] for n in snap["nodes"]}),
        features=MappingProxyType({n: np.zeros(0) for n in order}),
        edges=frozenset(tuple(e) for e in snap["edges"]),
        current=snap["current"],
        step=snap["step"],
    )


def run_episode(
    world: WorldBundle,
    instance: NavInstance,
    components: Components,
    policy,
    cfg: RunConfig = RunConfig(),
    record_inputs: bool = False,
) -> EpisodeTrace:
    graph, obs = world.graph, world.node_observations
    dim = components.dim
    if world.feature_dim != dim or components.recognizer.dim != dim:
        raise ComponentDimMismatch(
            f"world features are {world.feature_dim}-d, encoder {dim}-d, recognizer {components.recognizer.dim}-d"
        )
    landmarks = components.extract(instance.instruction).phrases
    policy.reset(instance, episode_seed(cfg.seed, instance.id))

    def appearance(n):
        return obs[n].mean_feature()

    state = instance.initial_state()
    topo = init_topomap(graph, state.node, appearance)
    cursor = 0
    steps: list[StepRecord] = []
    inputs: list[StepInputs] = []
    reason = MAX_STEPS
    for t in range(cfg.step_limit(instance)):
        pano = obs[state.node]
        if landmarks:
            report, messages = components.recognizer(state.node, pano, landmarks)
        else:
            report, messages = ScoreReport({}), []
        F = node_feature_matrix(topo)
        nbrs = topo.neighbor_sets()
        A = to_adjacency(topo, normalize=True).A
        regions = pano.all_regions()
        feature, _ = encode(components.params, F, nbrs, A, regions)
        inp = PolicyInput(feature, messages, landmarks, cursor, t)
        action, logits = policy.decide(inp)
        action = Action(action)
        steps.append(StepRecord(state, topo, report, messages, action, logits, cursor))
        if record_inputs:
            inputs.append(StepInputs(F, nbrs, A, regions, inp.direction_flags(), cursor))

        if action in (Action.LEFT, Action.RIGHT) and inp.direction_flags().any():
            cursor += 1
        try:
            nxt = apply_action(graph, state, action)
        except DeadEnd as exc:
            state = exc.state
            reason = DEAD_END
            break
        if nxt.node != state.node:
            topo = update_on_move(topo, graph, nxt.node, appearance)
        state = nxt
        if action is Action.STOP:
            reason = STOPPED
            break
    return EpisodeTrace(instance.id, steps, state, reason, tuple(landmarks), inputs if record_inputs else None)


def run_episodes(world, instances, components, make_policy: Callable[[], Any], cfg=RunConfig(), jobs: int = 1):
    """Run one episode per instance; results come back in instance order whatever ``jobs`` is."""
    instances = list(instances)
    if jobs <= 1 or len(instances) <= 1:
        return [run_episode(world, inst, components, make_policy(), cfg) for inst in instances]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(run_episode, world, inst, components, make_policy(), cfg) for inst in instances]
        return [f.result() for f in futures]


# -- loss ---------------------------------------------------------------------------------------------


def gold_maps(graph: EnvGraph, instance: NavInstance, count: int) -> list[TopoMap]:
    """Topology maps at each of the first ``count`` steps of the gold replay."""
    state = instance.initial_state()
    topo = init_topomap(graph, state.node)
    maps = []
    for t in range(count):
        maps.append(topo)
        if t < len(instance.gold_actions) and not state.terminated:
            nxt = apply_action(graph, state, instance.gold_actions[t])
            if nxt.node != state.node:
                topo = update_on_move(topo, graph, nxt.node)
            state = nxt
    return maps


def topology_loss(trace: EpisodeTrace, instance: NavInstance, graph: EnvGraph) -> float:
    if not trace.steps:
        return 0.0
    gold = gold_maps(graph, instance, len(trace.steps))
    total = 0.0
    for step, C in zip(trace.steps, gold):
        S = step.topomap if isinstance(step.topomap, TopoMap) else topomap_from_snapshot(step.topomap)
        total += topo_loss(S, C)
    return total / len(trace.steps)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max()
    return z - m - math.log(np.exp(z - m).sum())


def action_cross_entropy(trace: EpisodeTrace, instance: NavInstance) -> float:
    n = min(len(trace.steps), len(instance.gold_actions))
    if n == 0:
        return 0.0
    total = 0.0
    for step, gold in zip(trace.steps[:n], instance.gold_actions[:n]):
        if step.logits is None:
            raise MissingLogits(f"{trace.instance_id}: step without action logits")
        total -= _log_softmax(np.asarray(step.logits, dtype=np.float64))[ACTIONS.index(gold)]
    return total / n


def compute_loss(trace: EpisodeTrace, instance: NavInstance, cfg: LossConfig, graph: EnvGraph) -> float:
    """``lambda1 * topology loss + lambda2 * action cross-entropy``.

    A zero weight skips its term entirely, so logits are only required when
    ``lambda2 > 0``.
    """
    if any(s.logits is None for s in trace.steps) and cfg.lambda2 > 0:
        raise MissingLogits(f"{trace.instance_id}: trace carries no action logits")
    loss = 0.0
    if cfg.lambda1:
        loss += cfg.lambda1 * topology_loss(trace, instance, graph)
    if cfg.lambda2:
        loss += cfg.lambda2 * action_cross_entropy(trace, instance)
    return loss


def teacher_forced_loss_and_grad(
    params: ParamBundle,
    inputs: Sequence[StepInputs],
    gold_actions: Sequence[Action],
    topo_term: float,
    cfg: LossConfig,
) -> tuple[float, ParamBundle]:
    """Loss and its gradient for one teacher-forced episode from cached step inputs.

    ``topo_term`` is the (parameter independent) mean topology loss of the episode.
    """
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    n = min(len(inputs), len(gold_actions))
    ce = 0.0
    W, b = params["pol.W"], params["pol.b"]
    K = W.shape[1] - encoder_out_dim(params) - 4
    for inp, gold in zip(inputs[:n], gold_actions[:n]):
        feat, cache = encode(params, inp.F, inp.neighbor_sets, inp.A_norm, inp.regions)
        cursor = np.zeros(K + 1)
        cursor[min(inp.cursor, K)] = 1.0
        x = np.concatenate([feat, inp.flags, cursor])
        z = W @ x + b
        p = softmax_rows(z[None, :])[0]
        g = ACTIONS.index(gold)
        ce -= math.log(p[g])
        dz = p.copy()
        dz[g] -= 1.0
        dz *= cfg.lambda2 / n
        grads["pol.W"] += np.outer(dz, x)
        grads["pol.b"] += dz
        dfeat = (W.T @ dz)[: feat.shape[0]]
        for k, v in encode_grad(params, dfeat, cache).items():
            grads[k] += v
    ce = ce / n if n else 0.0
    return cfg.lambda1 * topo_term + cfg.lambda2 * ce, ParamBundle(grads)


# -- training -------------------------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    lr: float = 0.5
    seed: int = 0
    loss: LossConfig = LossConfig()
    out_dim: int = 16
    max_landmarks: int = 8
    rounds: int = 2

    def validate(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.lr < 0 or not math.isfinite(self.lr):
            raise ConfigError("lr must be a finite non-negative number")


@dataclass
class TrainResult:
    params: ParamBundle
    losses: list[float]


def _episode_cache(world: WorldBundle, components: Components, cfg: RunConfig, loss_cfg: LossConfig):
    cached = []
    for inst in world.instances:
        trace = run_episode(world, inst, components, OraclePolicy(), cfg, record_inputs=True)
        topo_term = topology_loss(trace, inst, world.graph) if loss_cfg.lambda1 else 0.0
        cached.append((trace.inputs, inst.gold_actions, topo_term))
    return cached


def train_policy(
    worlds: Sequence[WorldBundle], cfg: TrainConfig = TrainConfig(), init: ParamBundle | None = None
) -> TrainResult:
    """Teacher-forced gradient descent, one update per gold episode, fixed world/instance order."""
    cfg.validate()
    if not worlds:
        raise ConfigError("train_policy needs at least one world")
    dim = worlds[0].feature_dim
    if any(w.feature_dim != dim for w in worlds):
        raise ConfigError("all training worlds must share one feature dim")
    params = init if init is not None else init_agent_params(dim, cfg.out_dim, cfg.max_landmarks, cfg.seed)
    if cfg.epochs == 0:
        return TrainResult(params, [])
    run_cfg = RunConfig(seed=cfg.seed, rounds=cfg.rounds, out_dim=cfg.out_dim, max_landmarks=cfg.max_landmarks)
    components = build_components(dim, params, run_cfg)
    episodes = [ep for w in worlds for ep in _episode_cache(w, components, run_cfg, cfg.loss)]
    if not episodes:
        raise ConfigError("training worlds contain no instances")
    theta = params.to_vector()
    losses = []
    for _ in range(cfg.epochs):
        total = 0.0
        for inputs, gold, topo_term in episodes:
            loss, grad = teacher_forced_loss_and_grad(params, inputs, gold, topo_term, cfg.loss)
            total += loss
            if cfg.lr:
                theta = theta - cfg.lr * grad.to_vector()
                params = params.from_vector(theta)
        losses.append(total / len(episodes))
    return TrainResult(params, losses)
