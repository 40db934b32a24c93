from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from streetnav.agent import (
    ACTIONS,
    DEAD_END,
    MAX_STEPS,
    STOPPED,
    LinearPolicy,
    LossConfig,
    OraclePolicy,
    RandomPolicy,
    RunConfig,
    TeacherForcedPolicy,
    TrainConfig,
    action_cross_entropy,
    build_components,
    compute_loss,
    gold_maps,
    init_agent_params,
    load_trace,
    run_episode,
    run_episodes,
    save_trace,
    train_policy,
)
from streetnav.data import NavInstance, WorldBundle
from streetnav.env import Action, AgentState, EnvGraph, apply_action, is_success
from streetnav.errors import ComponentDimMismatch, ConfigError, DeadEnd, MissingLogits
from streetnav.fusion import DIRECTIONS, Panorama, ViewObservation
from streetnav.gradcheck import loss_case
from streetnav.topomap import topo_loss


class Forever:
    """Never stops: always turns left."""

    def reset(self, instance, seed):
        pass

    def decide(self, inp):
        return Action.LEFT, np.zeros(4)


@pytest.fixture(scope="module")
def comps(small_world):
    return build_components(small_world.feature_dim)


def check_replay(world, inst, trace):
    states = [inst.initial_state()]
    for a in trace.actions:
        try:
            states.append(apply_action(world.graph, states[-1], a))
        except DeadEnd as exc:
            states.append(exc.state)
    assert states == trace.states


def test_oracle_follows_gold(small_world, comps):
    for inst in small_world.instances:
        tr = run_episode(small_world, inst, comps, OraclePolicy())
        assert tuple(tr.actions) == inst.gold_actions
        assert tr.terminal_reason == STOPPED
        assert is_success(small_world.graph, tr.stop_node, inst.goal)
        check_replay(small_world, inst, tr)


def test_max_steps_truncation(small_world, comps):
    tr = run_episode(small_world, small_world.instances[0], comps, Forever(), RunConfig(max_steps=1))
    assert len(tr.steps) == 1 and tr.terminal_reason == MAX_STEPS


def test_random_policy_is_reproducible(small_world, comps):
    for inst in small_world.instances:
        a = run_episode(small_world, inst, comps, RandomPolicy(), RunConfig(seed=4))
        b = run_episode(small_world, inst, comps, RandomPolicy(), RunConfig(seed=4))
        assert a.to_lines() == b.to_lines()
        check_replay(small_world, inst, a)
        assert len(a.states) <= RunConfig().step_limit(inst) + 1
        assert (a.terminal_reason == STOPPED) == (bool(a.actions) and a.actions[-1] is Action.STOP)


def test_parallel_matches_serial(small_world, comps):
    serial = run_episodes(small_world, small_world.instances, comps, RandomPolicy, RunConfig(seed=2), jobs=1)
    parallel = run_episodes(small_world, small_world.instances, comps, RandomPolicy, RunConfig(seed=2), jobs=2)
    assert [t.to_lines() for t in serial] == [t.to_lines() for t in parallel]


def test_dead_end_recorded():
    g = EnvGraph(["A", "B"], [("A", "B", 0.0)], terminal=["B"])
    rng = np.random.default_rng(0)
    pano = Panorama(tuple(ViewObservation(d, rng.standard_normal((2, 8))) for d in DIRECTIONS))
    inst = NavInstance("x", "Go.", ("A",), (Action.STOP,), initial_heading=0.0)
    world = WorldBundle(g, {"A": pano, "B": pano}, [inst])

    class Go:
        def reset(self, instance, seed):
            pass

        def decide(self, inp):
            return Action.FORWARD, None

    tr = run_episode(world, inst, build_components(8), Go())
    assert tr.terminal_reason == DEAD_END
    assert tr.final_state == AgentState("B", 0.0, True)


def test_component_dim_mismatch(small_world):
    with pytest.raises(ComponentDimMismatch):
        run_episode(small_world, small_world.instances[0], build_components(small_world.feature_dim + 1), OraclePolicy())


def test_trace_round_trip(tmp_path, small_world, comps):
    inst = small_world.instances[0]
    params = comps.params
    tr = run_episode(small_world, inst, comps, TeacherForcedPolicy(LinearPolicy(params)))
    save_trace(tr, tmp_path / "t.jsonl", small_world.graph, inst.goal)
    back = load_trace(tmp_path / "t.jsonl")
    assert back.actions == tr.actions and back.states == tr.states
    assert back.terminal_reason == tr.terminal_reason
    cfg = LossConfig()
    assert compute_loss(back, inst, cfg, small_world.graph) == pytest.approx(
        compute_loss(tr, inst, cfg, small_world.graph), abs=1e-12)


def test_loss_zero_for_oracle_with_confident_logits(small_world, comps):
    inst = small_world.instances[0]
    tr = run_episode(small_world, inst, comps, OraclePolicy())
    steps = [replace(s, logits=np.array([1e3 if a is s.action else 0.0 for a in ACTIONS])) for s in tr.steps]
    assert compute_loss(replace(tr, steps=steps), inst, LossConfig(), small_world.graph) == 0.0


def test_loss_is_hand_weighted_sum(small_world, comps):
    rng = np.random.default_rng(0)
    inst = small_world.instances[1]
    tr = run_episode(small_world, inst, comps, RandomPolicy(), RunConfig(max_steps=5, seed=9))
    steps = [replace(s, logits=rng.standard_normal(4)) for s in tr.steps]
    tr = replace(tr, steps=steps)
    gold = gold_maps(small_world.graph, inst, len(steps))
    lt = sum(topo_loss(s.topomap, c) for s, c in zip(steps, gold)) / len(steps)
    n = min(len(steps), len(inst.gold_actions))
    ce = 0.0
    for s, g in zip(steps[:n], inst.gold_actions[:n]):
        z = s.logits
        ce += np.log(np.exp(z).sum()) - z[ACTIONS.index(g)]
    ce /= n
    for l1, l2 in [(0.5, 0.5), (0.3, 1.2), (0.0, 1.0), (1.0, 0.0)]:
        assert compute_loss(tr, inst, LossConfig(l1, l2), small_world.graph) == pytest.approx(l1 * lt + l2 * ce, abs=1e-12)
    assert compute_loss(tr, inst, LossConfig(0.0, 0.5), small_world.graph) == pytest.approx(
        0.5 * action_cross_entropy(tr, inst), abs=1e-15)


def test_loss_separability(small_world, comps):
    inst = small_world.instances[2]
    tr = run_episode(small_world, inst, comps, RandomPolicy(), RunConfig(seed=1))
    a = replace(tr, steps=[replace(s, logits=np.zeros(4)) for s in tr.steps])
    b = replace(tr, steps=[replace(s, logits=np.arange(4.0)) for s in tr.steps])
    only_topo = LossConfig(1.0, 0.0)
    assert compute_loss(a, inst, only_topo, small_world.graph) == compute_loss(b, inst, only_topo, small_world.graph)
    ref = run_episode(small_world, inst, comps, OraclePolicy())
    c = replace(a, steps=[replace(s, topomap=ref.steps[0].topomap) for s in a.steps])
    only_ce = LossConfig(0.0, 1.0)
    assert compute_loss(a, inst, only_ce, small_world.graph) == compute_loss(c, inst, only_ce, small_world.graph)
    with pytest.raises(MissingLogits):
        compute_loss(tr, inst, LossConfig(), small_world.graph)


@pytest.mark.parametrize("seed", range(2))
def test_loss_gradient(seed):
    r = loss_case(seed)
    assert r.max_rel_error < 1e-5 and r.value_gap < 1e-12


def test_train_lr_zero_and_epochs_zero(small_world):
    init = init_agent_params(small_world.feature_dim, 16, 8, 0)
    res = train_policy([small_world], TrainConfig(epochs=3, lr=0.0), init=init)
    assert res.params == init and len(set(res.losses)) == 1
    res0 = train_policy([small_world], TrainConfig(epochs=0), init=init)
    assert res0.params == init and res0.losses == []


def test_train_reduces_loss(world20):
    res = train_policy([world20], TrainConfig(epochs=8))
    assert res.losses[-1] < res.losses[0]


def test_train_config_errors(small_world):
    with pytest.raises(ConfigError):
        train_policy([small_world], TrainConfig(epochs=-1))
    with pytest.raises(ConfigError):
        train_policy([], TrainConfig())


def test_linear_policy_is_greedy(small_world, comps):
    inst = small_world.instances[0]
    tr = run_episode(small_world, inst, comps, LinearPolicy(comps.params), RunConfig(max_steps=4))
    for s in tr.steps:
        assert s.action is ACTIONS[int(np.argmax(s.logits))]
