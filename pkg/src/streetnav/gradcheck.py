"""Finite-difference harnesses for the composed encoder and the training loss.

Each case builds a small random problem from a seed and compares the
hand-written backward pass against central differences of a separate
straight-line forward pass evaluated in extended precision
(``np.longdouble``).  At ``eps = 1e-5`` float64 cancellation alone leaves
errors around 1e-11 in every difference quotient, which swamps gradient
components of order 1e-7; the wider type removes that floor without
touching the production kernels.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .agent import (
    ACTIONS,
    LinearPolicy,
    LossConfig,
    OraclePolicy,
    PolicyInput,
    RunConfig,
    build_components,
    compute_loss,
    init_agent_params,
    run_episode,
    teacher_forced_loss_and_grad,
    topology_loss,
)
from .encoder import encode, encode_grad, init_encoder_params
from .kernels import ParamBundle, grad_check

EXTENDED = np.longdouble


@dataclass(frozen=True)
class GradReport:
    max_rel_error: float
    value_gap: float = 0.0  # |reference value - production value| at the check point


def random_map_inputs(rng: np.random.Generator, dim: int, n_nodes: int | None = None, n_regions: int = 4):
    """Random node features, neighbor sets, normalized adjacency and regions."""
    n = n_nodes or int(rng.integers(2, 7))
    A = np.zeros((n, n))
    for i in range(1, n):  # random tree plus a few extra edges
        j = int(rng.integers(i))
        A[i, j] = A[j, i] = 1.0
    for _ in range(n // 2):
        i, j = rng.integers(n, size=2)
        if i != j:
            A[i, j] = A[j, i] = 1.0
    sets = [list(np.flatnonzero(A[i])) for i in range(n)]
    At = A + np.eye(n)
    dinv = 1.0 / np.sqrt(At.sum(axis=1))
    A_norm = At * dinv[:, None] * dinv[None, :]
    F = np.hstack([rng.standard_normal((n, dim)), np.eye(3)[rng.integers(3, size=n)]])
    regions = rng.standard_normal((n_regions, dim))
    return F, sets, A_norm, regions


def _unflatten(theta: np.ndarray, index_map) -> dict:
    return {k: theta[a:b].reshape(shape) for k, (a, b, shape) in index_map.items()}


def reference_encode(p: dict, F, neighbor_sets, A_norm, regions) -> np.ndarray:
    """Straight-line encoder forward in the dtype of ``p``'s arrays."""
    dt = p["enc.in_W"].dtype
    n = len(F)
    X = np.asarray(F, dtype=dt) @ p["enc.in_W"]
    Nb = np.zeros((n, n), dtype=dt)
    for i, s in enumerate(neighbor_sets):
        for j in s:
            Nb[i, j] += 1
    H = np.tanh(X @ p["enc.agg_W1"].T + (Nb @ X) @ p["enc.agg_W2"].T)
    A = np.asarray(A_norm, dtype=dt)
    H = np.tanh(A @ H @ p["enc.gcn1_W"])
    H = np.tanh(A @ H @ p["enc.gcn2_W"])
    P = H.mean(axis=0)
    R = np.asarray(regions, dtype=dt)
    q = P @ p["enc.att_Wq"]
    scores = (R @ p["enc.att_Wk"]) @ q / np.sqrt(dt.type(q.shape[0]))
    e = np.exp(scores - scores.max())
    M = (e / e.sum()) @ (R @ p["enc.att_Wv"])
    return p["enc.proj_W2"] @ np.tanh(p["enc.proj_W1"] @ M + p["enc.proj_b1"]) + p["enc.proj_b2"]


def encoder_case(seed: int, dim: int = 6, out_dim: int = 4, eps: float = 1e-5) -> GradReport:
    """Gradient check of ``w . encode(theta)`` for a random map and fixed readout ``w``."""
    rng = np.random.default_rng(seed)
    params = ParamBundle(init_encoder_params(rng, dim, out_dim))
    F, sets, A_norm, regions = random_map_inputs(rng, dim)
    w = rng.standard_normal(out_dim)
    index = params.index_map()

    def f(theta):
        p = params.from_vector(theta)
        out, cache = encode(p, F, sets, A_norm, regions)
        return float(w @ out), ParamBundle(encode_grad(p, w, cache)).to_vector()

    def ref(theta):
        return w.astype(theta.dtype) @ reference_encode(_unflatten(theta, index), F, sets, A_norm, regions)

    theta = params.to_vector()
    gap = abs(float(ref(theta)) - f(theta)[0])
    return GradReport(grad_check(f, theta, eps, value=ref, dtype=EXTENDED), gap)


def loss_case(seed: int, dim: int = 6, eps: float = 1e-5, loss: LossConfig = LossConfig()) -> GradReport:
    """Gradient check of the combined loss on one teacher-forced episode of a small world.

    ``value_gap`` compares the reference loss with ``compute_loss`` applied
    to a trace whose logits come from ``LinearPolicy``.
    """
    from .worldgen import generate_world

    world = generate_world(nodes=10, route_count=1, feature_dim=dim, seed=seed, regions_per_view=3)
    inst = world.instances[0]
    cfg = RunConfig(seed=seed, out_dim=4, max_landmarks=4)
    params = init_agent_params(dim, cfg.out_dim, cfg.max_landmarks, seed)
    trace = run_episode(world, inst, build_components(dim, params, cfg), OraclePolicy(), cfg, record_inputs=True)
    topo_term = topology_loss(trace, inst, world.graph)
    index = params.index_map()
    gold = [ACTIONS.index(a) for a in inst.gold_actions]
    n = min(len(trace.inputs), len(gold))
    K = cfg.max_landmarks

    def ref(theta):
        p = _unflatten(theta, index)
        dt = theta.dtype
        ce = dt.type(0)
        for inp, g in zip(trace.inputs[:n], gold[:n]):
            cursor = np.zeros(K + 1, dtype=dt)
            cursor[min(inp.cursor, K)] = 1
            x = np.concatenate([reference_encode(p, inp.F, inp.neighbor_sets, inp.A_norm, inp.regions),
                                inp.flags.astype(dt), cursor])
            z = p["pol.W"] @ x + p["pol.b"]
            m = z.max()
            ce += m + np.log(np.exp(z - m).sum()) - z[g]
        return dt.type(loss.lambda1) * dt.type(topo_term) + dt.type(loss.lambda2) * ce / n

    def f(theta):
        value, grad = teacher_forced_loss_and_grad(
            params.from_vector(theta), trace.inputs, inst.gold_actions, topo_term, loss
        )
        return value, grad.to_vector()

    policy = LinearPolicy(params)
    steps = []
    for step, inp in zip(trace.steps, trace.inputs):
        feat, _ = encode(params, inp.F, inp.neighbor_sets, inp.A_norm, inp.regions)
        steps.append(replace(step, logits=policy.logits(PolicyInput(feat, step.messages, trace.landmarks, inp.cursor, 0))))
    production = compute_loss(replace(trace, steps=steps), inst, loss, world.graph)
    theta = params.to_vector()
    gap = max(abs(float(ref(theta)) - production), abs(f(theta)[0] - production))
    return GradReport(grad_check(f, theta, eps, value=ref, dtype=EXTENDED), gap)
