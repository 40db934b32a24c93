from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from streetnav.errors import EmptyInput, IndexOutOfRange, InvalidEps, ParseError, ShapeMismatch
from streetnav.kernels import (
    AttentionParams,
    GcnAggParams,
    GcnLayerParams,
    ParamBundle,
    ProjectionParams,
    cross_attention,
    cross_attention_forward,
    cross_attention_grad,
    gcn_aggregate,
    gcn_aggregate_grad,
    gcn_layer,
    gcn_layer_grad,
    global_pool,
    global_pool_grad,
    grad_check,
    project,
    project_grad,
    softmax_rows,
)


def rand(rng, *shape, scale=0.5):
    return scale * rng.standard_normal(shape)


def path_adjacency(n):
    A = np.eye(n)
    for i in range(n - 1):
        A[i, i + 1] = A[i + 1, i] = 1
    d = 1 / np.sqrt(A.sum(1))
    return A * d[:, None] * d[None, :]


# -- forward examples ----------------------------------------------------------


def test_aggregate_zero_weights():
    X = np.ones((3, 2))
    z = np.zeros((2, 2))
    assert np.array_equal(gcn_aggregate(X, [[1], [0, 2], [1]], GcnAggParams(z, z)), np.zeros((3, 2)))


def test_aggregate_no_neighbors_identity():
    X = np.array([[0.1, -0.05], [0.02, 0.0]])
    Y = gcn_aggregate(X, [[], []], GcnAggParams(np.eye(2), np.eye(2)))
    assert np.allclose(Y, np.tanh(X), atol=0, rtol=1e-15)


def test_aggregate_triangle_oracle():
    rng = np.random.default_rng(0)
    X, W1, W2 = rand(rng, 3, 4), rand(rng, 4, 4), rand(rng, 4, 4)
    sets = [[1, 2], [0, 2], [0, 1]]
    ref = oracles.gcn_aggregate(X.tolist(), sets, W1.tolist(), W2.tolist())
    assert oracles.max_abs_diff(gcn_aggregate(X, sets, GcnAggParams(W1, W2)), ref) <= 1e-12


def test_aggregate_bad_neighbor_index():
    with pytest.raises(IndexOutOfRange):
        gcn_aggregate(np.ones((2, 2)), [[5], []], GcnAggParams(np.eye(2), np.eye(2)))


def test_layer_single_node():
    x = np.array([[0.05, -0.02, 0.01]])
    assert np.allclose(gcn_layer(x, np.array([[1.0]]), GcnLayerParams(np.eye(3))), np.tanh(x), rtol=1e-15, atol=0)
    assert np.array_equal(gcn_layer(x, np.array([[1.0]]), GcnLayerParams(np.zeros((3, 3)))), np.zeros((1, 3)))


def test_layer_path_oracle():
    rng = np.random.default_rng(1)
    H, W, A = rand(rng, 4, 3), rand(rng, 3, 5), path_adjacency(4)
    ref = oracles.gcn_layer(H.tolist(), A.tolist(), W.tolist())
    assert oracles.max_abs_diff(gcn_layer(H, A, GcnLayerParams(W)), ref) <= 1e-12


def test_layer_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        gcn_layer(np.ones((3, 2)), np.eye(2), GcnLayerParams(np.eye(2)))


def test_pool_examples():
    v = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(global_pool(v[None, :]), v)
    assert np.array_equal(global_pool(np.stack([v, -v])), np.zeros(3))
    rng = np.random.default_rng(2)
    H = rng.standard_normal((5, 4))
    assert oracles.max_abs_diff(global_pool(H), oracles.global_pool(H.tolist())) <= 1e-12
    with pytest.raises(EmptyInput):
        global_pool(np.zeros((0, 3)))


def att(rng, d, scale=0.5):
    return AttentionParams(rand(rng, d, d, scale=scale), rand(rng, d, d, scale=scale), rand(rng, d, d, scale=scale))


def test_attention_single_key():
    rng = np.random.default_rng(3)
    p = att(rng, 4)
    K = rng.standard_normal((1, 4))
    out = cross_attention(rng.standard_normal((3, 4)), K, p)
    assert np.allclose(out, np.repeat(K @ p.Wv, 3, axis=0), rtol=0, atol=1e-15)


def test_attention_identical_keys_average_values():
    rng = np.random.default_rng(4)
    p = att(rng, 3)
    k = rng.standard_normal(3)
    out = cross_attention(rng.standard_normal((2, 3)), np.stack([k, k]), p)
    assert np.allclose(out, np.repeat((k @ p.Wv)[None], 2, axis=0), atol=1e-15)


def test_attention_dense_oracle():
    rng = np.random.default_rng(5)
    p = att(rng, 4)
    Q, K = rng.standard_normal((2, 4)), rng.standard_normal((3, 4))
    ref = oracles.cross_attention(Q.tolist(), K.tolist(), p.Wq.tolist(), p.Wk.tolist(), p.Wv.tolist())
    assert oracles.max_abs_diff(cross_attention(Q, K, p), ref) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_attention_key_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    p = att(rng, 3)
    Q, K = rng.standard_normal((2, 3)), rng.standard_normal((5, 3))
    perm = rng.permutation(5)
    assert np.allclose(cross_attention(Q, K, p), cross_attention(Q, K[perm], p), atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.sampled_from([1.0, 10.0, 1e3]))
def test_softmax_rows_normalized_and_finite(seed, scale):
    rng = np.random.default_rng(seed)
    S = scale * rng.uniform(-1, 1, (4, 6))
    P = softmax_rows(S)
    assert np.all(np.isfinite(P))
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-9)
    p = att(rng, 3, scale=1.0)
    out = cross_attention(scale * rng.uniform(-1, 1, (2, 3)), scale * rng.uniform(-1, 1, (4, 3)), p)
    assert np.all(np.isfinite(out))


def test_project_examples():
    M = np.array([0.03, -0.01])
    z2, z0 = np.zeros((2, 2)), np.zeros(2)
    assert np.array_equal(project(M, ProjectionParams(z2, z0, z2, z0)), np.zeros(2))
    assert np.allclose(project(M, ProjectionParams(np.eye(2), z0, np.eye(2), z0)), np.tanh(M), rtol=1e-15, atol=0)
    rng = np.random.default_rng(6)
    W1, b1, W2, b2 = rand(rng, 5, 4), rand(rng, 5), rand(rng, 3, 5), rand(rng, 3)
    M = rng.standard_normal(4)
    ref = oracles.project(M.tolist(), W1.tolist(), b1.tolist(), W2.tolist(), b2.tolist())
    assert oracles.max_abs_diff(project(M, ProjectionParams(W1, b1, W2, b2)), ref) <= 1e-12


def test_kernels_deterministic():
    rng = np.random.default_rng(7)
    p = att(rng, 4)
    Q, K = rng.standard_normal((2, 4)), rng.standard_normal((3, 4))
    assert np.array_equal(cross_attention(Q, K, p), cross_attention(Q.copy(), K.copy(), p))


# -- gradients ------------------------------------------------------------------


def test_grad_check_quadratic():
    theta = np.random.default_rng(8).standard_normal(10)
    assert grad_check(lambda t: (float(t @ t), 2 * t), theta, 1e-5) < 1e-9


def test_grad_check_rejects_bad_eps():
    with pytest.raises(InvalidEps):
        grad_check(lambda t: (0.0, t), np.ones(2), 0.0)


def _check(fwd, grads, arrays, seed):
    """Scalar readout <R, fwd(arrays)>; compare analytic grads of every array to finite differences."""
    rng = np.random.default_rng(seed)
    bundle = ParamBundle(arrays)
    R = rng.standard_normal(np.shape(fwd(bundle)))

    def f(theta):
        b = bundle.from_vector(theta)
        out = fwd(b)
        g = grads(R, b, out)
        return float((R * out).sum()), ParamBundle({k: g[k] for k in bundle}).to_vector()

    return grad_check(f, bundle.to_vector(), 1e-5, value=lambda t: float((R * fwd(bundle.from_vector(t))).sum()))


@pytest.mark.parametrize("seed", range(5))
def test_kernel_gradients(seed):
    rng = np.random.default_rng(seed)
    sets = [[1, 2], [0], [0, 3], [2]]
    agg = {"X": rand(rng, 4, 3), "W1": rand(rng, 3, 3), "W2": rand(rng, 3, 3)}
    assert _check(
        lambda b: gcn_aggregate(b["X"], sets, GcnAggParams(b["W1"], b["W2"])),
        lambda R, b, Y: gcn_aggregate_grad(R, b["X"], sets, GcnAggParams(b["W1"], b["W2"]), Y),
        agg, seed) < 1e-5
    A = path_adjacency(4)
    lay = {"H": rand(rng, 4, 3), "W": rand(rng, 3, 2)}
    assert _check(
        lambda b: gcn_layer(b["H"], A, GcnLayerParams(b["W"])),
        lambda R, b, Y: gcn_layer_grad(R, b["H"], A, GcnLayerParams(b["W"]), Y),
        lay, seed) < 1e-5
    assert _check(lambda b: global_pool(b["H"]), lambda R, b, Y: {"H": global_pool_grad(R, b["H"])},
                  {"H": rand(rng, 3, 2)}, seed) < 1e-5
    at = {"Q": rand(rng, 2, 3), "K": rand(rng, 4, 3), "Wq": rand(rng, 3, 3), "Wk": rand(rng, 3, 3), "Wv": rand(rng, 3, 3)}

    def att_fwd(b):
        return cross_attention(b["Q"], b["K"], AttentionParams(b["Wq"], b["Wk"], b["Wv"]))

    def att_grad(R, b, Y):
        p = AttentionParams(b["Wq"], b["Wk"], b["Wv"])
        _, Aw = cross_attention_forward(b["Q"], b["K"], p)
        return cross_attention_grad(R, b["Q"], b["K"], p, Aw)

    assert _check(att_fwd, att_grad, at, seed) < 1e-5
    pr = {"M": rand(rng, 3), "W1": rand(rng, 4, 3), "b1": rand(rng, 4), "W2": rand(rng, 2, 4), "b2": rand(rng, 2)}
    assert _check(
        lambda b: project(b["M"], ProjectionParams(b["W1"], b["b1"], b["W2"], b["b2"])),
        lambda R, b, Y: project_grad(R, b["M"], ProjectionParams(b["W1"], b["b1"], b["W2"], b["b2"])),
        pr, seed) < 1e-5


# -- parameter bundles -----------------------------------------------------------


def test_bundle_vector_round_trip():
    rng = np.random.default_rng(9)
    b = ParamBundle({"a": rng.standard_normal((2, 3)), "b": rng.standard_normal(4)})
    assert b.size == 10
    assert b.from_vector(b.to_vector()) == b
    with pytest.raises(ShapeMismatch):
        b.from_vector(np.zeros(3))


def test_bundle_json_round_trip(tmp_path):
    rng = np.random.default_rng(10)
    b = ParamBundle({"w": rng.standard_normal((3, 2)), "v": rng.standard_normal(2)})
    path = tmp_path / "p.json"
    b.save(path)
    first = path.read_bytes()
    loaded = ParamBundle.load(path)
    assert loaded == b
    loaded.save(path)
    assert path.read_bytes() == first
    doc = json.loads(first)
    assert doc["format"] == "streetnav.params" and doc["version"] == 1


def test_bundle_rejects_bad_document():
    with pytest.raises(ParseError):
        ParamBundle.from_json({"format": "other", "version": 1, "arrays": []})
