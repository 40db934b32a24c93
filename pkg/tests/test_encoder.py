from __future__ import annotations

import numpy as np
import pytest

import oracles
from streetnav.encoder import ENCODER_KEYS, encode, init_encoder_params
from streetnav.errors import ComponentDimMismatch
from streetnav.gradcheck import encoder_case, random_map_inputs, reference_encode
from streetnav.kernels import ParamBundle


def loop_encode(p, F, sets, A, R):
    """The encoder written out with the list-based kernel oracles."""
    L = {k: v.tolist() for k, v in p.items()}
    X = [oracles.vecmat(row, L["enc.in_W"]) for row in F.tolist()]
    H = oracles.gcn_aggregate(X, sets, L["enc.agg_W1"], L["enc.agg_W2"])
    H = oracles.gcn_layer(H, A.tolist(), L["enc.gcn1_W"])
    H = oracles.gcn_layer(H, A.tolist(), L["enc.gcn2_W"])
    P = oracles.global_pool(H)
    M = oracles.cross_attention([P], R.tolist(), L["enc.att_Wq"], L["enc.att_Wk"], L["enc.att_Wv"])[0]
    return oracles.project(M, L["enc.proj_W1"], L["enc.proj_b1"], L["enc.proj_W2"], L["enc.proj_b2"])


@pytest.mark.parametrize("seed", range(5))
def test_encode_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    params = init_encoder_params(rng, 4, 3)
    F, sets, A, R = random_map_inputs(rng, 4, n_nodes=5)
    out, _ = encode(ParamBundle(params), F, sets, A, R)
    assert oracles.max_abs_diff(out, loop_encode(params, F, sets, A, R)) <= 1e-12
    assert oracles.max_abs_diff(out, reference_encode(params, F, sets, A, R)) <= 1e-12


def test_parameter_keys_and_shapes():
    p = init_encoder_params(np.random.default_rng(0), 8, 5, hidden=6)
    assert tuple(p) == ENCODER_KEYS
    assert p["enc.in_W"].shape == (11, 8)
    assert p["enc.proj_W1"].shape == (6, 8) and p["enc.proj_W2"].shape == (5, 6)


def test_dim_mismatch():
    rng = np.random.default_rng(1)
    params = ParamBundle(init_encoder_params(rng, 4, 3))
    F, sets, A, R = random_map_inputs(rng, 5)
    with pytest.raises(ComponentDimMismatch):
        encode(params, F, sets, A, R)


@pytest.mark.parametrize("seed", range(3))
def test_composed_gradient_d4_n5(seed):
    assert encoder_case(seed, dim=4).max_rel_error < 1e-5
