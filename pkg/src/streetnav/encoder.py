"""Topology-map encoder: input projection, neighbor aggregation, two graph
layers, mean pooling, cross-attention against the current panorama regions
and the projection into the policy's feature space.

``encode`` returns the projected feature together with a cache that
``encode_grad`` consumes to produce gradients for every encoder weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ComponentDimMismatch
from .kernels import (
    AttentionParams,
    GcnAggParams,
    GcnLayerParams,
    ParamBundle,
    ProjectionParams,
    cross_attention_forward,
    cross_attention_grad,
    gcn_aggregate,
    gcn_aggregate_grad,
    gcn_layer,
    gcn_layer_grad,
    global_pool,
    global_pool_grad,
    init_uniform,
    project,
    project_grad,
)

ENCODER_KEYS = (
    "enc.in_W",
    "enc.agg_W1",
    "enc.agg_W2",
    "enc.gcn1_W",
    "enc.gcn2_W",
    "enc.att_Wq",
    "enc.att_Wk",
    "enc.att_Wv",
    "enc.proj_W1",
    "enc.proj_b1",
    "enc.proj_W2",
    "enc.proj_b2",
)


def init_encoder_params(rng: np.random.Generator, dim: int, out_dim: int, hidden: int | None = None) -> dict:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases."""
    h = hidden or out_dim
    fin = dim + 3
    return {
        "enc.in_W": init_uniform(rng, (fin, dim), fin),
        "enc.agg_W1": init_uniform(rng, (dim, dim), dim),
        "enc.agg_W2": init_uniform(rng, (dim, dim), dim),
        "enc.gcn1_W": init_uniform(rng, (dim, dim), dim),
        "enc.gcn2_W": init_uniform(rng, (dim, dim), dim),
        "enc.att_Wq": init_uniform(rng, (dim, dim), dim),
        "enc.att_Wk": init_uniform(rng, (dim, dim), dim),
        "enc.att_Wv": init_uniform(rng, (dim, dim), dim),
        "enc.proj_W1": init_uniform(rng, (h, dim), dim),
        "enc.proj_b1": np.zeros(h),
        "enc.proj_W2": init_uniform(rng, (out_dim, h), h),
        "enc.proj_b2": np.zeros(out_dim),
    }


def encoder_dim(params: ParamBundle) -> int:
    return params["enc.agg_W1"].shape[0]


def encoder_out_dim(params: ParamBundle) -> int:
    return params["enc.proj_b2"].shape[0]


@dataclass
class EncoderCache:
    F: np.ndarray
    X: np.ndarray
    neighbor_sets: list
    A: np.ndarray
    H1: np.ndarray
    H2: np.ndarray
    H3: np.ndarray
    P: np.ndarray
    regions: np.ndarray
    attn: np.ndarray
    M: np.ndarray


def _pieces(params: ParamBundle):
    return (
        GcnAggParams(params["enc.agg_W1"], params["enc.agg_W2"]),
        GcnLayerParams(params["enc.gcn1_W"]),
        GcnLayerParams(params["enc.gcn2_W"]),
        AttentionParams(params["enc.att_Wq"], params["enc.att_Wk"], params["enc.att_Wv"]),
        ProjectionParams(params["enc.proj_W1"], params["enc.proj_b1"], params["enc.proj_W2"], params["enc.proj_b2"]),
    )


def encode(params: ParamBundle, F, neighbor_sets, A_norm, regions) -> tuple[np.ndarray, EncoderCache]:
    """Map node features ``F`` (n x (d+3)) plus current regions (N x d) to the projected feature."""
    F = np.asarray(F, dtype=np.float64)
    regions = np.asarray(regions, dtype=np.float64)
    A = np.asarray(getattr(A_norm, "A", A_norm), dtype=np.float64)
    d = encoder_dim(params)
    if F.shape[1] != params["enc.in_W"].shape[0] or regions.shape[1] != d:
        raise ComponentDimMismatch(
            f"encoder dim {d} cannot take node features {F.shape} / regions {regions.shape}"
        )
    agg, g1, g2, att, proj = _pieces(params)
    X = F @ params["enc.in_W"]
    H1 = gcn_aggregate(X, neighbor_sets, agg)
    H2 = gcn_layer(H1, A, g1)
    H3 = gcn_layer(H2, A, g2)
    P = global_pool(H3)
    M, attn = cross_attention_forward(P[None, :], regions, att)
    out = project(M[0], proj)
    return out, EncoderCache(F, X, list(neighbor_sets), A, H1, H2, H3, P, regions, attn, M[0])


def encode_grad(params: ParamBundle, d_out: np.ndarray, cache: EncoderCache) -> dict[str, np.ndarray]:
    agg, g1, g2, att, proj = _pieces(params)
    c = cache
    gp = project_grad(d_out, c.M, proj)
    ga = cross_attention_grad(gp["M"][None, :], c.P[None, :], c.regions, att, c.attn)
    dH3 = global_pool_grad(ga["Q"][0], c.H3)
    gl2 = gcn_layer_grad(dH3, c.H2, c.A, g2, c.H3)
    gl1 = gcn_layer_grad(gl2["H"], c.H1, c.A, g1, c.H2)
    gg = gcn_aggregate_grad(gl1["H"], c.X, c.neighbor_sets, agg, c.H1)
    return {
        "enc.in_W": c.F.T @ gg["X"],
        "enc.agg_W1": gg["W1"],
        "enc.agg_W2": gg["W2"],
        "enc.gcn1_W": gl1["W"],
        "enc.gcn2_W": gl2["W"],
        "enc.att_Wq": ga["Wq"],
        "enc.att_Wk": ga["Wk"],
        "enc.att_Wv": ga["Wv"],
        "enc.proj_W1": gp["W1"],
        "enc.proj_b1": gp["b1"],
        "enc.proj_W2": gp["W2"],
        "enc.proj_b2": gp["b2"],
    }
