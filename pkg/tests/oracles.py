"""Straight-line reference implementations used as test oracles.

Everything here is written with explicit Python loops and the ``math``
module, independent of the vectorized package code it checks.
"""

from __future__ import annotations

import math
from collections import deque


def matvec(W, x):
    return [sum(W[i][k] * x[k] for k in range(len(x))) for i in range(len(W))]


def vecmat(x, W):
    """Row vector times matrix."""
    return [sum(x[k] * W[k][j] for k in range(len(x))) for j in range(len(W[0]))]


def gcn_aggregate(X, sets, W1, W2):
    out = []
    for i, x in enumerate(X):
        a = matvec(W1, x)
        for j in sets[i]:
            b = matvec(W2, X[j])
            a = [u + v for u, v in zip(a, b)]
        out.append([math.tanh(v) for v in a])
    return out


def gcn_layer(H, A, W):
    n = len(H)
    AH = [[sum(A[i][k] * H[k][c] for k in range(n)) for c in range(len(H[0]))] for i in range(n)]
    return [[math.tanh(v) for v in vecmat(row, W)] for row in AH]


def global_pool(H):
    n = len(H)
    return [sum(H[i][c] for i in range(n)) / n for c in range(len(H[0]))]


def softmax(xs):
    m = max(xs)
    e = [math.exp(x - m) for x in xs]
    s = sum(e)
    return [v / s for v in e]


def cross_attention(Q, K, Wq, Wk, Wv):
    d = len(Wk[0])
    keys = [vecmat(k, Wk) for k in K]
    vals = [vecmat(k, Wv) for k in K]
    out = []
    for q in Q:
        qp = vecmat(q, Wq)
        w = softmax([sum(a * b for a, b in zip(qp, kp)) / math.sqrt(d) for kp in keys])
        out.append([sum(w[t] * vals[t][c] for t in range(len(K))) for c in range(len(vals[0]))])
    return out


def project(M, W1, b1, W2, b2):
    h = [math.tanh(v + b) for v, b in zip(matvec(W1, M), b1)]
    return [v + b for v, b in zip(matvec(W2, h), b2)]


def feed_forward(x, W1, b1, W2, b2):
    """Residual refiner on a row vector: x + tanh(x W1 + b1) W2 + b2."""
    h = [math.tanh(v + b) for v, b in zip(vecmat(x, W1), b1)]
    return [xi + v + b for xi, v, b in zip(x, vecmat(h, W2), b2)]


def fuse_round(O, B, img_att, txt_att, img_ff, txt_ff):
    """One fusion round: regions attend to the phrase, the phrase attends to the regions."""
    O_att = cross_attention(O, [B], *img_att)
    B_att = cross_attention([B], O, *txt_att)[0]
    O2 = [feed_forward([a + b for a, b in zip(o, oa)], *img_ff) for o, oa in zip(O, O_att)]
    B2 = feed_forward([a + b for a, b in zip(B, B_att)], *txt_ff)
    return O2, B2


def adjacency(order, edges):
    idx = {n: i for i, n in enumerate(order)}
    A = [[0.0] * len(order) for _ in order]
    for a, b in edges:
        if a != b:
            A[idx[a]][idx[b]] = 1.0
            A[idx[b]][idx[a]] = 1.0
    return A


def topo_loss(order_s, edges_s, order_c, edges_c):
    order = list(order_s) + [n for n in order_c if n not in set(order_s)]
    S = adjacency(order, [e for e in edges_s])
    C = adjacency(order, [e for e in edges_c])
    return sum((S[i][j] - C[i][j]) ** 2 for i in range(len(order)) for j in range(len(order)))


def bfs_hops(adj: dict, src, dst):
    """Plain BFS over an adjacency dict; None when unreachable."""
    dist = {src: 0}
    q = deque([src])
    while q:
        u = q.popleft()
        if u == dst:
            return dist[u]
        for v in adj.get(u, ()):
            if v not in dist:
                dist[v] = dist[u] + 1
                q.append(v)
    return None


def max_abs_diff(a, b) -> float:
    import numpy as np

    return float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))
