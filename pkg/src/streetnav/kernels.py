"""Dense numerical kernels with analytic gradients.

Every forward kernel ``f`` has a companion ``f_grad`` taking the upstream
gradient plus the forward inputs/outputs and returning the gradients with
respect to inputs and weights.  All activations are tanh.  Arrays are
float64 throughout.

Weight conventions follow the formulas they implement: the aggregation and
projection weights act on column vectors (``W @ x``), the graph-layer and
attention weights multiply row-feature matrices from the right (``H @ W``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import EmptyInput, IndexOutOfRange, InvalidEps, ParseError, ShapeMismatch

BUNDLE_FORMAT = "streetnav.params"
BUNDLE_VERSION = 1


def _as2d(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got shape {a.shape}")
    return a


def init_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan)
    return rng.uniform(-bound, bound, size=shape)


# -- parameter bundles ---------------------------------------------------------


class ParamBundle(Mapping[str, np.ndarray]):
    """Named float64 arrays with a stable flat-vector view.

    Insertion order defines the flat index map, so ``from_vector`` on the
    output of ``to_vector`` reproduces the bundle exactly.
    """

    def __init__(self, arrays: Mapping[str, np.ndarray] | Iterable[tuple[str, np.ndarray]] = ()):
        items = arrays.items() if isinstance(arrays, Mapping) else arrays
        self._arrays: dict[str, np.ndarray] = {k: np.array(v, dtype=np.float64) for k, v in items}

    def __getitem__(self, key: str) -> np.ndarray:
        return self._arrays[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParamBundle):
            return NotImplemented
        return list(self) == list(other) and all(
            self[k].shape == other[k].shape and np.array_equal(self[k], other[k]) for k in self
        )

    def __repr__(self) -> str:
        shapes = ", ".join(f"{k}{tuple(v.shape)}" for k, v in self._arrays.items())
        return f"ParamBundle({shapes})"

    @property
    def size(self) -> int:
        return sum(v.size for v in self._arrays.values())

    def index_map(self) -> dict[str, tuple[int, int, tuple[int, ...]]]:
        """name -> (start, stop, shape) into the flat vector."""
        out, pos = {}, 0
        for k, v in self._arrays.items():
            out[k] = (pos, pos + v.size, v.shape)
            pos += v.size
        return out

    def to_vector(self) -> np.ndarray:
        if not self._arrays:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self._arrays.values()])

    def from_vector(self, vec: np.ndarray) -> "ParamBundle":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise ShapeMismatch(f"expected flat vector of length {self.size}, got {vec.shape}")
        return ParamBundle((k, vec[a:b].reshape(shape)) for k, (a, b, shape) in self.index_map().items())

    def replace(self, **arrays: np.ndarray) -> "ParamBundle":
        merged = dict(self._arrays)
        merged.update(arrays)
        return ParamBundle(merged)

    def zeros_like(self) -> "ParamBundle":
        return ParamBundle((k, np.zeros_like(v)) for k, v in self._arrays.items())

    def to_json(self) -> dict:
        return {
            "format": BUNDLE_FORMAT,
            "version": BUNDLE_VERSION,
            "arrays": [
                {"name": k, "shape": list(v.shape), "data": v.ravel().tolist()} for k, v in self._arrays.items()
            ],
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "ParamBundle":
        if doc.get("format") != BUNDLE_FORMAT:
            raise ParseError(f"not a parameter bundle (format={doc.get('format')!r})", field="format")
        if doc.get("version") != BUNDLE_VERSION:
            raise ParseError(f"unsupported bundle version {doc.get('version')!r}", field="version")
        arrays = []
        for rec in doc.get("arrays", []):
            shape = tuple(int(s) for s in rec["shape"])
            data = np.asarray(rec["data"], dtype=np.float64)
            if data.size != math.prod(shape):
                raise ParseError(f"array {rec['name']!r} has {data.size} values for shape {shape}", field="data")
            arrays.append((rec["name"], data.reshape(shape)))
        return cls(arrays)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ParamBundle":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(str(exc), line=exc.lineno) from exc
        return cls.from_json(doc)


@dataclass(frozen=True)
class GcnAggParams:
    W1: np.ndarray
    W2: np.ndarray


@dataclass(frozen=True)
class GcnLayerParams:
    W: np.ndarray


@dataclass(frozen=True)
class AttentionParams:
    Wq: np.ndarray
    Wk: np.ndarray
    Wv: np.ndarray

    @property
    def scale(self) -> float:
        return math.sqrt(self.Wk.shape[1])


@dataclass(frozen=True)
class ProjectionParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray


# -- kernels -------------------------------------------------------------------


def softmax_rows(S: np.ndarray) -> np.ndarray:
    Z = S - S.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def neighbor_matrix(n: int, neighbor_sets: Sequence[Iterable[int]]) -> np.ndarray:
    if len(neighbor_sets) != n:
        raise ShapeMismatch(f"{len(neighbor_sets)} neighbor sets for {n} nodes")
    Nb = np.zeros((n, n))
    for i, js in enumerate(neighbor_sets):
        for j in js:
            if not 0 <= j < n:
                raise IndexOutOfRange(f"neighbor index {j} of node {i} outside [0, {n})")
            Nb[i, j] = 1.0
    return Nb


def gcn_aggregate(X, neighbor_sets: Sequence[Iterable[int]], params: GcnAggParams) -> np.ndarray:
    """``y_i = tanh(W1 x_i + sum_{j in N(i)} W2 x_j)`` for every node row."""
    X = _as2d(X, "X")
    d = X.shape[1]
    if params.W1.shape != (d, d) or params.W2.shape != (d, d):
        raise ShapeMismatch(f"aggregation weights must be {d}x{d}")
    Nb = neighbor_matrix(X.shape[0], neighbor_sets)
    return np.tanh(X @ params.W1.T + (Nb @ X) @ params.W2.T)


def gcn_aggregate_grad(dY, X, neighbor_sets, params: GcnAggParams, Y) -> dict[str, np.ndarray]:
    Nb = neighbor_matrix(X.shape[0], neighbor_sets)
    dZ = dY * (1.0 - Y * Y)
    NX = Nb @ X
    return {
        "X": dZ @ params.W1 + Nb.T @ (dZ @ params.W2),
        "W1": dZ.T @ X,
        "W2": dZ.T @ NX,
    }


def gcn_layer(H, A_norm, params: GcnLayerParams) -> np.ndarray:
    """``tanh(A_norm @ H @ W)``; ``A_norm`` may be an array or an AdjacencyMatrix."""
    H = _as2d(H, "H")
    A = _as2d(getattr(A_norm, "A", A_norm), "A_norm")
    n = H.shape[0]
    if A.shape != (n, n):
        raise ShapeMismatch(f"adjacency {A.shape} does not match {n} nodes")
    if params.W.shape[0] != H.shape[1]:
        raise ShapeMismatch(f"W has {params.W.shape[0]} rows, H has {H.shape[1]} columns")
    return np.tanh(A @ H @ params.W)


def gcn_layer_grad(dOut, H, A_norm, params: GcnLayerParams, Out) -> dict[str, np.ndarray]:
    A = np.asarray(getattr(A_norm, "A", A_norm), dtype=np.float64)
    dZ = dOut * (1.0 - Out * Out)
    AH = A @ H
    return {"H": A.T @ (dZ @ params.W.T), "W": AH.T @ dZ}


def global_pool(H) -> np.ndarray:
    """Mean over node rows."""
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] == 0:
        raise EmptyInput("global_pool needs at least one row")
    return H.mean(axis=0)


def global_pool_grad(dP, H) -> np.ndarray:
    n = H.shape[0]
    return np.broadcast_to(np.asarray(dP) / n, H.shape).copy()


def cross_attention(Q_in, K_in, params: AttentionParams) -> np.ndarray:
    """``softmax(Q Wq (K Wk)^T / sqrt(d)) K Wv`` with a row-wise softmax."""
    return cross_attention_forward(Q_in, K_in, params)[0]


def cross_attention_forward(Q_in, K_in, params: AttentionParams):
    """Like ``cross_attention`` but also returns the attention weights."""
    Q = _as2d(Q_in, "Q_in")
    K = _as2d(K_in, "K_in")
    d = params.Wk.shape[1]
    if Q.shape[1] != params.Wq.shape[0] or K.shape[1] != params.Wk.shape[0] or K.shape[1] != params.Wv.shape[0]:
        raise ShapeMismatch(f"query dim {Q.shape[1]} / key dim {K.shape[1]} do not fit the attention weights")
    if params.Wq.shape[1] != d:
        raise ShapeMismatch("Wq and Wk must project to the same width")
    S = (Q @ params.Wq) @ (K @ params.Wk).T / math.sqrt(d)
    A = softmax_rows(S)
    return A @ (K @ params.Wv), A


def cross_attention_grad(dOut, Q_in, K_in, params: AttentionParams, A) -> dict[str, np.ndarray]:
    Q = np.asarray(Q_in, dtype=np.float64)
    K = np.asarray(K_in, dtype=np.float64)
    s = math.sqrt(params.Wk.shape[1])
    Qp, Kp, V = Q @ params.Wq, K @ params.Wk, K @ params.Wv
    dV = A.T @ dOut
    dA = dOut @ V.T
    dS = A * (dA - (dA * A).sum(axis=1, keepdims=True))
    dQp = dS @ Kp / s
    dKp = dS.T @ Qp / s
    return {
        "Q": dQp @ params.Wq.T,
        "K": dKp @ params.Wk.T + dV @ params.Wv.T,
        "Wq": Q.T @ dQp,
        "Wk": K.T @ dKp,
        "Wv": K.T @ dV,
    }


def project(M, params: ProjectionParams) -> np.ndarray:
    """Two-layer perceptron ``W2 tanh(W1 M + b1) + b2``."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 1 or params.W1.shape[1] != M.shape[0]:
        raise ShapeMismatch(f"projection expects a {params.W1.shape[1]}-vector, got shape {M.shape}")
    if params.W2.shape[1] != params.W1.shape[0] or params.b1.shape != (params.W1.shape[0],):
        raise ShapeMismatch("projection layer dimensions do not chain")
    if params.b2.shape != (params.W2.shape[0],):
        raise ShapeMismatch("projection output bias has the wrong length")
    return params.W2 @ np.tanh(params.W1 @ M + params.b1) + params.b2


def project_grad(dOut, M, params: ProjectionParams) -> dict[str, np.ndarray]:
    h = np.tanh(params.W1 @ M + params.b1)
    dh = params.W2.T @ dOut
    dz = dh * (1.0 - h * h)
    return {
        "M": params.W1.T @ dz,
        "W1": np.outer(dz, M),
        "b1": dz,
        "W2": np.outer(dOut, h),
        "b2": np.asarray(dOut, dtype=np.float64).copy(),
    }


# -- gradient checking ------------------------------------------------------------


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))


def numeric_gradient(f: Callable[[np.ndarray], float], theta: np.ndarray, eps: float) -> np.ndarray:
    """Central differences.  Floating ``theta`` keeps its dtype, so an
    extended-precision ``f`` can be probed with ``np.longdouble`` vectors."""
    if not eps > 0:
        raise InvalidEps(f"eps must be positive, got {eps}")
    theta = np.asarray(theta)
    if not np.issubdtype(theta.dtype, np.floating):
        theta = theta.astype(np.float64)
    step = theta.dtype.type(eps)
    out = np.empty_like(theta)
    for i in range(theta.size):
        plus = theta.copy()
        minus = theta.copy()
        plus[i] += step
        minus[i] -= step
        out[i] = (f(plus) - f(minus)) / (2 * step)
    return out


def grad_check(
    f: Callable[[np.ndarray], tuple[float, np.ndarray]],
    theta: np.ndarray,
    eps: float = 1e-5,
    value: Callable[[np.ndarray], float] | None = None,
    dtype=np.float64,
) -> float:
    """Max per-coordinate relative error between ``f``'s analytic gradient and central differences.

    ``f`` maps a flat parameter vector to ``(value, gradient)``.  The
    differences are taken on ``value`` (default: ``f``'s value) with the
    parameters cast to ``dtype``; passing an independent forward pass and
    ``np.longdouble`` keeps float64 cancellation out of the reference.
    """
    if not eps > 0:
        raise InvalidEps(f"eps must be positive, got {eps}")
    theta = np.asarray(theta, dtype=np.float64)
    if theta.size == 0:
        return 0.0
    _, analytic = f(theta)
    value = value or (lambda t: f(t)[0])
    numeric = numeric_gradient(value, theta.astype(dtype), eps)
    return float(relative_errors(np.asarray(analytic, dtype=np.float64), numeric.astype(np.float64)).max())
