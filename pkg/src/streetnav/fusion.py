"""Region/phrase deep-fusion scoring and the threshold verbalizer.

Each panorama is three 60-degree views (left, front, right) holding ``N``
region feature rows.  A landmark phrase is embedded, fused with the regions
for ``R`` rounds of bidirectional cross-attention plus residual feedforward
refiners, and scored by the best region/text dot product squashed through a
logistic map.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from functools import lru_cache, partial
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ShapeMismatch
from .extractor import ARTICLES, LandmarkSet, normalize_phrase, tokenize
from .kernels import AttentionParams, ParamBundle, cross_attention, init_uniform

DIRECTIONS = ("left", "front", "right")
DEFAULT_TAU = 0.8


@dataclass(frozen=True)
class ViewObservation:
    direction: str
    regions: np.ndarray

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        r = np.asarray(self.regions, dtype=np.float64)
        if r.ndim != 2 or r.shape[0] < 1 or r.shape[1] < 2:
            raise ShapeMismatch(f"regions must be N x d with N >= 1 and d >= 2, got {r.shape}")
        if not np.all(np.isfinite(r)):
            raise ValueError("region features must be finite")
        object.__setattr__(self, "regions", r)

    @property
    def region_count(self) -> int:
        return self.regions.shape[0]

    @property
    def dim(self) -> int:
        return self.regions.shape[1]


@dataclass(frozen=True)
class Panorama:
    views: tuple[ViewObservation, ViewObservation, ViewObservation]

    def __post_init__(self):
        dirs = sorted(v.direction for v in self.views)
        if dirs != sorted(DIRECTIONS):
            raise ValueError(f"a panorama needs exactly one view per direction, got {dirs}")
        dims = {v.dim for v in self.views}
        if len(dims) != 1:
            raise ShapeMismatch(f"views disagree on feature dim: {dims}")
        object.__setattr__(self, "views", tuple(sorted(self.views, key=lambda v: DIRECTIONS.index(v.direction))))

    def view(self, direction: str) -> ViewObservation:
        return self.views[DIRECTIONS.index(direction)]

    @property
    def dim(self) -> int:
        return self.views[0].dim

    def all_regions(self) -> np.ndarray:
        return np.vstack([v.regions for v in self.views])

    def mean_feature(self) -> np.ndarray:
        return self.all_regions().mean(axis=0)

    def to_json(self) -> dict:
        return {v.direction: v.regions.tolist() for v in self.views}

    @classmethod
    def from_json(cls, doc: Mapping) -> "Panorama":
        return cls(tuple(ViewObservation(d, np.asarray(doc[d], dtype=np.float64)) for d in DIRECTIONS))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Panorama):
            return NotImplemented
        return all(np.array_equal(a.regions, b.regions) for a, b in zip(self.views, other.views))


# -- text encoder ------------------------------------------------------------------


@lru_cache(maxsize=16384)
def _hashed_gaussian(key: str, dim: int) -> np.ndarray:
    seed = int.from_bytes(hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest(), "little")
    g = np.random.default_rng(seed).standard_normal(dim)
    g.setflags(write=False)
    return g


@lru_cache(maxsize=4096)
def _encode_cached(phrase: str, dim: int) -> np.ndarray:
    toks = [t for t in tokenize(phrase) if t[0].isalnum()] or [phrase]
    v = np.zeros(dim)
    for t in toks:
        v += (0.1 if t in ARTICLES else 1.0) * _hashed_gaussian("tok:" + t, dim)
    for a, b in zip(toks, toks[1:]):
        v += 0.5 * _hashed_gaussian(f"bi:{a} {b}", dim)
    v /= np.linalg.norm(v)
    v.setflags(write=False)
    return v


def encode_text(phrase: str, dim: int) -> np.ndarray:
    """Deterministic unit-norm bag-of-token-and-bigram hash embedding."""
    phrase = normalize_phrase(phrase)
    if not phrase:
        raise ValueError("cannot encode an empty phrase")
    if dim < 2:
        raise ShapeMismatch("text feature dim must be >= 2")
    return _encode_cached(phrase, int(dim))


# -- fusion parameters ----------------------------------------------------------------


@dataclass(frozen=True)
class FeedForward:
    """Residual block ``x + tanh(x W1 + b1) W2 + b2`` acting on rows."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return x + np.tanh(x @ self.W1 + self.b1) @ self.W2 + self.b2


@dataclass(frozen=True)
class RoundParams:
    image_attention: AttentionParams  # regions attend to the phrase
    text_attention: AttentionParams  # phrase attends to the regions
    image_ff: FeedForward
    text_ff: FeedForward

    @property
    def dim(self) -> int:
        return self.image_attention.Wq.shape[0]


_ATT = ("Wq", "Wk", "Wv")
_FF = ("W1", "b1", "W2", "b2")


@dataclass(frozen=True)
class FusionParams:
    rounds: tuple[RoundParams, ...]

    def __post_init__(self):
        if len(self.rounds) < 1:
            raise ValueError("fusion needs at least one round")
        d = self.rounds[0].dim
        for r in self.rounds:
            for att in (r.image_attention, r.text_attention):
                for name in _ATT:
                    if getattr(att, name).shape != (d, d):
                        raise ShapeMismatch(f"attention matrix {name} must be {d}x{d}")

    @property
    def dim(self) -> int:
        return self.rounds[0].dim

    @property
    def R(self) -> int:
        return len(self.rounds)

    @classmethod
    def identity(cls, dim: int, rounds: int = 1, hidden: int | None = None) -> "FusionParams":
        """All-zero weights: uniform attention with zero values and pass-through refiners,
        so fused features equal the inputs."""
        h = hidden or dim
        z = np.zeros((dim, dim))

        def ff():
            return FeedForward(np.zeros((dim, h)), np.zeros(h), np.zeros((h, dim)), np.zeros(dim))

        att = AttentionParams(z, z, z)
        return cls(tuple(RoundParams(att, att, ff(), ff()) for _ in range(rounds)))

    @classmethod
    def random(cls, dim: int, rounds: int, rng: np.random.Generator, hidden: int | None = None, gain: float = 1.0):
        h = hidden or dim

        def att():
            return AttentionParams(*(gain * init_uniform(rng, (dim, dim), dim) for _ in _ATT))

        def ff():
            return FeedForward(
                gain * init_uniform(rng, (dim, h), dim),
                np.zeros(h),
                gain * init_uniform(rng, (h, dim), h),
                np.zeros(dim),
            )

        return cls(tuple(RoundParams(att(), att(), ff(), ff()) for _ in range(rounds)))

    def to_bundle(self) -> ParamBundle:
        items = []
        for k, r in enumerate(self.rounds):
            for side, att in (("image", r.image_attention), ("text", r.text_attention)):
                items += [(f"round{k}.{side}_att.{n}", getattr(att, n)) for n in _ATT]
            for side, ff in (("image", r.image_ff), ("text", r.text_ff)):
                items += [(f"round{k}.{side}_ff.{n}", getattr(ff, n)) for n in _FF]
        return ParamBundle(items)

    @classmethod
    def from_bundle(cls, bundle: ParamBundle) -> "FusionParams":
        rounds = []
        k = 0
        while f"round{k}.image_att.Wq" in bundle:
            p = f"round{k}."
            rounds.append(
                RoundParams(
                    AttentionParams(*(bundle[p + "image_att." + n] for n in _ATT)),
                    AttentionParams(*(bundle[p + "text_att." + n] for n in _ATT)),
                    FeedForward(*(bundle[p + "image_ff." + n] for n in _FF)),
                    FeedForward(*(bundle[p + "text_ff." + n] for n in _FF)),
                )
            )
            k += 1
        return cls(tuple(rounds))


# -- scoring ----------------------------------------------------------------------


def logistic(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def fuse_round(O, B, params: RoundParams) -> tuple[np.ndarray, np.ndarray]:
    """One bidirectional cross-attention exchange followed by the residual refiners."""
    O = np.asarray(O, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if O.ndim != 2 or B.ndim != 1 or O.shape[1] != B.shape[0] or O.shape[1] != params.dim:
        raise ShapeMismatch(f"cannot fuse regions {O.shape} with text {B.shape} at dim {params.dim}")
    O_att = cross_attention(O, B[None, :], params.image_attention)
    B_att = cross_attention(B[None, :], O, params.text_attention)[0]
    return params.image_ff(O + O_att), params.text_ff(B + B_att)


def match_logit(view: ViewObservation, text: np.ndarray, params: FusionParams) -> tuple[float, int]:
    """Raw best-region similarity after all fusion rounds, and the winning row (lowest on ties)."""
    text = np.asarray(text, dtype=np.float64)
    if text.shape != (view.dim,) or view.dim != params.dim:
        raise ShapeMismatch(f"view dim {view.dim}, text {text.shape}, fusion dim {params.dim}")
    O, B = view.regions, text
    for r in params.rounds:
        O, B = fuse_round(O, B, r)
    sims = O @ B
    i = int(np.argmax(sims))
    return float(sims[i]), i


def match_score(view: ViewObservation, text: np.ndarray, params: FusionParams) -> tuple[float, int]:
    raw, i = match_logit(view, text, params)
    return logistic(raw), i


@dataclass(frozen=True)
class VerbalizerConfig:
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")


@dataclass(frozen=True)
class VerbalizedMessage:
    text: str
    phrase: str
    direction: str

    def to_json(self) -> dict:
        return {"text": self.text, "phrase": self.phrase, "direction": self.direction}

    @classmethod
    def from_json(cls, d: Mapping) -> "VerbalizedMessage":
        return cls(d["text"], d["phrase"], d["direction"])


def verbalize(phrase: str, direction: str) -> VerbalizedMessage:
    return VerbalizedMessage(f"There is [{phrase}] on your [{direction}]", phrase, direction)


@dataclass(frozen=True)
class ScoreReport:
    """``scores[phrase][direction] = (score, argmax_region)``."""

    scores: Mapping[str, Mapping[str, tuple[float, int]]] = field(default_factory=dict)

    def best(self, phrase: str) -> tuple[str, float]:
        by_dir = self.scores[phrase]
        direction = max(DIRECTIONS, key=lambda d: (by_dir[d][0], -DIRECTIONS.index(d)))
        return direction, by_dir[direction][0]

    def to_json(self) -> dict:
        return {p: {d: [s, i] for d, (s, i) in by_dir.items()} for p, by_dir in self.scores.items()}

    @classmethod
    def from_json(cls, doc: Mapping) -> "ScoreReport":
        return cls({p: {d: (float(v[0]), int(v[1])) for d, v in by_dir.items()} for p, by_dir in doc.items()})


def verbalize_report(report: ScoreReport, cfg: VerbalizerConfig) -> list[VerbalizedMessage]:
    """At most one message per landmark, for its best direction, when that score exceeds tau."""
    out = []
    for phrase in report.scores:
        direction, score = report.best(phrase)
        if score > cfg.tau:
            out.append(verbalize(phrase, direction))
    return out


def recognize(
    panorama: Panorama,
    landmarks: LandmarkSet | Sequence[str],
    params: FusionParams,
    cfg: VerbalizerConfig = VerbalizerConfig(),
    logit_offset: Callable[[str, str], float] | None = None,
) -> tuple[ScoreReport, list[VerbalizedMessage]]:
    """Score every landmark against each view and verbalize the confident ones.

    ``logit_offset(phrase, direction)`` is added to the raw similarity before
    the logistic map; it is how a noise-injected scorer is built.
    """
    phrases = list(landmarks)
    if not phrases:
        raise ValueError("recognize needs at least one landmark")
    scores: dict[str, dict[str, tuple[float, int]]] = {}
    for phrase in phrases:
        B = encode_text(phrase, panorama.dim)
        by_dir = {}
        for view in panorama.views:
            raw, i = match_logit(view, B, params)
            if logit_offset is not None:
                raw += logit_offset(phrase, view.direction)
            by_dir[view.direction] = (logistic(raw), i)
        scores[phrase] = by_dir
    report = ScoreReport(scores)
    return report, verbalize_report(report, cfg)


def hashed_noise(seed: int, std: float, *key) -> float:
    """Deterministic N(0, std^2) draw addressed by ``key``; independent of call order."""
    h = hashlib.blake2b(repr((seed, *key)).encode("utf-8"), digest_size=8).digest()
    return float(std * np.random.default_rng(int.from_bytes(h, "little")).standard_normal())


class LandmarkRecognizer:
    """Recognizer bound to fixed parameters, with per-node result caching.

    ``noise_std > 0`` gives the noise-injected scorer: each
    ``(node, phrase, direction)`` receives a fixed logit perturbation, so
    the same observation always scores the same regardless of tau.
    """

    def __init__(
        self,
        params: FusionParams,
        tau: float = DEFAULT_TAU,
        noise_std: float = 0.0,
        noise_seed: int = 0,
    ):
        self.params = params
        self.cfg = VerbalizerConfig(tau)
        self.noise_std = float(noise_std)
        self.noise_seed = int(noise_seed)
        self._cache: dict[tuple, ScoreReport] = {}

    @property
    def dim(self) -> int:
        return self.params.dim

    def score(self, node: str, panorama: Panorama, landmarks: Sequence[str]) -> ScoreReport:
        key = (node, tuple(landmarks))
        hit = self._cache.get(key)
        if hit is None:
            offset = None
            if self.noise_std > 0:
                offset = partial(hashed_noise, self.noise_seed, self.noise_std, node)
            hit, _ = recognize(panorama, landmarks, self.params, self.cfg, offset)
            self._cache[key] = hit
        return hit

    def __call__(self, node: str, panorama: Panorama, landmarks: Sequence[str]):
        report = self.score(node, panorama, landmarks)
        return report, verbalize_report(report, self.cfg)
