"""Landmark phrase extraction from instruction text, plus PRF1 scoring.

The default extractor is rule based: it finds head nouns from a lexicon and
grows each match leftwards over adjective, number and determiner tokens.
An external extractor (an LLM, for instance) can be plugged in through the
JSONL request/response files handled at the bottom of this module.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

ARTICLES = frozenset({"a", "an", "the"})
DETERMINERS = ARTICLES | frozenset({"this", "that", "these", "those", "another", "some"})
NUMBERS = frozenset(
    {"one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "several", "many", "few"}
)
ADJECTIVES = frozenset(
    {
        # colours
        "red", "green", "blue", "yellow", "black", "white", "gray", "grey", "brown", "orange",
        "purple", "pink", "silver", "golden", "dark", "light", "bright", "pale",
        # size / shape
        "big", "large", "small", "tiny", "tall", "short", "long", "wide", "narrow", "round", "square",
        "huge", "little", "high", "low",
        # material / condition / style
        "brick", "glass", "metal", "wooden", "stone", "concrete", "steel", "old", "new", "modern",
        "historic", "ornate", "striped", "painted", "rusty", "shiny", "empty", "busy", "closed", "open",
        "corner", "double", "single", "parked", "flashing", "hanging",
    }
)

DEFAULT_LEXICON = frozenset(
    {
        "traffic light", "signpost", "street sign", "mailbox", "bus stop", "building", "fire hydrant",
        "garbage can", "trash can", "awning", "scaffolding", "bench", "tree", "lamp post", "parking meter",
        "church", "bank", "cafe", "hotel", "restaurant", "bike rack", "flag", "statue", "fountain",
        "newsstand", "phone booth", "billboard", "store", "pharmacy", "truck", "van", "fence",
    }
)

_TOKEN_RE = re.compile(r"[a-z0-9]+(?:['-][a-z0-9]+)*|[^\sa-z0-9]")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _plurals(tokens: tuple[str, ...]) -> set[tuple[str, ...]]:
    *head, last = tokens
    forms = {tokens, (*head, last + "s"), (*head, last + "es")}
    if last.endswith("y") and len(last) > 1:
        forms.add((*head, last[:-1] + "ies"))
    return forms


def _compile_lexicon(lexicon: Iterable[str]) -> dict[int, set[tuple[str, ...]]]:
    by_len: dict[int, set[tuple[str, ...]]] = {}
    for entry in lexicon:
        toks = tuple(t for t in tokenize(entry) if t.isalnum() or "-" in t or "'" in t)
        if not toks:
            continue
        for form in _plurals(toks):
            by_len.setdefault(len(form), set()).add(form)
    return by_len


def normalize_phrase(phrase: str) -> str:
    """Lowercase and collapse whitespace."""
    return " ".join(phrase.lower().split())


def match_key(phrase: str) -> str:
    """Comparison key used for scoring: articles dropped, whitespace collapsed."""
    return " ".join(t for t in phrase.lower().split() if t not in ARTICLES)


@dataclass(frozen=True)
class LandmarkSet:
    """Landmark phrases in first-mention order."""

    phrases: tuple[str, ...] = ()

    def __post_init__(self):
        cleaned: list[str] = []
        seen: set[str] = set()
        for p in self.phrases:
            p = normalize_phrase(p)
            if not p:
                raise ValueError("landmark phrases must be non-empty")
            if p not in seen:
                seen.add(p)
                cleaned.append(p)
        object.__setattr__(self, "phrases", tuple(cleaned))

    def __len__(self) -> int:
        return len(self.phrases)

    def __iter__(self):
        return iter(self.phrases)

    def __getitem__(self, i):
        return self.phrases[i]


def _is_word(tok: str) -> bool:
    return tok[0].isalnum()


def extract_landmarks(text: str, lexicon: Iterable[str] = DEFAULT_LEXICON) -> LandmarkSet:
    """Maximal noun chunks whose head noun is in ``lexicon``."""
    tokens = tokenize(text)
    by_len = _compile_lexicon(lexicon)
    lengths = sorted(by_len, reverse=True)
    phrases: list[str] = []
    boundary = 0  # chunks may not reach back into an earlier chunk
    i = 0
    while i < len(tokens):
        hit = 0
        for n in lengths:
            if i + n <= len(tokens) and tuple(tokens[i : i + n]) in by_len[n]:
                hit = n
                break
        if not hit:
            i += 1
            continue
        start = i
        while start > boundary:
            tok = tokens[start - 1]
            if not _is_word(tok):
                break
            if tok in DETERMINERS:
                start -= 1
                break
            if tok in ADJECTIVES or tok in NUMBERS or tok.isdigit():
                start -= 1
                continue
            break
        phrases.append(" ".join(tokens[start : i + hit]))
        i += hit
        boundary = i
    return LandmarkSet(tuple(phrases))


@dataclass(frozen=True)
class PRF1:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, matched: int, n_pred: int, n_gold: int) -> "PRF1":
        if n_pred == 0 and n_gold == 0:
            return cls(1.0, 1.0, 1.0)
        p = matched / n_pred if n_pred else 0.0
        r = matched / n_gold if n_gold else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(p, r, f)


def _match_counts(predicted: Iterable[str], gold: Iterable[str]) -> tuple[int, int, int]:
    pred = {match_key(p) for p in predicted}
    ref = {match_key(g) for g in gold}
    return len(pred & ref), len(pred), len(ref)


def score_extraction(predicted: LandmarkSet | Sequence[str], gold: LandmarkSet | Sequence[str]) -> PRF1:
    """Exact-match precision/recall/F1 after article stripping.

    Two empty sets score 1.0 across the board.
    """
    return PRF1.from_counts(*_match_counts(predicted, gold))


def score_corpus(pairs: Iterable[tuple[Sequence[str], Sequence[str]]]) -> PRF1:
    """Micro-averaged PRF1 over ``(predicted, gold)`` pairs."""
    m = p = g = 0
    for pred, gold in pairs:
        a, b, c = _match_counts(pred, gold)
        m, p, g = m + a, p + b, g + c
    return PRF1.from_counts(m, p, g)


# -- external extractor exchange files --------------------------------------

DEFAULT_PROMPT = (
    "Extract every landmark phrase from the navigation text, keeping its modifiers. "
    "Answer with a JSON list of phrases in order of first mention."
)


def build_prompt(shots: Sequence[tuple[str, Sequence[str]]] = (), instruction: str = DEFAULT_PROMPT) -> str:
    """Few-shot prompt: the instruction followed by ``(text, gold phrases)`` examples."""
    parts = [instruction]
    for text, gold in shots:
        parts.append(f"Text: {text}\nLandmarks: {json.dumps(list(gold))}")
    return "\n\n".join(parts)


def write_provider_requests(path: str | Path, items: Iterable[tuple[str, str]], prompt: str = DEFAULT_PROMPT) -> int:
    """Write ``{id, text, prompt}`` lines for an external extractor. Returns the line count."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for item_id, text in items:
            fh.write(json.dumps({"id": item_id, "text": text, "prompt": prompt}, ensure_ascii=False) + "\n")
            n += 1
    return n


def read_provider_responses(path: str | Path) -> dict[str, LandmarkSet]:
    from .errors import ParseError

    out: dict[str, LandmarkSet] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(str(exc), line=lineno) from exc
            if "id" not in rec:
                raise ParseError("missing key", line=lineno, field="id")
            phrases = rec.get("phrases")
            if not isinstance(phrases, list):
                raise ParseError("expected a list", line=lineno, field="phrases")
            out[str(rec["id"])] = LandmarkSet(tuple(str(p) for p in phrases if str(p).strip()))
    return out


def prf1_table(rows: Mapping[str, Mapping[str, PRF1]], columns: Sequence[str]) -> str:
    """Plain-text table with Precision/Recall/F1 (percent) per column group."""
    head1 = f"{'':<14}" + "".join(f"| {c:^26}" for c in columns)
    head2 = f"{'':<14}" + "".join(f"| {'Precision':>9}{'Recall':>8}{'F1':>8} " for _ in columns)
    lines = [head1, head2, "-" * len(head2)]
    for name, by_col in rows.items():
        cells = []
        for c in columns:
            s = by_col.get(c)
            if s is None:
                cells.append(f"| {'-':>9}{'-':>8}{'-':>8} ")
            else:
                cells.append(f"| {s.precision * 100:>9.1f}{s.recall * 100:>8.1f}{s.f1 * 100:>8.1f} ")
        lines.append(f"{name:<14}" + "".join(cells))
    return "\n".join(lines)
