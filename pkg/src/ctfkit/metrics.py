"""Distance metrics and the counterfactual selection objective.

Description distance (dq) is a character-level normalized edit distance over
NFC-normalized, whitespace-collapsed text; only the description text is
compared, never starter code. Solution distance (ds) is cosine distance
between embeddings. The objective combines them: objective = ds - lambda * dq.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .domain import CandidateVariant, Problem, normalize_text, with_dq

DEFAULT_EPSILON = 0.13
DEFAULT_LAMBDA = 1.2


@dataclass(frozen=True)
class ObjectiveParams:
    """Parameters of the candidate-selection objective.

    epsilon bounds the normalized description distance; lambda_ weighs the
    description-distance penalty against solution distance.
    """

    epsilon: float = DEFAULT_EPSILON
    lambda_: float = DEFAULT_LAMBDA

    def __post_init__(self) -> None:
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.lambda_ < 0:
            raise ValueError("lambda must be >= 0")

    def to_json(self) -> dict[str, float]:
        return {"epsilon": self.epsilon, "lambda": self.lambda_}

    @classmethod
    def from_json(cls, obj: dict) -> "ObjectiveParams":
        return cls(
            epsilon=float(obj.get("epsilon", DEFAULT_EPSILON)),
            lambda_=float(obj.get("lambda", DEFAULT_LAMBDA)),
        )


def _codepoints(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-32-le"), dtype=np.uint32)


def _levenshtein_small(a: str, b: str) -> int:
    # Two-row DP; cheaper than the vectorized path below short of ~48 chars.
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        append = cur.append
        for j, cb in enumerate(b, 1):
            append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def levenshtein(a: str, b: str) -> int:
    """Exact edit distance (insert/delete/substitute, unit costs)."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    if max(len(a), len(b)) < 48:
        return _levenshtein_small(a, b)
    # Row-wise DP. Within a row, deletions/substitutions are elementwise in
    # the previous row; the insertion recurrence cur[j] = cur[j-1] + 1 is a
    # running prefix minimum: cur[j] = min_k<=j (base[k] + (j - k)), computed
    # as cumulative-min of (base - j) shifted back.
    if len(a) < len(b):
        a, b = b, a
    bcodes = _codepoints(b)
    m = len(bcodes)
    idx = np.arange(m + 1, dtype=np.int64)
    prev = idx.copy()
    base = np.empty(m + 1, dtype=np.int64)
    for i, ca in enumerate(a, 1):
        cost = (bcodes != ord(ca)).astype(np.int64)
        base[0] = i
        np.minimum(prev[1:] + 1, prev[:-1] + cost, out=base[1:])
        prev = np.minimum.accumulate(base - idx) + idx
    return int(prev[m])


def normalized_levenshtein(a: str, b: str) -> float:
    """Edit distance over normalized text, divided by the longer length.

    Both texts are NFC-normalized with whitespace runs collapsed before
    comparison. Returns a value in [0, 1]; two empty (or all-whitespace)
    texts are at distance 0.
    """
    a = normalize_text(a)
    b = normalize_text(b)
    longest = max(len(a), len(b))
    if longest == 0:
        return 0.0
    return levenshtein(a, b) / longest


def cosine_distance(u: Sequence[float], v: Sequence[float]) -> float:
    """1 - cosine similarity. Raises on dimension mismatch or a zero vector."""
    uv = np.asarray(u, dtype=np.float64)
    vv = np.asarray(v, dtype=np.float64)
    if uv.ndim != 1 or vv.ndim != 1:
        raise ValueError("cosine_distance expects 1-d vectors")
    if uv.shape[0] != vv.shape[0]:
        raise ValueError(f"dimension mismatch: {uv.shape[0]} vs {vv.shape[0]}")
    nu = float(np.linalg.norm(uv))
    nv = float(np.linalg.norm(vv))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine_distance is undefined for zero vectors")
    sim = float(np.dot(uv, vv)) / (nu * nv)
    # Guard floating drift so identical vectors land exactly at 0.
    sim = max(-1.0, min(1.0, sim))
    return 1.0 - sim


def ctf_objective(dq: float, ds: float, params: ObjectiveParams | None = None) -> float:
    """Score a candidate: solution distance minus weighted description distance."""
    params = params or ObjectiveParams()
    return ds - params.lambda_ * dq


def epsilon_filter(
    candidates: Iterable[CandidateVariant],
    original: Problem,
    params: ObjectiveParams | None = None,
) -> list[CandidateVariant]:
    """Keep candidates whose description stays within epsilon of the original.

    Computes dq for every candidate against the original description and
    retains those with dq <= epsilon (boundary inclusive), preserving input
    order. Returned candidates carry their computed dq. Raises ValueError if
    a candidate does not belong to ``original``.
    """
    params = params or ObjectiveParams()
    retained: list[CandidateVariant] = []
    for cand in candidates:
        if cand.parent_id != original.id:
            raise ValueError(
                f"candidate {cand.id!r} has parent {cand.parent_id!r}, expected {original.id!r}"
            )
        dq = normalized_levenshtein(original.question_content, cand.question_content)
        if dq <= params.epsilon:
            retained.append(with_dq(cand, dq))
    return retained


# === percentile reports ===

STANDARD_PERCENTILES = (25, 50, 75, 95)


@dataclass(frozen=True)
class PercentileReport:
    """Nearest-rank percentiles of a value list.

    ``descending`` selects the orientation: ascending answers "p% of values
    are <= v", descending answers "p% of values are >= v".
    """

    percentiles: dict[int, float]
    count: int
    descending: bool = False

    def to_json(self) -> dict:
        return {
            "percentiles": {str(p): v for p, v in self.percentiles.items()},
            "count": self.count,
            "descending": self.descending,
        }


def percentile_report(
    values: Sequence[float],
    percentiles: Sequence[int] = STANDARD_PERCENTILES,
    *,
    descending: bool = False,
) -> PercentileReport:
    """Nearest-rank percentiles: rank = ceil(p/100 * n) into the sorted list."""
    if not values:
        raise ValueError("percentile_report requires at least one value")
    for p in percentiles:
        if not 0 < p <= 100:
            raise ValueError(f"percentile {p} out of range (0, 100]")
    ordered = sorted(values, reverse=descending)
    n = len(ordered)
    out: dict[int, float] = {}
    for p in percentiles:
        rank = max(1, math.ceil(p / 100 * n))
        out[int(p)] = float(ordered[rank - 1])
    return PercentileReport(percentiles=out, count=n, descending=descending)
