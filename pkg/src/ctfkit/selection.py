"""Instruction-data curation: coverage selection and dataset assembly.

The core selector is greedy k-center: starting from the base dataset as the
center set, it repeatedly picks the pool record farthest (Euclidean, over
L2-normalized embeddings) from all centers chosen so far. Farthest-point ties
break toward the lowest pool index, everywhere, so runs are reproducible.

Supporting passes: outlier-tail removal before selection, difficulty top-k,
base+selected merging with origin tags, and benchmark decontamination
(exact content-key match plus embedding cosine similarity above a threshold).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .domain import (
    InstructRecord,
    ORIGIN_BASE,
    ORIGIN_SENSITIVITY,
    Problem,
    content_key,
    seed_id,
)
from .embeddings import Embedder, EmbeddingCache, embed_batch
from .metrics import PercentileReport, percentile_report


class SelectionError(ValueError):
    pass


def _matrix(records: Sequence[InstructRecord], label: str) -> np.ndarray:
    if not records:
        return np.zeros((0, 0), dtype=np.float64)
    rows = []
    dim: int | None = None
    for record in records:
        if record.embedding is None:
            raise SelectionError(f"{label} record {record.id!r} has no embedding")
        if dim is None:
            dim = len(record.embedding)
        elif len(record.embedding) != dim:
            raise SelectionError(
                f"{label} record {record.id!r} has dimension {len(record.embedding)}, expected {dim}"
            )
        rows.append(record.embedding)
    return np.asarray(rows, dtype=np.float64)


def ensure_embeddings(
    records: Sequence[InstructRecord],
    embedder: Embedder,
    cache: EmbeddingCache | None = None,
) -> list[InstructRecord]:
    """Return records with embeddings, computing any that are missing."""
    missing = [r for r in records if r.embedding is None]
    if not missing:
        return list(records)
    vectors = embed_batch([r.instruction for r in missing], embedder, cache)
    by_id = {r.id: vec.values for r, vec in zip(missing, vectors)}
    return [
        r if r.embedding is not None else replace(r, embedding=by_id[r.id])
        for r in records
    ]


def _min_dists_to(points: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per point, the minimum Euclidean distance to any target row."""
    if targets.shape[0] == 0:
        return np.full(points.shape[0], np.inf)
    out = np.full(points.shape[0], np.inf)
    for row in targets:
        np.minimum(out, np.linalg.norm(points - row, axis=1), out=out)
    return out


def kcenter_greedy(
    base: Sequence[InstructRecord],
    pool: Sequence[InstructRecord],
    tau: int,
) -> list[InstructRecord]:
    """Select tau pool records by greedy farthest-point coverage.

    Centers start as the whole base set; each round picks the pool record
    with the largest minimum distance to the current centers and adds it.
    Returns the selections in pick order. Ties go to the lowest pool index.
    With an empty base, every distance starts at infinity and the first pick
    is pool index 0.
    """
    if tau < 0:
        raise SelectionError("tau must be >= 0")
    if tau > len(pool):
        raise SelectionError(f"tau ({tau}) exceeds pool size ({len(pool)})")
    if tau == 0:
        return []
    pool_m = _matrix(pool, "pool")
    base_m = _matrix(base, "base")
    if base and pool and base_m.shape[1] != pool_m.shape[1]:
        raise SelectionError(
            f"base dimension {base_m.shape[1]} != pool dimension {pool_m.shape[1]}"
        )
    min_dist = _min_dists_to(pool_m, base_m)
    selected: list[int] = []
    for _ in range(tau):
        idx = int(np.argmax(min_dist))  # first occurrence: lowest index on ties
        selected.append(idx)
        np.minimum(min_dist, np.linalg.norm(pool_m - pool_m[idx], axis=1), out=min_dist)
        min_dist[idx] = -np.inf
    return [pool[i] for i in selected]


def covering_radius(
    base: Sequence[InstructRecord],
    selected: Sequence[InstructRecord],
    pool: Sequence[InstructRecord],
) -> float:
    """Max over pool of the min distance to base+selected centers."""
    centers = list(base) + list(selected)
    if not centers or not pool:
        raise SelectionError("covering_radius requires centers and a pool")
    dists = _min_dists_to(_matrix(pool, "pool"), _matrix(centers, "centers"))
    return float(dists.max())


def remove_outliers(
    pool: Sequence[InstructRecord],
    base: Sequence[InstructRecord],
    fraction: float = 0.01,
) -> tuple[list[InstructRecord], list[InstructRecord]]:
    """Drop the ceil(fraction*N) pool records farthest from the base set.

    Distance is each record's minimum distance to any base record; the most
    distant are removed first, ties resolved against the higher index.
    Returns (kept, removed), both preserving pool order.
    """
    if not 0.0 <= fraction <= 1.0:
        raise SelectionError("fraction must be in [0, 1]")
    if not pool:
        return [], []
    if not base:
        raise SelectionError("outlier removal requires a non-empty base set")
    count = math.ceil(fraction * len(pool))
    if count == 0:
        return list(pool), []
    dists = _min_dists_to(_matrix(pool, "pool"), _matrix(base, "base"))
    order = sorted(range(len(pool)), key=lambda i: (-dists[i], -i))
    removed_idx = set(order[:count])
    kept = [r for i, r in enumerate(pool) if i not in removed_idx]
    removed = [r for i, r in enumerate(pool) if i in removed_idx]
    return kept, removed


def topk_by_difficulty(pool: Sequence[InstructRecord], k: int) -> list[InstructRecord]:
    """The k hardest records (difficulty 1-5), ties to the lowest index,
    returned in their original pool order."""
    if k < 0:
        raise SelectionError("k must be >= 0")
    if k > len(pool):
        raise SelectionError(f"k ({k}) exceeds pool size ({len(pool)})")
    for record in pool:
        if record.difficulty is None:
            raise SelectionError(f"record {record.id!r} has no difficulty score")
    order = sorted(range(len(pool)), key=lambda i: (-pool[i].difficulty, i))
    chosen = sorted(order[:k])
    return [pool[i] for i in chosen]


def merge_datasets(
    base: Sequence[InstructRecord], selected: Sequence[InstructRecord]
) -> list[InstructRecord]:
    """Concatenate base then selected, tagging origins. Ids must not collide."""
    base_ids = {r.id for r in base}
    collisions = sorted(base_ids & {r.id for r in selected})
    if collisions:
        raise SelectionError(f"id collision between base and selected: {collisions[:5]}")
    out = [r if r.origin == ORIGIN_BASE else replace(r, origin=ORIGIN_BASE) for r in base]
    out.extend(
        r if r.origin == ORIGIN_SENSITIVITY else replace(r, origin=ORIGIN_SENSITIVITY)
        for r in selected
    )
    return out


def decontaminate(
    pool: Sequence[InstructRecord],
    benchmark: Sequence[Problem | InstructRecord],
    *,
    threshold: float = 0.95,
    embedder: Embedder | None = None,
    cache: EmbeddingCache | None = None,
) -> tuple[list[InstructRecord], list[dict[str, Any]]]:
    """Remove pool records that match benchmark problems.

    Two matchers run: exact normalized-content-key equality, and embedding
    cosine similarity strictly above ``threshold`` (requires an embedder;
    without one, only exact matching runs). Returns (kept, removal_log);
    every removal is logged with its reason and matched benchmark id.
    """
    if not 0.0 < threshold <= 1.0:
        raise SelectionError("threshold must be in (0, 1]")
    bench_keys: dict[str, str] = {}
    for item in benchmark:
        bench_keys.setdefault(content_key(item), getattr(item, "id", "?"))

    bench_matrix = None
    bench_ids: list[str] = []
    pool_with_emb: Sequence[InstructRecord] = pool
    if embedder is not None and benchmark:
        bench_texts = [
            item.question_content if isinstance(item, Problem) else item.instruction
            for item in benchmark
        ]
        bench_vectors = embed_batch(bench_texts, embedder, cache)
        bench_matrix = np.asarray([v.values for v in bench_vectors], dtype=np.float64)
        bench_ids = [getattr(item, "id", "?") for item in benchmark]
        pool_with_emb = ensure_embeddings(pool, embedder, cache)

    kept: list[InstructRecord] = []
    log: list[dict[str, Any]] = []
    for record, original_record in zip(pool_with_emb, pool):
        key = content_key(record)
        if key in bench_keys:
            log.append(
                {"id": record.id, "reason": "exact", "match": bench_keys[key], "similarity": None}
            )
            continue
        if bench_matrix is not None and record.embedding is not None:
            vec = np.asarray(record.embedding, dtype=np.float64)
            # Embeddings are unit vectors; the dot product is the cosine.
            sims = bench_matrix @ vec
            hit = int(np.argmax(sims))
            if float(sims[hit]) > threshold:
                log.append(
                    {
                        "id": record.id,
                        "reason": "similar",
                        "match": bench_ids[hit],
                        "similarity": float(sims[hit]),
                    }
                )
                continue
        kept.append(original_record)
    return kept, log


# === distribution diagnostics over seed/derived pairs ===

@dataclass(frozen=True)
class DiagnosticsReport:
    similarity: PercentileReport       # descending: p% of pairs are at least this similar
    difficulty_diff: PercentileReport  # ascending: p% of pairs differ by at most this much
    pair_count: int

    def to_json(self) -> dict[str, Any]:
        return {
            "similarity": self.similarity.to_json(),
            "difficulty_diff": self.difficulty_diff.to_json(),
            "pair_count": self.pair_count,
        }


def dimension_diagnostics(
    seeds: Sequence[InstructRecord], derived: Sequence[InstructRecord]
) -> DiagnosticsReport:
    """Percentile profile of how far derived records move from their seeds.

    Derived records pair with seeds through their id ("<seed>#ctf<k>").
    Similarity is the embedding cosine similarity of each pair; difficulty
    difference is the absolute gap of the 1-5 scores. Raises on an unpaired
    derived record or missing embeddings/difficulties.
    """
    by_id = {r.id: r for r in seeds}
    sims: list[float] = []
    diffs: list[float] = []
    for record in derived:
        sid = seed_id(record.id)
        seed = by_id.get(sid)
        if seed is None:
            raise SelectionError(f"derived record {record.id!r} has no seed {sid!r}")
        if seed.embedding is None or record.embedding is None:
            raise SelectionError(f"pair {record.id!r} is missing an embedding")
        if seed.difficulty is None or record.difficulty is None:
            raise SelectionError(f"pair {record.id!r} is missing a difficulty score")
        a = np.asarray(seed.embedding, dtype=np.float64)
        b = np.asarray(record.embedding, dtype=np.float64)
        sims.append(float(a @ b) / (float(np.linalg.norm(a)) * float(np.linalg.norm(b))))
        diffs.append(float(abs(record.difficulty - seed.difficulty)))
    if not sims:
        raise SelectionError("no seed/derived pairs to diagnose")
    return DiagnosticsReport(
        similarity=percentile_report(sims, descending=True),
        difficulty_diff=percentile_report(diffs),
        pair_count=len(sims),
    )


def render_diagnostics(
    similarity: PercentileReport, difficulty_diff: PercentileReport
) -> str:
    """Fixed-width table of the two percentile profiles."""
    if sorted(similarity.percentiles) != sorted(difficulty_diff.percentiles):
        raise SelectionError("reports cover different percentiles")
    lines = [f"{'percentile':<12} {'similarity':>12} {'difficulty_diff':>16}"]
    for p in sorted(similarity.percentiles):
        lines.append(
            f"{p:<12d} {similarity.percentiles[p]:>12.2f} {difficulty_diff.percentiles[p]:>16.2f}"
        )
    return "\n".join(lines) + "\n"
