"""Text embedding providers with caching.

One contract serves both problem descriptions and solution code. Vectors are
L2-normalized here, at the boundary, so every consumer downstream (cosine
distances, coreset selection) can treat them as unit vectors.

Providers:
  * FallbackEmbedder: offline, deterministic hashed character 3-gram counts.
    No model weights, no network; suitable for CI and air-gapped runs.
  * RemoteEmbedder: JSON-over-HTTP, POST {"inputs": [...]} ->
    {"vectors": [[...]]}. Endpoint from CTF_EMBED_URL.

The cache is a line-delimited JSON file addressed by
(provider_id, content key of the text); entries are appended as computed.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence

import httpx
import numpy as np

from .domain import text_content_key

logger = logging.getLogger(__name__)

ENV_EMBED_URL = "CTF_EMBED_URL"
ENV_EMBED_DIM = "CTF_EMBED_DIM"
DEFAULT_DIM = 256
NORM_TOLERANCE = 1e-6


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    provider_id: str

    @property
    def dim(self) -> int:
        return len(self.values)


class EmbeddingError(RuntimeError):
    pass


class Embedder(Protocol):
    provider_id: str

    def embed_raw(self, texts: Sequence[str]) -> list[list[float]]:
        """Raw (not necessarily normalized) vectors, one per input text."""
        ...


def _l2_normalize(vec: Sequence[float]) -> tuple[float, ...]:
    arr = np.asarray(vec, dtype=np.float64)
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise EmbeddingError("provider returned a zero vector")
    return tuple((arr / norm).tolist())


def _bucket(gram: str, dim: int) -> int:
    # Seedless and stable across runs/platforms, unlike builtin hash().
    digest = hashlib.sha256(gram.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % dim


class FallbackEmbedder:
    """Hashed character 3-gram counts. Deterministic, offline."""

    def __init__(self, dim: int | None = None):
        if dim is None:
            dim = int(os.environ.get(ENV_EMBED_DIM, DEFAULT_DIM))
        if dim <= 0:
            raise ValueError("embedding dimension must be positive")
        self.dim = dim
        self.provider_id = f"fallback-3gram-{dim}"

    def embed_raw(self, texts: Sequence[str]) -> list[list[float]]:
        out = []
        for text in texts:
            if not text:
                raise EmbeddingError("cannot embed empty text")
            counts = np.zeros(self.dim, dtype=np.float64)
            if len(text) < 3:
                counts[_bucket(text, self.dim)] += 1.0
            else:
                for i in range(len(text) - 2):
                    counts[_bucket(text[i : i + 3], self.dim)] += 1.0
            out.append(counts.tolist())
        return out


class RemoteEmbedder:
    """JSON-over-HTTP embedding client with capped exponential backoff."""

    def __init__(
        self,
        url: str | None = None,
        *,
        batch_size: int = 64,
        max_retries: int = 3,
        timeout: float = 30.0,
        backoff_base: float = 0.5,
        backoff_cap: float = 8.0,
    ):
        url = url or os.environ.get(ENV_EMBED_URL)
        if not url:
            raise EmbeddingError(f"no embedding endpoint; set {ENV_EMBED_URL} or pass url")
        self.url = url
        self.batch_size = batch_size
        self.max_retries = max_retries
        self.timeout = timeout
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self.provider_id = f"remote:{url}"

    def _post(self, batch: list[str]) -> list[list[float]]:
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = httpx.post(self.url, json={"inputs": batch}, timeout=self.timeout)
                resp.raise_for_status()
                payload = resp.json()
                vectors = payload.get("vectors")
                if not isinstance(vectors, list) or len(vectors) != len(batch):
                    raise EmbeddingError(
                        f"endpoint returned {0 if not isinstance(vectors, list) else len(vectors)}"
                        f" vectors for {len(batch)} inputs"
                    )
                return [[float(x) for x in vec] for vec in vectors]
            except (httpx.HTTPError, ValueError) as exc:
                last_error = exc
                if attempt < self.max_retries:
                    delay = min(self.backoff_cap, self.backoff_base * (2**attempt))
                    logger.warning("embedding request failed (%s); retrying in %.1fs", exc, delay)
                    time.sleep(delay)
        raise EmbeddingError(f"embedding endpoint failed after {self.max_retries + 1} attempts: {last_error}")

    def embed_raw(self, texts: Sequence[str]) -> list[list[float]]:
        out: list[list[float]] = []
        for start in range(0, len(texts), self.batch_size):
            out.extend(self._post(list(texts[start : start + self.batch_size])))
        return out


class EmbeddingCache:
    """Append-only JSONL cache keyed by (provider_id, content key).

    IO failures degrade to recomputation with a warning; they never abort
    the pipeline. A single writer lock serializes appends.
    """

    def __init__(self, path: str | os.PathLike[str]):
        self.path = os.fspath(path)
        self._lock = threading.Lock()
        self._entries: dict[tuple[str, str], tuple[float, ...]] = {}
        self._load()

    def _load(self) -> None:
        if not os.path.exists(self.path):
            return
        try:
            with open(self.path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        obj = json.loads(line)
                        key = (str(obj["provider"]), str(obj["key"]))
                        self._entries[key] = tuple(float(x) for x in obj["vector"])
                    except (ValueError, KeyError, TypeError):
                        logger.warning("skipping corrupt cache line in %s", self.path)
        except OSError as exc:
            logger.warning("cannot read embedding cache %s (%s); starting empty", self.path, exc)

    def get(self, provider_id: str, key: str) -> tuple[float, ...] | None:
        return self._entries.get((provider_id, key))

    def put(self, provider_id: str, key: str, vector: tuple[float, ...]) -> None:
        with self._lock:
            if (provider_id, key) in self._entries:
                return
            self._entries[(provider_id, key)] = vector
            line = json.dumps(
                {"provider": provider_id, "key": key, "vector": list(vector)},
                ensure_ascii=False,
                separators=(",", ":"),
            )
            try:
                directory = os.path.dirname(self.path)
                if directory:
                    os.makedirs(directory, exist_ok=True)
                with open(self.path, "a", encoding="utf-8", newline="\n") as fh:
                    fh.write(line + "\n")
            except OSError as exc:
                logger.warning("cannot append to embedding cache %s (%s)", self.path, exc)

    def __len__(self) -> int:
        return len(self._entries)


def embed_batch(
    texts: Sequence[str],
    provider: Embedder,
    cache: EmbeddingCache | None = None,
) -> list[EmbeddingVector]:
    """Embed texts, serving from cache where possible.

    Every returned vector is L2-normalized (unit norm within 1e-6) and all
    vectors in a batch share one dimension; drift raises EmbeddingError.
    """
    keys = [text_content_key(t) for t in texts]
    results: list[tuple[float, ...] | None] = [None] * len(texts)
    missing: list[int] = []
    for i, key in enumerate(keys):
        if cache is not None:
            hit = cache.get(provider.provider_id, key)
            if hit is not None:
                results[i] = hit
                continue
        missing.append(i)

    if missing:
        raw = provider.embed_raw([texts[i] for i in missing])
        if len(raw) != len(missing):
            raise EmbeddingError(f"provider returned {len(raw)} vectors for {len(missing)} texts")
        for i, vec in zip(missing, raw):
            normalized = _l2_normalize(vec)
            results[i] = normalized
            if cache is not None:
                cache.put(provider.provider_id, keys[i], normalized)

    dim: int | None = None
    out: list[EmbeddingVector] = []
    for i, vec in enumerate(results):
        assert vec is not None
        if dim is None:
            dim = len(vec)
        elif len(vec) != dim:
            raise EmbeddingError(f"embedding dimension drift: got {len(vec)}, expected {dim}")
        norm = float(np.linalg.norm(np.asarray(vec)))
        if abs(norm - 1.0) > NORM_TOLERANCE:
            raise EmbeddingError(f"vector {i} not unit-norm after normalization ({norm})")
        out.append(EmbeddingVector(values=vec, provider_id=provider.provider_id))
    return out


def embed(text: str, provider: Embedder, cache: EmbeddingCache | None = None) -> EmbeddingVector:
    return embed_batch([text], provider, cache)[0]


def provider_from_env() -> Embedder:
    """Remote embedder when CTF_EMBED_URL is set, offline fallback otherwise."""
    if os.environ.get(ENV_EMBED_URL):
        return RemoteEmbedder()
    return FallbackEmbedder()
