"""Embedding providers and the fp16 shard store.

Vectors are unit-normalized in full precision, stored as IEEE half, and carry
a provider tag so shards are attributable to the model (and any instruction
prefix) that produced them.

Shard layout, all little-endian:
    magic    4 bytes  b"EMB1"  (magic doubles as the format version)
    dim      u32
    count    u64
    tag_len  u32, then tag_len bytes of UTF-8 provider tag
    ids      count * 16 bytes (raw 128-bit chunk ids)
    vectors  count * dim * 2 bytes, IEEE half, row-major
"""
from __future__ import annotations

import hashlib
import os
import struct
import time
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import requests

MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sIQI")

NORM_TOLERANCE = 2.0 ** -8


class ShardFormatError(ValueError):
    pass


class DegenerateEmbeddingError(ValueError):
    """Zero vector cannot be normalized onto the unit sphere."""


class DimensionMismatchError(ValueError):
    pass


class EmbeddingBatchError(RuntimeError):
    """Provider failed for a batch after retries; carries the failed text indices."""

    def __init__(self, message: str, indices: Sequence[int]):
        super().__init__(message)
        self.indices = list(indices)


def normalize(vector: np.ndarray) -> np.ndarray:
    """v / ||v||2 computed in float64, then rounded to half precision."""
    v = np.asarray(vector, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise DegenerateEmbeddingError("degenerate embedding: zero vector")
    return (v / norm).astype(np.float16)


@dataclass(frozen=True)
class ProviderConfig:
    endpoint: str = ""
    batch_size: int = 64
    max_retries: int = 3
    timeout: float = 30.0
    backoff: float = 0.5
    # Optional instruction prefix prepended to every text; recorded in the
    # provider tag so stored vectors stay attributable.
    prefix: str = ""
    api_key_env: str = "CONTAMKIT_API_KEY"


class HashingProvider:
    """Deterministic offline embedder: seeded token-hash projection, unit sphere.

    Each token maps to a fixed Gaussian direction derived from (seed, token),
    and a text embeds as the normalized sum over its token bag. Texts with
    equal token multisets therefore embed identically regardless of order,
    which is exactly what the planted-fixture tests rely on.
    """

    def __init__(self, dim: int = 64, seed: int = 0, prefix: str = ""):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.seed = seed
        self.prefix = prefix
        self._token_cache: dict[str, np.ndarray] = {}

    @property
    def provider_tag(self) -> str:
        tag = f"hash-proj:dim={self.dim}:seed={self.seed}"
        if self.prefix:
            tag += f":prefix={self.prefix}"
        return tag

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._token_cache.get(token)
        if vec is None:
            digest = hashlib.blake2b(
                token.encode("utf-8"), digest_size=8, key=str(self.seed).encode("utf-8")
            ).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            vec = rng.standard_normal(self.dim)
            self._token_cache[token] = vec
        return vec

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        out = np.empty((len(texts), self.dim), dtype=np.float64)
        for i, text in enumerate(texts):
            tokens = (self.prefix + text).split() or [""]
            counts = Counter(tokens)
            acc = np.zeros(self.dim, dtype=np.float64)
            # canonical summation order: equal token bags give bit-equal sums
            for token in sorted(counts):
                acc += counts[token] * self._token_vector(token)
            out[i] = acc
        return out


class HttpProvider:
    """HTTP embedding service adapter: POST /embed {"texts": [...]}."""

    def __init__(self, config: ProviderConfig, model_tag: str = "http"):
        if not config.endpoint:
            raise ValueError("HttpProvider requires an endpoint")
        self.config = config
        self.model_tag = model_tag

    @property
    def provider_tag(self) -> str:
        tag = self.model_tag
        if self.config.prefix:
            tag += f":prefix={self.config.prefix}"
        return tag

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        payload = {"texts": [self.config.prefix + t for t in texts]}
        headers = {}
        key = os.environ.get(self.config.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                time.sleep(self.config.backoff * (2 ** (attempt - 1)))
            try:
                resp = requests.post(
                    self.config.endpoint, json=payload, headers=headers,
                    timeout=self.config.timeout,
                )
                if resp.status_code >= 500 or resp.status_code == 429:
                    last_error = RuntimeError(f"server error {resp.status_code}")
                    continue
                resp.raise_for_status()
                vectors = resp.json()["vectors"]
                if len(vectors) != len(texts):
                    raise RuntimeError(
                        f"provider returned {len(vectors)} vectors for {len(texts)} texts"
                    )
                return np.asarray(vectors, dtype=np.float64)
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_error = exc
        raise EmbeddingBatchError(
            f"embedding provider failed after {self.config.max_retries + 1} attempts: "
            f"{last_error}",
            indices=range(len(texts)),
        )


def embed_batch(texts: Sequence[str], provider, batch_size: int = 64) -> np.ndarray:
    """Embed texts in order, one unit fp16 vector per text.

    Dimension disagreements within or across sub-batches are hard errors;
    provider failures surface as EmbeddingBatchError carrying the global
    indices of the failed texts.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    blocks: list[np.ndarray] = []
    dim: int | None = None
    for start in range(0, len(texts), batch_size):
        batch = list(texts[start : start + batch_size])
        try:
            raw = np.asarray(provider.embed_texts(batch), dtype=np.float64)
        except EmbeddingBatchError as exc:
            raise EmbeddingBatchError(str(exc), [start + i for i in exc.indices]) from exc
        if raw.ndim != 2 or raw.shape[0] != len(batch):
            raise DimensionMismatchError(
                f"provider returned shape {raw.shape} for a batch of {len(batch)}"
            )
        if dim is None:
            dim = int(raw.shape[1])
        elif raw.shape[1] != dim:
            raise DimensionMismatchError(
                f"dimension mismatch across batch: got {raw.shape[1]}, expected {dim}"
            )
        blocks.append(np.vstack([normalize(row) for row in raw]))
    if not blocks:
        return np.empty((0, 0), dtype=np.float16)
    return np.vstack(blocks)


@dataclass
class EmbeddingShard:
    """In-memory view of one shard: aligned ids and unit fp16 vectors."""

    ids: list[str]
    vectors: np.ndarray
    provider_tag: str = ""

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=np.float16)
        if self.vectors.ndim != 2:
            raise ShardFormatError("vectors must be a 2-D array")
        if len(self.ids) != self.vectors.shape[0]:
            raise ShardFormatError(
                f"{len(self.ids)} ids for {self.vectors.shape[0]} vectors"
            )

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def validate_norms(self, tolerance: float = NORM_TOLERANCE) -> None:
        if self.count == 0:
            return
        norms = np.linalg.norm(self.vectors.astype(np.float32), axis=1)
        worst = float(np.max(np.abs(norms - 1.0)))
        if worst > tolerance:
            raise ShardFormatError(f"vector norm off unit sphere by {worst:.3g}")


def _id_to_bytes(chunk_id: str) -> bytes:
    try:
        raw = bytes.fromhex(chunk_id)
    except ValueError as exc:
        raise ShardFormatError(f"chunk id is not hex: {chunk_id!r}") from exc
    if len(raw) != 16:
        raise ShardFormatError(f"chunk id must be 128 bits: {chunk_id!r}")
    return raw


def write_shard(shard: EmbeddingShard, path: str | Path) -> None:
    """Serialize a shard. Stored vectors must already be unit fp16."""
    shard.validate_norms()
    tag = shard.provider_tag.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, shard.dim, shard.count, len(tag)))
        fh.write(tag)
        fh.write(b"".join(_id_to_bytes(i) for i in shard.ids))
        fh.write(np.ascontiguousarray(shard.vectors, dtype="<f2").tobytes())


def read_shard_header(path: str | Path) -> tuple[int, int, str]:
    """Read (dim, count, provider_tag) without loading vectors."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise ShardFormatError(f"{path}: truncated header")
        magic, dim, count, tag_len = _HEADER.unpack(head)
        if magic != MAGIC:
            raise ShardFormatError(
                f"{path}: bad magic {magic!r}, expected {MAGIC!r} (version mismatch?)"
            )
        tag = fh.read(tag_len)
        if len(tag) < tag_len:
            raise ShardFormatError(f"{path}: truncated provider tag")
        return dim, count, tag.decode("utf-8")


def read_shard(path: str | Path) -> EmbeddingShard:
    """Read a shard back; the fp16 payload round-trips bit-exactly."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise ShardFormatError(f"{path}: truncated header")
    magic, dim, count, tag_len = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ShardFormatError(
            f"{path}: bad magic {magic!r}, expected {MAGIC!r} (version mismatch?)"
        )
    offset = _HEADER.size
    if len(data) < offset + tag_len:
        raise ShardFormatError(f"{path}: truncated provider tag")
    tag = data[offset : offset + tag_len].decode("utf-8")
    offset += tag_len
    ids_bytes = 16 * count
    vec_bytes = 2 * count * dim
    if len(data) != offset + ids_bytes + vec_bytes:
        raise ShardFormatError(
            f"{path}: expected {offset + ids_bytes + vec_bytes} bytes, found {len(data)}"
        )
    ids = [data[offset + 16 * i : offset + 16 * (i + 1)].hex() for i in range(count)]
    offset += ids_bytes
    vectors = np.frombuffer(data, dtype="<f2", count=count * dim, offset=offset)
    vectors = vectors.reshape(count, dim).copy()
    return EmbeddingShard(ids=ids, vectors=vectors, provider_tag=tag)
