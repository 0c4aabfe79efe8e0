"""Exact brute-force similarity scan of benchmark items against corpus shards.

Scores are cosine similarities (unit vectors, so plain dot products) computed
in float32 from the fp16 storage. Candidate ordering is the strict total
order (score descending, chunk_id ascending), which makes per-shard results
mergeable in any order and the final ranking independent of worker count.
"""
from __future__ import annotations

import csv
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .embeddings import EmbeddingShard, read_shard, read_shard_header

TEXT_VARIANTS = ("input", "output", "joined")


class SearchError(ValueError):
    pass


@dataclass(frozen=True)
class BenchmarkItem:
    """One benchmark test point with its text variants and metadata."""

    benchmark_id: str
    item_id: str
    input_text: str = ""
    output_text: str = ""
    metadata: dict = field(default_factory=dict)

    def text_variant(self, policy: str = "joined") -> str:
        if policy not in TEXT_VARIANTS:
            raise SearchError(f"unknown text variant: {policy!r}")
        if policy == "input":
            text = self.input_text
        elif policy == "output":
            text = self.output_text
        else:
            text = "\n\n".join(part for part in (self.input_text, self.output_text) if part)
        if not text:
            raise SearchError(
                f"item {self.item_id}: empty text for variant {policy!r}"
            )
        return text


def item_from_row(row: dict, benchmark_id: str = "") -> BenchmarkItem:
    metadata = {
        k: v
        for k, v in row.items()
        if k not in ("benchmark_id", "item_id", "input", "output", "text")
    }
    return BenchmarkItem(
        benchmark_id=row.get("benchmark_id", benchmark_id),
        item_id=str(row["item_id"]),
        input_text=row.get("input", row.get("text", "")),
        output_text=row.get("output", ""),
        metadata=metadata,
    )


@dataclass(frozen=True)
class SimilarityMatch:
    benchmark_id: str
    item_id: str
    chunk_id: str
    dataset_id: str
    score: float
    rank: int


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of unit vectors in float64, clamped to [-1, 1]."""
    value = float(np.dot(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)))
    return max(-1.0, min(1.0, value))


ShardSource = Union[EmbeddingShard, str, Path]


def _load(source) -> EmbeddingShard:
    if isinstance(source, EmbeddingShard):
        return source
    return read_shard(source)


def _source_count(source) -> int:
    if isinstance(source, EmbeddingShard):
        return source.count
    return read_shard_header(source)[1]


def _shard_topk(
    query_block: np.ndarray, shard: EmbeddingShard, k: int
) -> list[list[tuple[float, str]]]:
    """Per-query local top-k within one shard, ties resolved by chunk_id.

    Equal scores at the k boundary are settled by taking every candidate at
    the threshold score and sorting under the total order before truncating.
    """
    if shard.count == 0:
        return [[] for _ in range(query_block.shape[0])]
    scores = query_block @ shard.vectors.astype(np.float32).T
    out: list[list[tuple[float, str]]] = []
    keep = min(k, shard.count)
    for row in scores:
        if keep < shard.count:
            part = np.argpartition(-row, keep - 1)[:keep]
            threshold = row[part].min()
            candidates = np.flatnonzero(row >= threshold)
        else:
            candidates = np.arange(shard.count)
        ranked = sorted(
            ((float(row[j]), shard.ids[j]) for j in candidates),
            key=lambda pair: (-pair[0], pair[1]),
        )
        out.append(ranked[:k])
    return out


def _merge(
    running: list[tuple[float, str, str]],
    incoming: Iterable[tuple[float, str, str]],
    k: int,
) -> list[tuple[float, str, str]]:
    merged = running + list(incoming)
    merged.sort(key=lambda t: (-t[0], t[1]))
    return merged[:k]


def scan_topk(
    items: Sequence[BenchmarkItem],
    item_vectors: np.ndarray,
    shards: Sequence[tuple[str, ShardSource]],
    k: int,
    workers: int = 1,
    pool_union: bool = False,
) -> list[SimilarityMatch]:
    """Exact top-k matches for every item.

    `shards` pairs each shard source with its dataset id. By default each
    dataset forms its own candidate pool (one ranked list per item per
    dataset); `pool_union` ranks across all datasets jointly instead. The
    result is invariant to shard order and to `workers`.
    """
    if k < 1:
        raise SearchError(f"k must be >= 1, got {k}")
    query_block = np.ascontiguousarray(np.asarray(item_vectors, dtype=np.float32))
    if query_block.ndim != 2 or query_block.shape[0] != len(items):
        raise SearchError("item_vectors must be one row per item")

    def work(entry):
        dataset_id, source = entry
        return dataset_id, _shard_topk(query_block, _load(source), k)

    if workers <= 1:
        partials = [work(entry) for entry in shards]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            partials = list(pool.map(work, shards))

    pools: dict[tuple[str, int], list[tuple[float, str, str]]] = {}
    for dataset_id, per_item in partials:
        group = "" if pool_union else dataset_id
        for idx, local in enumerate(per_item):
            key = (group, idx)
            incoming = [(score, chunk_id, dataset_id) for score, chunk_id in local]
            pools[key] = _merge(pools.get(key, []), incoming, k)

    matches: list[SimilarityMatch] = []
    for (_, idx), ranked in sorted(pools.items()):
        item = items[idx]
        for rank, (score, chunk_id, dataset_id) in enumerate(ranked, start=1):
            matches.append(
                SimilarityMatch(
                    benchmark_id=item.benchmark_id,
                    item_id=item.item_id,
                    chunk_id=chunk_id,
                    dataset_id=dataset_id,
                    score=score,
                    rank=rank,
                )
            )
    return matches


def top_percentile_pool(
    items: Sequence[BenchmarkItem],
    item_vectors: np.ndarray,
    shards: Sequence[tuple[str, ShardSource]],
    percentile: float,
    workers: int = 1,
    pool_union: bool = False,
) -> list[SimilarityMatch]:
    """Top ceil(percentile * N) matches per item, N = chunks in the pool.

    Pools are per dataset by default; with `pool_union` N counts the union of
    all datasets. percentile=1.0 returns every chunk, ranked.
    """
    if not 0.0 < percentile <= 1.0:
        raise SearchError(f"percentile must be in (0, 1], got {percentile}")
    counts: dict[str, int] = {}
    for dataset_id, source in shards:
        group = "" if pool_union else dataset_id
        counts[group] = counts.get(group, 0) + _source_count(source)
    if not counts:
        return []
    k_by_group = {g: max(1, math.ceil(percentile * n)) for g, n in counts.items() if n > 0}
    if not k_by_group:
        return []
    k = max(k_by_group.values())
    matches = scan_topk(items, item_vectors, shards, k, workers=workers, pool_union=pool_union)
    out = []
    for m in matches:
        group = "" if pool_union else m.dataset_id
        if m.rank <= k_by_group.get(group, 0):
            out.append(m)
    return out


def sample_pool(
    pool: Sequence[SimilarityMatch], n: int, rng: random.Random
) -> list[SimilarityMatch]:
    """Uniform without-replacement draw of n matches from a pool.

    Selected matches keep their original scores and ranks; output is ordered
    by rank for stable downstream files.
    """
    if n >= len(pool):
        return sorted(pool, key=lambda m: m.rank)
    picked = rng.sample(range(len(pool)), n)
    return sorted((pool[i] for i in picked), key=lambda m: m.rank)


MATCH_FIELDS = ("benchmark_id", "item_id", "chunk_id", "dataset_id", "score", "rank")


def write_matches(path: str | Path, matches: Iterable[SimilarityMatch], meta: Mapping | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for key in sorted(meta or {}):
            fh.write(f"# {key}={meta[key]}\n")
        writer = csv.writer(fh)
        writer.writerow(MATCH_FIELDS)
        for m in matches:
            writer.writerow(
                [m.benchmark_id, m.item_id, m.chunk_id, m.dataset_id, repr(m.score), m.rank]
            )


def read_matches(path: str | Path) -> list[SimilarityMatch]:
    matches = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    for row in csv.DictReader(rows):
        matches.append(
            SimilarityMatch(
                benchmark_id=row["benchmark_id"],
                item_id=row["item_id"],
                chunk_id=row["chunk_id"],
                dataset_id=row["dataset_id"],
                score=float(row["score"]),
                rank=int(row["rank"]),
            )
        )
    return matches
