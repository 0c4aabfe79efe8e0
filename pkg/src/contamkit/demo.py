"""Planted-ground-truth fixture: a synthetic mini-corpus with known duplicates.

Every benchmark item either has one verbatim copy in the corpus, one
token-reordered copy (same word bag, different string, so the offline hash
embedder scores it at cosine ~1), or nothing. The lineage table records which,
and a stub judge that answers from that table makes end-to-end coverage
numbers exactly predictable.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .annotation import CallbackJudge
from .config import (
    BenchmarkConfig,
    DatasetConfig,
    EmbedderConfig,
    JudgeConfig,
    PipelineConfig,
)
from .ingest import compute_chunk_id
from .jsonl import dump_json, write_jsonl
from .search import BenchmarkItem

DEMO_DATASET_ID = "planted-corpus"
DEMO_BENCHMARK_ID = "planted-bench"

_SOURCES = ("crawl/part-00", "crawl/part-01", "crawl/part-02", "forum/threads", "wiki/dump")
_CATEGORIES = ("arithmetic", "graphs", "strings", "parsing")


@dataclass
class PlantedFixture:
    dataset_id: str
    benchmark_id: str
    corpus_records: list[dict]
    items: list[BenchmarkItem]
    # (item_id, chunk_id) -> "exact" | "semantic"
    lineage: dict[tuple[str, str], str]
    expected: dict = field(default_factory=dict)


def _make_text(rng: random.Random, vocab: list[str], lead: str = "") -> str:
    n = rng.randint(60, 120)
    words = [rng.choice(vocab) for _ in range(n)]
    if lead:
        words[0] = lead
    return " ".join(words)


def _permute(text: str, rng: random.Random) -> str:
    """Reorder tokens until the string changes; the token bag is preserved."""
    words = text.split()
    for _ in range(100):
        rng.shuffle(words)
        permuted = " ".join(words)
        if permuted != text:
            return permuted
    raise RuntimeError("could not produce a distinct permutation")


def make_planted_fixture(
    seed: int = 0,
    n_chunks: int = 10_000,
    n_items: int = 100,
    n_exact: int = 40,
    n_semantic: int = 35,
    dataset_id: str = DEMO_DATASET_ID,
    benchmark_id: str = DEMO_BENCHMARK_ID,
) -> PlantedFixture:
    if n_exact + n_semantic > n_items:
        raise ValueError("more planted items than items")
    if n_exact + n_semantic > n_chunks:
        raise ValueError("more planted chunks than chunks")
    rng = random.Random(seed)
    item_vocab = [f"term{i:04d}" for i in range(600)]
    noise_vocab = [f"filler{i:04d}" for i in range(1500)]

    items: list[BenchmarkItem] = []
    used: set[str] = set()
    for i in range(n_items):
        # unique lead token keeps item texts distinct from each other
        text = _make_text(rng, item_vocab, lead=f"probe{i:03d}")
        while text in used:
            text = _make_text(rng, item_vocab, lead=f"probe{i:03d}")
        used.add(text)
        items.append(
            BenchmarkItem(
                benchmark_id=benchmark_id,
                item_id=f"item-{i:03d}",
                input_text=text,
                metadata={"category": rng.choice(_CATEGORIES)},
            )
        )

    order = list(range(n_items))
    rng.shuffle(order)
    exact_idx = order[:n_exact]
    semantic_idx = order[n_exact : n_exact + n_semantic]

    lineage: dict[tuple[str, str], str] = {}
    planted_texts: list[str] = []
    for i in exact_idx:
        text = items[i].input_text
        lineage[(items[i].item_id, compute_chunk_id(dataset_id, text))] = "exact"
        planted_texts.append(text)
    for i in semantic_idx:
        text = _permute(items[i].input_text, rng)
        while text in used:
            text = _permute(items[i].input_text, rng)
        used.add(text)
        lineage[(items[i].item_id, compute_chunk_id(dataset_id, text))] = "semantic"
        planted_texts.append(text)

    corpus_texts = list(planted_texts)
    while len(corpus_texts) < n_chunks:
        text = _make_text(rng, noise_vocab)
        if text in used:
            continue
        used.add(text)
        corpus_texts.append(text)

    records = [{"text": text, "source": rng.choice(_SOURCES)} for text in corpus_texts]
    rng.shuffle(records)

    covered = n_exact + n_semantic
    return PlantedFixture(
        dataset_id=dataset_id,
        benchmark_id=benchmark_id,
        corpus_records=records,
        items=items,
        lineage=lineage,
        expected={
            "n_items": n_items,
            "n_exact": n_exact,
            "n_semantic": n_semantic,
            "coverage_exact_inclusive": covered / n_items,
            "coverage_exact_exclusive": n_semantic / n_items,
        },
    )


def write_fixture(fixture: PlantedFixture, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus_path = out / "corpus.jsonl"
    benchmark_path = out / "benchmark.jsonl"
    lineage_path = out / "lineage.json"

    write_jsonl(
        corpus_path,
        fixture.corpus_records,
        meta={"dataset_id": fixture.dataset_id, "kind": "planted-corpus"},
    )
    write_jsonl(
        benchmark_path,
        (
            {
                "benchmark_id": fixture.benchmark_id,
                "item_id": it.item_id,
                "input": it.input_text,
                **it.metadata,
            }
            for it in fixture.items
        ),
        meta={"benchmark_id": fixture.benchmark_id, "kind": "planted-benchmark"},
    )
    dump_json(
        lineage_path,
        {
            "dataset_id": fixture.dataset_id,
            "benchmark_id": fixture.benchmark_id,
            "expected": fixture.expected,
            "pairs": [
                {"item_id": item_id, "chunk_id": chunk_id, "kind": kind}
                for (item_id, chunk_id), kind in sorted(fixture.lineage.items())
            ],
        },
    )
    return {"corpus": corpus_path, "benchmark": benchmark_path, "lineage": lineage_path}


def load_lineage(path: str | Path) -> dict[tuple[str, str], str]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return {(p["item_id"], p["chunk_id"]): p["kind"] for p in doc["pairs"]}


def lineage_judge(lineage: dict[tuple[str, str], str], tag: str = "lineage-stub") -> CallbackJudge:
    """A judge that answers from planted ground truth instead of a model."""

    def verdict(request):
        _, item_id, chunk_id = request.pair_id
        kind = lineage.get((item_id, chunk_id))
        if kind == "exact":
            return {
                "is_sd": True,
                "confidence": 0.99,
                "match_type": "exact",
                "reasoning": "planted verbatim copy",
            }
        if kind == "semantic":
            return {
                "is_sd": True,
                "confidence": 0.9,
                "match_type": "equivalent",
                "reasoning": "planted token reordering",
            }
        return {
            "is_sd": False,
            "confidence": 0.95,
            "match_type": "unrelated",
            "reasoning": "no planted relation",
        }

    return CallbackJudge(verdict, tag=tag)


def demo_config(
    fixture_paths: dict[str, Path],
    out_dir: str | Path,
    seed: int = 0,
    k: int = 100,
    jobs: int = 1,
) -> PipelineConfig:
    return PipelineConfig(
        out_dir=str(out_dir),
        datasets=(
            DatasetConfig(
                path=str(fixture_paths["corpus"]),
                dataset_id=DEMO_DATASET_ID,
                sample_rate=1.0,
                chunk_mode="whole",
            ),
        ),
        benchmarks=(
            BenchmarkConfig(
                path=str(fixture_paths["benchmark"]),
                benchmark_id=DEMO_BENCHMARK_ID,
                text_variant="input",
                metadata_keys=("category",),
            ),
        ),
        embedder=EmbedderConfig(kind="hash", dim=64, seed=seed),
        judge=JudgeConfig(kind="stub", concurrency=1),
        k=k,
        seed=seed,
        jobs=jobs,
    )


def run_demo(
    out_dir: str | Path,
    seed: int = 0,
    n_chunks: int = 10_000,
    n_items: int = 100,
    n_exact: int = 40,
    n_semantic: int = 35,
    k: int = 100,
    jobs: int = 1,
) -> dict:
    """Generate the planted fixture and audit it end to end.

    Returns the pipeline summary extended with the planted expectations, so
    callers can compare reported coverage against ground truth.
    """
    from .pipeline import run_pipeline

    out = Path(out_dir)
    fixture = make_planted_fixture(
        seed=seed,
        n_chunks=n_chunks,
        n_items=n_items,
        n_exact=n_exact,
        n_semantic=n_semantic,
    )
    fixture_paths = write_fixture(fixture, out / "fixture")
    cfg = demo_config(fixture_paths, out, seed=seed, k=k, jobs=jobs)
    summary = run_pipeline(cfg, judge=lineage_judge(fixture.lineage))
    summary["expected"] = fixture.expected
    return summary
