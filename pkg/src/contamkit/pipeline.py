"""End-to-end audit: ingest -> sample -> embed -> scan -> annotate -> stats.

Every stage reads files written by the one before and writes its own, so any
stage can be rerun in isolation. A run ledger under the output directory
records versions, seeds, and input hashes; the report itself carries no
timestamps and reruns byte-identically for a fixed config.
"""
from __future__ import annotations

import hashlib
import json
import platform
import random
import time
from collections import Counter
from pathlib import Path

import numpy as np

from . import __version__
from .annotation import TEMPLATES, HttpJudge, annotate_pairs, export_requests, load_ledger
from .config import EmbedderConfig, JudgeConfig, PipelineConfig, config_hash, config_to_dict
from .embeddings import (
    EmbeddingBatchError,
    EmbeddingShard,
    HashingProvider,
    HttpProvider,
    ProviderConfig,
    embed_batch,
    write_shard,
)
from .ingest import IngestConfig, IngestStats, chunk_from_row, ingest_stream
from .jsonl import dump_json, read_jsonl, write_jsonl
from .sampling import run_sampler, write_sample_manifest
from .search import item_from_row, read_matches, sample_pool, scan_topk, top_percentile_pool, write_matches
from .stats import build_report, join_annotations, write_report

STAGES = ("ingest", "sample", "embed", "scan", "annotate", "stats")


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage!r} failed: {message}")
        self.stage = stage


class ProviderError(StageError):
    """Stage failure caused by an external provider (embedder or judge)."""


class RunPaths:
    """Canonical file layout under one output directory."""

    def __init__(self, out_dir: str | Path):
        self.root = Path(out_dir)

    def chunks(self, dataset_id: str) -> Path:
        return self.root / "chunks" / f"{dataset_id}.jsonl"

    def sample(self, dataset_id: str) -> Path:
        return self.root / "sample" / f"{dataset_id}.jsonl"

    def sample_manifest(self, dataset_id: str) -> Path:
        return self.root / "sample" / f"{dataset_id}.manifest.csv"

    def shard_dir(self, dataset_id: str) -> Path:
        return self.root / "shards" / dataset_id

    def shard_index(self, dataset_id: str) -> Path:
        return self.shard_dir(dataset_id) / "index.json"

    def matches(self, benchmark_id: str) -> Path:
        return self.root / "matches" / f"{benchmark_id}.csv"

    def annotations(self, benchmark_id: str) -> Path:
        return self.root / "annotations" / f"{benchmark_id}.jsonl"

    def annotation_failures(self, benchmark_id: str) -> Path:
        return self.root / "annotations" / f"{benchmark_id}.failures.jsonl"

    def annotation_requests(self, benchmark_id: str) -> Path:
        return self.root / "annotations" / f"{benchmark_id}.requests.jsonl"

    def report_dir(self, benchmark_id: str) -> Path:
        return self.root / "report" / benchmark_id

    @property
    def run_ledger(self) -> Path:
        return self.root / "run_ledger.json"


def derived_seed(seed: int, label: str) -> int:
    """Independent per-purpose seed stream from (root seed, label)."""
    digest = hashlib.sha256(f"{seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def build_embedder(cfg: EmbedderConfig):
    if cfg.kind == "hash":
        return HashingProvider(dim=cfg.dim, seed=cfg.seed, prefix=cfg.prefix)
    return HttpProvider(
        ProviderConfig(
            endpoint=cfg.endpoint,
            batch_size=cfg.batch_size,
            max_retries=cfg.max_retries,
            timeout=cfg.timeout,
            prefix=cfg.prefix,
        )
    )


def build_judge(cfg: JudgeConfig):
    """Judge for live annotation; stub and offline kinds have no HTTP judge."""
    if cfg.kind == "http":
        return HttpJudge(cfg.endpoint, timeout=cfg.timeout)
    return None


def _load_items(cfg: PipelineConfig) -> dict[str, list]:
    items = {}
    for bench in cfg.benchmarks:
        items[bench.benchmark_id] = [
            item_from_row(row, bench.benchmark_id) for row in read_jsonl(bench.path)
        ]
    return items


def _item_texts(cfg: PipelineConfig, benchmark_id: str) -> dict[str, str]:
    bench = next(b for b in cfg.benchmarks if b.benchmark_id == benchmark_id)
    return {
        it.item_id: it.text_variant(bench.text_variant)
        for it in _load_items(cfg)[benchmark_id]
    }


def _chunk_texts(cfg: PipelineConfig, paths: RunPaths) -> dict[str, str]:
    texts: dict[str, str] = {}
    for ds in cfg.datasets:
        sample_path = paths.sample(ds.dataset_id)
        if sample_path.exists():
            for row in read_jsonl(sample_path):
                texts[row["chunk_id"]] = row["text"]
    return texts


def stage_ingest(cfg: PipelineConfig, paths: RunPaths) -> dict:
    chash = config_hash(cfg)
    detail = {}
    for ds in cfg.datasets:
        icfg = IngestConfig(
            min_tokens=ds.min_tokens,
            max_tokens=ds.max_tokens,
            chunk_mode=ds.chunk_mode,
            pair_mode=ds.pair_mode,
        )
        stats = IngestStats()
        chunks = list(
            ingest_stream(
                read_jsonl(ds.path), icfg, ds.dataset_id,
                file_name=Path(ds.path).name, stats=stats,
            )
        )
        out_path = paths.chunks(ds.dataset_id)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        write_jsonl(
            out_path,
            (c.to_row() for c in chunks),
            meta={
                "config_hash": chash,
                "dataset_id": ds.dataset_id,
                "records": stats.records,
                "chunks": stats.chunks,
                "malformed": stats.malformed,
                "dropped_out_of_bounds": stats.dropped_out_of_bounds,
            },
        )
        detail[ds.dataset_id] = {"records": stats.records, "chunks": stats.chunks}
    return detail


def stage_sample(cfg: PipelineConfig, paths: RunPaths) -> dict:
    chash = config_hash(cfg)
    detail = {}
    for ds in cfg.datasets:
        chunks = [chunk_from_row(r) for r in read_jsonl(paths.chunks(ds.dataset_id))]
        seen_counts = Counter(c.source_path for c in chunks)
        seed = derived_seed(cfg.seed, f"sample:{ds.dataset_id}")
        sample, plan, drawn_ids = run_sampler(
            chunks, ds.sample_rate, seed, seen_counts, capacity_factor=ds.capacity_factor
        )
        out_path = paths.sample(ds.dataset_id)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        write_jsonl(
            out_path,
            (c.to_row() for c in sample),
            meta={"config_hash": chash, "dataset_id": ds.dataset_id, "sampled": len(sample)},
        )
        write_sample_manifest(
            paths.sample_manifest(ds.dataset_id),
            plan,
            drawn_ids,
            meta={"config_hash": chash, "dataset_id": ds.dataset_id},
        )
        detail[ds.dataset_id] = {"sampled": len(sample), "quotas": len(plan.quotas)}
    return detail


def stage_embed(cfg: PipelineConfig, paths: RunPaths, embedder=None) -> dict:
    chash = config_hash(cfg)
    provider = embedder or build_embedder(cfg.embedder)
    tag = f"{provider.provider_tag};config={chash}"
    detail = {}
    for ds in cfg.datasets:
        rows = list(read_jsonl(paths.sample(ds.dataset_id)))
        ids = [r["chunk_id"] for r in rows]
        texts = [r["text"] for r in rows]
        shard_dir = paths.shard_dir(ds.dataset_id)
        shard_dir.mkdir(parents=True, exist_ok=True)
        vectors = embed_batch(texts, provider, cfg.embedder.batch_size)
        shard_files = []
        step = max(1, cfg.embedder.shard_size)
        for shard_no, start in enumerate(range(0, len(ids), step)):
            block_ids = ids[start : start + step]
            block = vectors[start : start + step]
            shard = EmbeddingShard(ids=block_ids, vectors=block, provider_tag=tag)
            name = f"shard-{shard_no:04d}.emb"
            write_shard(shard, shard_dir / name)
            shard_files.append({"file": name, "count": len(block_ids)})
        dump_json(
            paths.shard_index(ds.dataset_id),
            {
                "config_hash": chash,
                "dataset_id": ds.dataset_id,
                "provider": provider.provider_tag,
                "dim": int(vectors.shape[1]) if len(ids) else 0,
                "shards": shard_files,
            },
        )
        detail[ds.dataset_id] = {"vectors": len(ids), "shards": len(shard_files)}
    return detail


def _shard_sources(cfg: PipelineConfig, paths: RunPaths) -> list[tuple[str, Path]]:
    sources = []
    for ds in cfg.datasets:
        with open(paths.shard_index(ds.dataset_id), "r", encoding="utf-8") as fh:
            index = json.load(fh)
        for entry in index["shards"]:
            sources.append((ds.dataset_id, paths.shard_dir(ds.dataset_id) / entry["file"]))
    return sources


def stage_scan(cfg: PipelineConfig, paths: RunPaths, embedder=None) -> dict:
    chash = config_hash(cfg)
    provider = embedder or build_embedder(cfg.embedder)
    shards = _shard_sources(cfg, paths)
    items_by_bench = _load_items(cfg)
    detail = {}
    for bench in cfg.benchmarks:
        items = items_by_bench[bench.benchmark_id]
        if not items:
            raise StageError("scan", f"benchmark {bench.benchmark_id} has no items")
        texts = [it.text_variant(bench.text_variant) for it in items]
        vectors = embed_batch(texts, provider, cfg.embedder.batch_size)
        if cfg.percentile is not None:
            matches = top_percentile_pool(
                items, vectors, shards, cfg.percentile,
                workers=cfg.jobs, pool_union=cfg.pool_union,
            )
            if cfg.sample_n is not None:
                rng = random.Random(derived_seed(cfg.seed, f"pool:{bench.benchmark_id}"))
                per_item: dict[str, list] = {}
                for m in matches:
                    per_item.setdefault(m.item_id, []).append(m)
                matches = [
                    m
                    for item_id in sorted(per_item)
                    for m in sample_pool(per_item[item_id], cfg.sample_n, rng)
                ]
        else:
            matches = scan_topk(
                items, vectors, shards, cfg.k, workers=cfg.jobs, pool_union=cfg.pool_union
            )
        out_path = paths.matches(bench.benchmark_id)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        write_matches(
            out_path,
            matches,
            meta={
                "config_hash": chash,
                "benchmark_id": bench.benchmark_id,
                "k": cfg.k,
                "provider": provider.provider_tag,
            },
        )
        detail[bench.benchmark_id] = {"matches": len(matches)}
    return detail


def stage_annotate(cfg: PipelineConfig, paths: RunPaths, judge=None) -> dict:
    chash = config_hash(cfg)
    judge = judge or build_judge(cfg.judge)
    template = TEMPLATES[cfg.judge.template]
    chunk_texts = _chunk_texts(cfg, paths)
    detail = {}
    for bench in cfg.benchmarks:
        item_texts = _item_texts(cfg, bench.benchmark_id)
        matches = read_matches(paths.matches(bench.benchmark_id))
        pairs = []
        for m in matches:
            corpus_text = chunk_texts.get(m.chunk_id)
            if corpus_text is None:
                raise StageError(
                    "annotate", f"chunk {m.chunk_id} missing from sampled texts"
                )
            pairs.append(
                ((m.benchmark_id, m.item_id, m.chunk_id), item_texts[m.item_id], corpus_text)
            )

        records_path = paths.annotations(bench.benchmark_id)
        records_path.parent.mkdir(parents=True, exist_ok=True)
        if not records_path.exists():
            with open(records_path, "w", encoding="utf-8") as fh:
                fh.write(
                    json.dumps(
                        {"_meta": {"config_hash": chash, "benchmark_id": bench.benchmark_id}},
                        sort_keys=True,
                    )
                    + "\n"
                )

        if judge is None:
            if cfg.judge.kind == "stub":
                raise StageError(
                    "annotate", 'judge kind "stub" needs an injected judge callback'
                )
            ledger = load_ledger(records_path)
            n = export_requests(pairs, template, paths.annotation_requests(bench.benchmark_id), skip=ledger)
            detail[bench.benchmark_id] = {"exported": n, "already_annotated": len(ledger)}
            continue

        result = annotate_pairs(
            pairs,
            judge,
            template,
            records_path,
            failures_path=None,
            concurrency=cfg.judge.concurrency,
            max_retries=cfg.judge.max_retries,
        )
        failures_path = paths.annotation_failures(bench.benchmark_id)
        with open(failures_path, "w", encoding="utf-8") as fh:
            fh.write(
                json.dumps({"_meta": {"config_hash": chash}}, sort_keys=True) + "\n"
            )
            for entry in sorted(
                result.failures, key=lambda e: (e["item_id"], e["chunk_id"])
            ):
                fh.write(json.dumps(entry, sort_keys=True, ensure_ascii=False) + "\n")
        detail[bench.benchmark_id] = {
            "annotated": len(result.records),
            "skipped": result.skipped,
            "failed": len(result.failures),
        }
        if result.provider_failures:
            raise ProviderError(
                "annotate",
                f"{result.provider_failures} judge call(s) failed permanently "
                f"for {bench.benchmark_id}",
            )
    return detail


def stage_stats(cfg: PipelineConfig, paths: RunPaths) -> dict:
    chash = config_hash(cfg)
    chunk_texts = _chunk_texts(cfg, paths)
    items_by_bench = _load_items(cfg)
    detail = {}
    for bench in cfg.benchmarks:
        items = items_by_bench[bench.benchmark_id]
        matches = read_matches(paths.matches(bench.benchmark_id))
        records = load_ledger(paths.annotations(bench.benchmark_id))
        item_texts = _item_texts(cfg, bench.benchmark_id)
        joined, conflicts = join_annotations(
            matches, records, item_texts=item_texts, chunk_texts=chunk_texts
        )
        report = build_report(
            bench.benchmark_id,
            items,
            joined,
            conflicts=conflicts,
            k=cfg.k,
            calibration_bins=cfg.calibration_bins,
            strata_keys=bench.metadata_keys,
            pool_fraction=cfg.percentile,
            sample_n=cfg.sample_n,
            config_hash=chash,
        )
        report_path = write_report(report, paths.report_dir(bench.benchmark_id))
        detail[bench.benchmark_id] = {
            "report": str(report_path),
            "coverage_exact_inclusive": report.coverage_inclusive,
            "coverage_exact_exclusive": report.coverage_exclusive,
            "annotated_matches": len(joined),
            "conflicts": len(conflicts),
        }
    return detail


_STAGE_FUNCS = {
    "ingest": stage_ingest,
    "sample": stage_sample,
    "embed": stage_embed,
    "scan": stage_scan,
    "annotate": stage_annotate,
    "stats": stage_stats,
}


def _input_hashes(cfg: PipelineConfig) -> dict[str, str]:
    hashes = {}
    for ds in cfg.datasets:
        hashes[ds.path] = file_sha256(ds.path)
    for bench in cfg.benchmarks:
        hashes[bench.path] = file_sha256(bench.path)
    return hashes


def run_stage(cfg: PipelineConfig, stage: str, judge=None, embedder=None) -> dict:
    """Run one stage against the files already in the output directory."""
    if stage not in _STAGE_FUNCS:
        raise StageError(stage, f"unknown stage (expected one of {', '.join(STAGES)})")
    cfg.validate()
    paths = RunPaths(cfg.out_dir)
    paths.root.mkdir(parents=True, exist_ok=True)
    fn = _STAGE_FUNCS[stage]
    kwargs = {}
    if stage in ("embed", "scan"):
        kwargs["embedder"] = embedder
    if stage == "annotate":
        kwargs["judge"] = judge
    try:
        return fn(cfg, paths, **kwargs)
    except StageError:
        raise
    except EmbeddingBatchError as exc:
        raise ProviderError(stage, str(exc)) from exc
    except Exception as exc:
        raise StageError(stage, str(exc)) from exc


def run_pipeline(cfg: PipelineConfig, judge=None, embedder=None) -> dict:
    """Execute every stage in order, maintaining the run ledger.

    The first failure halts the run; completed stages keep their outputs and
    the ledger records which stage broke. Returns a summary with the report
    locations and headline coverage numbers.
    """
    cfg.validate()
    paths = RunPaths(cfg.out_dir)
    paths.root.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    ledger = {
        "config_hash": chash,
        "config": config_to_dict(cfg),
        "seed": cfg.seed,
        "versions": {
            "contamkit": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "inputs": _input_hashes(cfg),
        "stages": [],
    }

    summary: dict = {"config_hash": chash, "out_dir": str(paths.root), "stages": {}}
    for stage in STAGES:
        entry = {"name": stage, "status": "running", "started": time.time()}
        ledger["stages"].append(entry)
        dump_json(paths.run_ledger, ledger)
        try:
            detail = run_stage(cfg, stage, judge=judge, embedder=embedder)
        except StageError as exc:
            entry["status"] = "failed"
            entry["error"] = str(exc)
            entry["finished"] = time.time()
            dump_json(paths.run_ledger, ledger)
            raise
        entry["status"] = "done"
        entry["detail"] = detail
        entry["finished"] = time.time()
        dump_json(paths.run_ledger, ledger)
        summary["stages"][stage] = detail
        if stage == "annotate" and any(
            d.get("exported", 0) > 0 for d in detail.values() if isinstance(d, dict)
        ):
            # offline judging: requests are on disk, stats waits for the import
            summary["halted_for_import"] = True
            return summary

    summary["reports"] = {
        bench: detail["report"] for bench, detail in summary["stages"]["stats"].items()
    }
    summary["coverage"] = {
        bench: {
            "exact_inclusive": detail["coverage_exact_inclusive"],
            "exact_exclusive": detail["coverage_exact_exclusive"],
        }
        for bench, detail in summary["stages"]["stats"].items()
    }
    return summary
