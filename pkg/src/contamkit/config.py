"""Pipeline configuration: one JSON document, validated into dataclasses."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    path: str
    dataset_id: str
    sample_rate: float = 1.0
    chunk_mode: str = "whole"
    pair_mode: str = "joint"
    min_tokens: int = 50
    max_tokens: int = 2048
    capacity_factor: float = 2.0


@dataclass(frozen=True)
class BenchmarkConfig:
    path: str
    benchmark_id: str
    text_variant: str = "joined"
    metadata_keys: tuple[str, ...] = ()


@dataclass(frozen=True)
class EmbedderConfig:
    kind: str = "hash"  # "hash" (offline deterministic) or "http"
    dim: int = 64
    seed: int = 0
    endpoint: str = ""
    batch_size: int = 64
    max_retries: int = 3
    timeout: float = 30.0
    prefix: str = ""
    shard_size: int = 65536


@dataclass(frozen=True)
class JudgeConfig:
    kind: str = "stub"  # "stub" (injected), "http", or "offline"
    endpoint: str = ""
    template: str = "mbpp"
    concurrency: int = 4
    max_retries: int = 3
    timeout: float = 120.0


@dataclass(frozen=True)
class PipelineConfig:
    out_dir: str
    datasets: tuple[DatasetConfig, ...]
    benchmarks: tuple[BenchmarkConfig, ...]
    embedder: EmbedderConfig = EmbedderConfig()
    judge: JudgeConfig = JudgeConfig()
    k: int = 100
    percentile: float | None = None
    sample_n: int | None = None
    seed: int = 0
    jobs: int = 1
    calibration_bins: int = 30
    pool_union: bool = False

    def validate(self) -> None:
        if not self.out_dir:
            raise ConfigError("out_dir is required")
        if not self.datasets:
            raise ConfigError("at least one dataset is required")
        if not self.benchmarks:
            raise ConfigError("at least one benchmark is required")
        for ds in self.datasets:
            if not 0.0 < ds.sample_rate <= 1.0:
                raise ConfigError(
                    f"dataset {ds.dataset_id}: sample_rate must be in (0, 1], "
                    f"got {ds.sample_rate}"
                )
            if ds.min_tokens < 1 or ds.max_tokens < ds.min_tokens:
                raise ConfigError(f"dataset {ds.dataset_id}: bad token bounds")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.percentile is not None and not 0.0 < self.percentile <= 1.0:
            raise ConfigError(f"percentile must be in (0, 1], got {self.percentile}")
        if self.sample_n is not None and self.sample_n < 1:
            raise ConfigError("sample_n must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.embedder.kind not in ("hash", "http"):
            raise ConfigError(f"unknown embedder kind: {self.embedder.kind!r}")
        if self.judge.kind not in ("stub", "http", "offline"):
            raise ConfigError(f"unknown judge kind: {self.judge.kind!r}")


def config_to_dict(cfg: PipelineConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_hash(cfg: PipelineConfig) -> str:
    """Stable 12-hex digest of the canonical config document."""
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def _build(cls, doc: dict, context: str):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(doc) - set(known)
    if unknown:
        raise ConfigError(f"{context}: unknown fields {sorted(unknown)}")
    kwargs = {}
    for name, value in doc.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{context}: {exc}") from exc


def config_from_dict(doc: dict) -> PipelineConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    doc = dict(doc)
    datasets = tuple(
        _build(DatasetConfig, d, f"datasets[{i}]") for i, d in enumerate(doc.pop("datasets", []))
    )
    benchmarks = tuple(
        _build(BenchmarkConfig, b, f"benchmarks[{i}]")
        for i, b in enumerate(doc.pop("benchmarks", []))
    )
    embedder = _build(EmbedderConfig, doc.pop("embedder", {}), "embedder")
    judge = _build(JudgeConfig, doc.pop("judge", {}), "judge")
    cfg = _build(
        PipelineConfig,
        {**doc, "datasets": datasets, "benchmarks": benchmarks,
         "embedder": embedder, "judge": judge},
        "config",
    )
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> PipelineConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(doc)
