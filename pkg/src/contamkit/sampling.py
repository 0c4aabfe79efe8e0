"""Stratified reservoir sampling with a volume-proportional final draw.

Each source path gets its own reservoir; after the stream ends, per-stratum
quotas are apportioned by largest remainder so the final sample matches each
stratum's share of the seen volume at the configured global rate.
"""
from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .ingest import PATH_SEPARATOR


class SamplingError(ValueError):
    pass


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class SourceStratum:
    """One reservoir keyed by its source path."""

    path: tuple[str, ...]
    capacity: int
    seen: int = 0
    reservoir: list = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise SamplingError(f"stratum {self.path}: capacity must be >= 1")


def update_reservoir(stratum: SourceStratum, item, rng: random.Random) -> SourceStratum:
    """Classic single-pass reservoir update.

    The first `capacity` items are kept unconditionally; item i (1-based)
    thereafter replaces a uniformly chosen slot with probability capacity/i.
    Consumes exactly one rng draw per item beyond the fill phase.
    """
    stratum.seen += 1
    if len(stratum.reservoir) < stratum.capacity:
        stratum.reservoir.append(item)
    else:
        j = rng.randrange(stratum.seen)
        if j < stratum.capacity:
            stratum.reservoir[j] = item
    return stratum


def apportion_quotas(
    seen: Mapping[tuple[str, ...], int], global_rate: float
) -> dict[tuple[str, ...], int]:
    """Largest-remainder apportionment of round(rate * total_seen) across strata.

    Ties in fractional remainder break by stratum path so the result is
    deterministic.
    """
    if not 0.0 < global_rate <= 1.0:
        raise SamplingError(f"global_rate must be in (0, 1], got {global_rate}")
    for path, n in seen.items():
        if n <= 0:
            raise SamplingError(f"stratum {_fmt_path(path)}: seen count must be > 0")
    total_target = round_half_up(global_rate * sum(seen.values()))
    raw = {path: global_rate * n for path, n in seen.items()}
    quotas = {path: int(math.floor(r)) for path, r in raw.items()}
    leftover = total_target - sum(quotas.values())
    order = sorted(seen, key=lambda p: (-(raw[p] - quotas[p]), p))
    for path in order[:leftover]:
        quotas[path] += 1
    return quotas


def default_capacity(global_rate: float, expected_stratum_size: int, factor: float = 2.0) -> int:
    """Reservoir provisioning: ceil(factor * rate * expected size), at least 1."""
    return max(1, math.ceil(factor * global_rate * expected_stratum_size))


@dataclass(frozen=True)
class SamplePlan:
    global_rate: float
    seed: int
    quotas: dict
    seen: dict
    sampling_unit: str = "chunks"


def _chunk_id_of(item) -> str:
    if isinstance(item, Mapping):
        return item["chunk_id"]
    return item.chunk_id


def _fmt_path(path: tuple[str, ...]) -> str:
    return PATH_SEPARATOR.join(path)


def finalize_sample(
    strata: Sequence[SourceStratum], global_rate: float, rng: random.Random, seed: int = 0
) -> tuple[list, SamplePlan, dict[tuple[str, ...], list[str]]]:
    """Draw each stratum's quota from its reservoir and merge.

    Quotas come from largest-remainder apportionment over seen counts. The
    merged sample is ordered by chunk_id so output never depends on stratum
    iteration order. A stratum whose reservoir holds fewer items than its
    quota is an under-provisioning error and is named in the exception.
    Returns (sample, plan, drawn chunk_ids per stratum).
    """
    seen = {s.path: s.seen for s in strata}
    quotas = apportion_quotas(seen, global_rate)
    drawn: list = []
    drawn_ids: dict[tuple[str, ...], list[str]] = {}
    for stratum in sorted(strata, key=lambda s: s.path):
        quota = quotas[stratum.path]
        if quota > len(stratum.reservoir):
            raise SamplingError(
                f"stratum {_fmt_path(stratum.path)} under-provisioned: "
                f"quota {quota} exceeds reservoir size {len(stratum.reservoir)} "
                f"(capacity {stratum.capacity})"
            )
        picked = rng.sample(stratum.reservoir, quota)
        drawn_ids[stratum.path] = sorted(_chunk_id_of(c) for c in picked)
        drawn.extend(picked)
    drawn.sort(key=_chunk_id_of)
    plan = SamplePlan(global_rate=global_rate, seed=seed, quotas=quotas, seen=seen)
    return drawn, plan, drawn_ids


def run_sampler(
    chunks: Iterable,
    global_rate: float,
    seed: int,
    seen_counts: Mapping[tuple[str, ...], int],
    capacity_factor: float = 2.0,
) -> tuple[list, SamplePlan, dict]:
    """Stream chunks into per-source reservoirs and finalize.

    `seen_counts` provides expected per-stratum sizes for capacity
    provisioning (a cheap counting pre-pass over the same input).
    Returns (sample, plan, drawn_ids_by_stratum).
    """
    rng = random.Random(seed)
    strata: dict[tuple[str, ...], SourceStratum] = {}
    for path, expected in sorted(seen_counts.items()):
        strata[path] = SourceStratum(
            path=path, capacity=default_capacity(global_rate, expected, capacity_factor)
        )
    for chunk in chunks:
        path = chunk["source_path"] if isinstance(chunk, Mapping) else chunk.source_path
        path = tuple(path)
        if path not in strata:
            strata[path] = SourceStratum(
                path=path, capacity=default_capacity(global_rate, 1, capacity_factor)
            )
        update_reservoir(strata[path], chunk, rng)
    return finalize_sample(list(strata.values()), global_rate, rng, seed=seed)


def write_sample_manifest(
    path: str | Path,
    plan: SamplePlan,
    drawn_ids: Mapping[tuple[str, ...], Sequence[str]],
    meta: Mapping | None = None,
) -> None:
    """Audit-trail CSV: per-stratum seen counts, quotas, and drawn chunk ids."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# sampling_unit={plan.sampling_unit}\n")
        fh.write(f"# global_rate={plan.global_rate!r}\n")
        fh.write(f"# seed={plan.seed}\n")
        for key in sorted(meta or {}):
            fh.write(f"# {key}={meta[key]}\n")
        writer = csv.writer(fh)
        writer.writerow(["stratum", "seen", "quota", "chunk_ids"])
        for stratum_path in sorted(plan.quotas):
            writer.writerow(
                [
                    _fmt_path(stratum_path),
                    plan.seen[stratum_path],
                    plan.quotas[stratum_path],
                    " ".join(drawn_ids.get(stratum_path, [])),
                ]
            )


def read_sample_manifest(path: str | Path) -> tuple[dict, list[dict]]:
    """Read back (header dict, rows) from a sample manifest CSV."""
    header: dict[str, str] = {}
    rows: list[dict] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        data_lines = []
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                header[key.strip()] = value.strip()
            else:
                data_lines.append(line)
        for row in csv.DictReader(data_lines):
            rows.append(
                {
                    "stratum": tuple(row["stratum"].split(PATH_SEPARATOR)),
                    "seen": int(row["seen"]),
                    "quota": int(row["quota"]),
                    "chunk_ids": row["chunk_ids"].split() if row["chunk_ids"] else [],
                }
            )
    return header, rows
