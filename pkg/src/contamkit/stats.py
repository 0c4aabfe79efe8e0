"""Contamination statistics: coverage@k, calibration, strata, dup-rate scaling.

Inputs are similarity matches joined with judge annotations. String-exact
checks, when texts are available, are authoritative over the judge's "exact"
label; disagreements are logged as conflicts, never dropped.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .annotation import AnnotationRecord
from .jsonl import dump_json
from .metrics import DEFAULT_NORMALIZATION, NormalizationConfig, is_exact_duplicate
from .search import BenchmarkItem, SimilarityMatch


class StatsError(ValueError):
    pass


@dataclass(frozen=True)
class ScoredAnnotation:
    """One annotated match: similarity rank/score plus the judge verdict."""

    benchmark_id: str
    item_id: str
    chunk_id: str
    dataset_id: str
    rank: int
    score: float
    is_sd: bool
    match_type: str
    confidence: float = 0.0
    # None = texts unavailable, exactness rests on the judge's match_type.
    string_exact: bool | None = None


def effective_exact(record: ScoredAnnotation) -> bool:
    """Exactness of a match; the string check overrides the judge when present."""
    if record.string_exact is not None:
        return record.string_exact
    return record.match_type == "exact"


def join_annotations(
    matches: Sequence[SimilarityMatch],
    records: Mapping[tuple, AnnotationRecord] | Iterable[AnnotationRecord],
    item_texts: Mapping[str, str] | None = None,
    chunk_texts: Mapping[str, str] | None = None,
    norm: NormalizationConfig = DEFAULT_NORMALIZATION,
) -> tuple[list[ScoredAnnotation], list[dict]]:
    """Join matches with their annotations; compute string-exact when possible.

    Returns (joined records, conflict log). A conflict is any disagreement
    between the string-exact check and the judge's exact label.
    """
    if not isinstance(records, Mapping):
        records = {r.pair_id: r for r in records}
    joined: list[ScoredAnnotation] = []
    conflicts: list[dict] = []
    for m in matches:
        record = records.get((m.benchmark_id, m.item_id, m.chunk_id))
        if record is None:
            continue
        string_exact: bool | None = None
        if item_texts is not None and chunk_texts is not None:
            item_text = item_texts.get(m.item_id)
            chunk_text = chunk_texts.get(m.chunk_id)
            if item_text is not None and chunk_text is not None:
                string_exact = is_exact_duplicate(item_text, chunk_text, norm)
                judge_exact = record.match_type == "exact"
                if string_exact != judge_exact:
                    conflicts.append(
                        {
                            "benchmark_id": m.benchmark_id,
                            "item_id": m.item_id,
                            "chunk_id": m.chunk_id,
                            "string_exact": string_exact,
                            "judge_match_type": record.match_type,
                        }
                    )
        joined.append(
            ScoredAnnotation(
                benchmark_id=m.benchmark_id,
                item_id=m.item_id,
                chunk_id=m.chunk_id,
                dataset_id=m.dataset_id,
                rank=m.rank,
                score=m.score,
                is_sd=record.is_sd,
                match_type=record.match_type,
                confidence=record.confidence,
                string_exact=string_exact,
            )
        )
    return joined, conflicts


def _counts_as_duplicate(record: ScoredAnnotation, include_exact: bool) -> bool:
    if not record.is_sd and not (record.string_exact is True):
        return False
    if not include_exact and effective_exact(record):
        return False
    return True


@dataclass
class CoverageResult:
    coverage: float
    n_items: int
    covered_items: list[str]
    warnings: list[str] = field(default_factory=list)  # items with no annotated match


def coverage_at_k(
    records: Sequence[ScoredAnnotation],
    item_ids: Sequence[str],
    k: int,
    include_exact: bool = True,
) -> CoverageResult:
    """Fraction of items with >= 1 duplicate among their top-k matches.

    include_exact=False drops matches whose effective type is exact, counting
    only semantic duplication. Items with no annotated matches at all count as
    uncovered and are listed in warnings.
    """
    if k < 1:
        raise StatsError(f"k must be >= 1, got {k}")
    if not item_ids:
        raise StatsError("coverage over an empty item set is undefined")
    annotated: set[str] = set()
    covered: set[str] = set()
    for record in records:
        annotated.add(record.item_id)
        if record.rank <= k and _counts_as_duplicate(record, include_exact):
            covered.add(record.item_id)
    ids = list(dict.fromkeys(item_ids))
    covered &= set(ids)
    return CoverageResult(
        coverage=len(covered) / len(ids),
        n_items=len(ids),
        covered_items=sorted(covered),
        warnings=sorted(set(ids) - annotated),
    )


def coverage_vs_k(
    records: Sequence[ScoredAnnotation],
    item_ids: Sequence[str],
    ks: Sequence[int],
    include_exact: bool = True,
) -> list[tuple[int, float]]:
    """Coverage evaluated at several depths; monotone nondecreasing in k."""
    return [(k, coverage_at_k(records, item_ids, k, include_exact).coverage) for k in ks]


@dataclass(frozen=True)
class CalibrationBin:
    low: float
    high: float
    n: int
    p: float | None
    ci_low: float | None
    ci_high: float | None


@dataclass
class CalibrationCurve:
    bins: list[CalibrationBin]
    z: float
    method: str

    @property
    def total(self) -> int:
        return sum(b.n for b in self.bins)


def binomial_ci(p: float, n: int, z: float = 1.96, method: str = "normal") -> tuple[float, float]:
    """Binomial CI for a rate: normal approximation by default, Wilson by flag."""
    if n <= 0:
        raise StatsError("binomial CI needs n > 0")
    if method == "normal":
        half = z * math.sqrt(p * (1.0 - p) / n)
        return max(0.0, p - half), min(1.0, p + half)
    if method == "wilson":
        denom = 1.0 + z * z / n
        center = (p + z * z / (2 * n)) / denom
        half = (z / denom) * math.sqrt(p * (1.0 - p) / n + z * z / (4 * n * n))
        return max(0.0, center - half), min(1.0, center + half)
    raise StatsError(f"unknown CI method: {method!r}")


def calibration_curve(
    pairs: Sequence[tuple[float, bool]],
    bins: int = 30,
    z: float = 1.96,
    value_range: tuple[float, float] | None = None,
    method: str = "normal",
) -> CalibrationCurve:
    """Duplicate rate vs score in equal-width bins with binomial CIs.

    `pairs` are (score, is_duplicate). Bins span the observed score range by
    default (pass value_range=(0,1) to fix it). Every input lands in exactly
    one bin: the last bin is closed on the right. Empty bins report n=0 and
    no rate.
    """
    if bins < 1:
        raise StatsError("bins must be >= 1")
    if not pairs:
        return CalibrationCurve(bins=[], z=z, method=method)
    values = [v for v, _ in pairs]
    lo, hi = (min(values), max(values)) if value_range is None else value_range
    if not lo <= hi:
        raise StatsError(f"invalid value range: ({lo}, {hi})")
    width = (hi - lo) / bins if hi > lo else 0.0

    totals = [0] * bins
    dups = [0] * bins
    for value, flag in pairs:
        if value_range is not None and not lo <= value <= hi:
            raise StatsError(f"score {value} outside fixed range ({lo}, {hi})")
        if width == 0.0:
            idx = bins - 1
        else:
            idx = min(bins - 1, int((value - lo) / width))
        totals[idx] += 1
        dups[idx] += flag

    out = []
    for i in range(bins):
        low = lo + i * width
        high = lo + (i + 1) * width if i < bins - 1 else hi
        if totals[i] == 0:
            out.append(CalibrationBin(low, high, 0, None, None, None))
        else:
            p = dups[i] / totals[i]
            ci_low, ci_high = binomial_ci(p, totals[i], z=z, method=method)
            out.append(CalibrationBin(low, high, totals[i], p, ci_low, ci_high))
    return CalibrationCurve(bins=out, z=z, method=method)


def elo_bucket(elo: float, width: int = 100) -> str:
    low = int(math.floor(elo / width) * width)
    return f"{low}-{low + width}"


@dataclass(frozen=True)
class StratumRow:
    key: str
    group: str
    n_items: int
    coverage: float
    std: float


def stratify(
    records: Sequence[ScoredAnnotation],
    items: Sequence[BenchmarkItem],
    key: str,
    k: int,
    include_exact: bool = True,
    elo_width: int = 100,
) -> list[StratumRow]:
    """Coverage broken down by dataset, elo bucket, or any item metadata key.

    The std column is the binomial rate deviation sqrt(p(1-p)/n_items).
    key="dataset" groups matches by corpus dataset; other keys group items by
    their metadata value ("elo" additionally buckets numeric ratings).
    """
    rows: list[StratumRow] = []
    if key == "dataset":
        item_ids = [it.item_id for it in items]
        datasets = sorted({r.dataset_id for r in records})
        for dataset_id in datasets:
            subset = [r for r in records if r.dataset_id == dataset_id]
            result = coverage_at_k(subset, item_ids, k, include_exact)
            rows.append(
                StratumRow(
                    key=key,
                    group=dataset_id,
                    n_items=result.n_items,
                    coverage=result.coverage,
                    std=_rate_std(result.coverage, result.n_items),
                )
            )
        return rows

    groups: dict[str, list[BenchmarkItem]] = {}
    for item in items:
        value = item.metadata.get(key)
        if value is None:
            continue
        group = elo_bucket(float(value), elo_width) if key == "elo" else str(value)
        groups.setdefault(group, []).append(item)
    for group in sorted(groups):
        member_ids = [it.item_id for it in groups[group]]
        member_set = set(member_ids)
        subset = [r for r in records if r.item_id in member_set]
        result = coverage_at_k(subset, member_ids, k, include_exact)
        rows.append(
            StratumRow(
                key=key,
                group=group,
                n_items=result.n_items,
                coverage=result.coverage,
                std=_rate_std(result.coverage, result.n_items),
            )
        )
    return rows


def _rate_std(p: float, n: int) -> float:
    if n <= 0:
        return 0.0
    return math.sqrt(p * (1.0 - p) / n)


def duplicates_per_10k(mean_dups: float, n: int, pool_fraction: float) -> float:
    """Scale a per-sample duplicate count to a per-10k-training-points rate.

    Sampling n points uniformly from a pool holding the top `pool_fraction`
    of the corpus, a mean of `mean_dups` duplicates per item scales to
    (mean_dups / n) * pool_fraction * 10,000.
    """
    if n <= 0:
        raise StatsError("sample size must be > 0")
    if not 0.0 < pool_fraction <= 1.0:
        raise StatsError(f"pool_fraction must be in (0, 1], got {pool_fraction}")
    return (mean_dups / n) * pool_fraction * 10_000.0


DEFAULT_KS = (1, 2, 5, 10, 20, 50, 100)


@dataclass
class ContaminationReport:
    benchmark_id: str
    k: int
    n_items: int
    coverage_inclusive: float
    coverage_exclusive: float
    per_dataset: list[StratumRow]
    coverage_vs_k_inclusive: list[tuple[int, float]]
    coverage_vs_k_exclusive: list[tuple[int, float]]
    calibration: CalibrationCurve
    strata: dict[str, list[StratumRow]]
    warnings: list[str]
    conflicts: list[dict]
    duplicates_per_10k: float | None = None
    config_hash: str = ""

    def to_dict(self) -> dict:
        return {
            "benchmark_id": self.benchmark_id,
            "k": self.k,
            "n_items": self.n_items,
            "coverage": {
                "exact_inclusive": self.coverage_inclusive,
                "exact_exclusive": self.coverage_exclusive,
            },
            "per_dataset": [vars(r) for r in self.per_dataset],
            "coverage_vs_k": {
                "exact_inclusive": [[k, c] for k, c in self.coverage_vs_k_inclusive],
                "exact_exclusive": [[k, c] for k, c in self.coverage_vs_k_exclusive],
            },
            "calibration": {
                "z": self.calibration.z,
                "method": self.calibration.method,
                "total": self.calibration.total,
                "bins": [vars(b) for b in self.calibration.bins],
            },
            "strata": {key: [vars(r) for r in rows] for key, rows in self.strata.items()},
            "warnings": self.warnings,
            "conflicts": self.conflicts,
            "duplicates_per_10k": self.duplicates_per_10k,
            "config_hash": self.config_hash,
        }


def build_report(
    benchmark_id: str,
    items: Sequence[BenchmarkItem],
    records: Sequence[ScoredAnnotation],
    conflicts: Sequence[dict] = (),
    k: int = 100,
    ks: Sequence[int] | None = None,
    calibration_bins: int = 30,
    strata_keys: Sequence[str] = (),
    pool_fraction: float | None = None,
    sample_n: int | None = None,
    config_hash: str = "",
) -> ContaminationReport:
    """Assemble the full report from joined records."""
    item_ids = [it.item_id for it in items]
    ks = sorted({kk for kk in (ks or DEFAULT_KS) if kk <= k} | {k})
    inclusive = coverage_at_k(records, item_ids, k, include_exact=True)
    exclusive = coverage_at_k(records, item_ids, k, include_exact=False)
    calibration = calibration_curve(
        [(r.score, bool(r.is_sd)) for r in records], bins=calibration_bins
    )
    strata = {key: stratify(records, items, key, k) for key in strata_keys}

    rate = None
    if pool_fraction is not None and sample_n is not None and item_ids:
        dups_by_item: dict[str, int] = {i: 0 for i in item_ids}
        for r in records:
            if r.item_id in dups_by_item and _counts_as_duplicate(r, include_exact=True):
                dups_by_item[r.item_id] += 1
        mean_dups = sum(dups_by_item.values()) / len(item_ids)
        rate = duplicates_per_10k(mean_dups, sample_n, pool_fraction)

    return ContaminationReport(
        benchmark_id=benchmark_id,
        k=k,
        n_items=len(item_ids),
        coverage_inclusive=inclusive.coverage,
        coverage_exclusive=exclusive.coverage,
        per_dataset=stratify(records, items, "dataset", k),
        coverage_vs_k_inclusive=coverage_vs_k(records, item_ids, ks, include_exact=True),
        coverage_vs_k_exclusive=coverage_vs_k(records, item_ids, ks, include_exact=False),
        calibration=calibration,
        strata=strata,
        warnings=inclusive.warnings,
        conflicts=list(conflicts),
        duplicates_per_10k=rate,
        config_hash=config_hash,
    )


def write_report(report: ContaminationReport, out_dir: str | Path) -> Path:
    """Write report.json plus one CSV per figure-ready table. Deterministic bytes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(out / "report.json", report.to_dict())

    with open(out / "coverage_vs_k.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# config_hash={report.config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(["k", "coverage_exact_inclusive", "coverage_exact_exclusive"])
        exclusive = dict(report.coverage_vs_k_exclusive)
        for kk, cov in report.coverage_vs_k_inclusive:
            writer.writerow([kk, repr(cov), repr(exclusive[kk])])

    with open(out / "calibration.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# config_hash={report.config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(["bin_low", "bin_high", "n", "p", "ci_low", "ci_high"])
        for b in report.calibration.bins:
            writer.writerow(
                [
                    repr(b.low),
                    repr(b.high),
                    b.n,
                    "" if b.p is None else repr(b.p),
                    "" if b.ci_low is None else repr(b.ci_low),
                    "" if b.ci_high is None else repr(b.ci_high),
                ]
            )

    for key, rows in {"dataset": report.per_dataset, **report.strata}.items():
        with open(out / f"strata_{key}.csv", "w", encoding="utf-8", newline="") as fh:
            fh.write(f"# config_hash={report.config_hash}\n")
            writer = csv.writer(fh)
            writer.writerow(["group", "n_items", "coverage", "std"])
            for row in rows:
                writer.writerow([row.group, row.n_items, repr(row.coverage), repr(row.std)])
    return out / "report.json"
