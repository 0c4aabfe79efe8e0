#!/usr/bin/env python3
"""Audit a planted fixture end to end and print coverage against ground truth.

Expects a fixture directory produced by make_planted_corpus.py. The judge is
the lineage stub, so every number in the report is fully determined by the
planted layout.
"""
import argparse
import json
from pathlib import Path

from contamkit.demo import demo_config, lineage_judge, load_lineage
from contamkit.pipeline import run_pipeline


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--fixture", required=True, help="directory with corpus/benchmark/lineage")
    parser.add_argument("--out", required=True, help="audit output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--k", type=int, default=100)
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args()

    fixture = Path(args.fixture)
    paths = {
        "corpus": fixture / "corpus.jsonl",
        "benchmark": fixture / "benchmark.jsonl",
        "lineage": fixture / "lineage.json",
    }
    for name, path in paths.items():
        if not path.exists():
            parser.error(f"missing {name} file: {path}")

    lineage = load_lineage(paths["lineage"])
    with open(paths["lineage"], "r", encoding="utf-8") as fh:
        expected = json.load(fh).get("expected", {})

    cfg = demo_config(paths, args.out, seed=args.seed, k=args.k, jobs=args.jobs)
    summary = run_pipeline(cfg, judge=lineage_judge(lineage))

    for bench_id, report_path in summary["reports"].items():
        with open(report_path, "r", encoding="utf-8") as fh:
            report = json.load(fh)
        print(f"benchmark {bench_id}: report at {report_path}")
        print(f"{'k':>6}  {'inclusive':>10}  {'exclusive':>10}")
        exclusive = dict(map(tuple, report["coverage_vs_k"]["exact_exclusive"]))
        for kk, cov in report["coverage_vs_k"]["exact_inclusive"]:
            print(f"{kk:>6}  {cov:>10.4f}  {exclusive[kk]:>10.4f}")
        if expected:
            print(
                f"planted ground truth: inclusive={expected['coverage_exact_inclusive']!r} "
                f"exclusive={expected['coverage_exact_exclusive']!r}"
            )


if __name__ == "__main__":
    main()
