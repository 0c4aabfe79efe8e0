"""Command-line surface: pipeline stages, utilities, and the planted demo.

Exit codes: 0 success, 2 configuration error, 3 stage failure, 4 provider
failure. Provider credentials come from the CONTAMKIT_API_KEY environment
variable, never from flags or config files.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import random
import shlex
import sys
from pathlib import Path

from .annotation import TEMPLATES, import_responses
from .config import ConfigError, PipelineConfig, load_config
from .demo import run_demo
from .jsonl import dump_json, read_jsonl
from .metrics import NormalizationConfig, metric_vector
from .mixing import MixingError, invert_mix, manifest_from_dict, mix_datasets
from .pipeline import ProviderError, RunPaths, StageError, run_pipeline, run_stage
from .variants import (
    DuplicateVariant,
    PuzzleParseError,
    apply_substitution_plan,
    build_transform_prompt,
    map_solution,
    parse_puzzle,
    plan_from_dict,
    render_puzzle,
    run_solution_hook,
    shuffle_clues,
    validate_variant,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_PROVIDER = 4


def _load_cfg(args) -> PipelineConfig:
    cfg = load_config(args.config)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "jobs", None) is not None:
        overrides["jobs"] = args.jobs
    if getattr(args, "out", None) is not None:
        overrides["out_dir"] = args.out
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
        cfg.validate()
    return cfg


def _print_detail(detail: dict) -> None:
    print(json.dumps(detail, indent=2, sort_keys=True))


def _cmd_stage(stage: str):
    def handler(args) -> int:
        cfg = _load_cfg(args)
        _print_detail(run_stage(cfg, stage))
        return EXIT_OK

    return handler


def _cmd_run(args) -> int:
    cfg = _load_cfg(args)
    summary = run_pipeline(cfg)
    _print_detail(summary)
    return EXIT_OK


def _cmd_annotate(args) -> int:
    cfg = _load_cfg(args)
    if args.import_responses is None:
        _print_detail(run_stage(cfg, "annotate"))
        return EXIT_OK

    # offline import: validated responses land in the per-benchmark ledger
    if args.benchmark is not None:
        bench_ids = [args.benchmark]
    elif len(cfg.benchmarks) == 1:
        bench_ids = [cfg.benchmarks[0].benchmark_id]
    else:
        raise ConfigError("--benchmark is required when the config has several benchmarks")
    known = {b.benchmark_id for b in cfg.benchmarks}
    unknown = set(bench_ids) - known
    if unknown:
        raise ConfigError(f"unknown benchmark id(s): {sorted(unknown)}")

    paths = RunPaths(cfg.out_dir)
    template = TEMPLATES[cfg.judge.template]
    detail = {}
    for bench_id in bench_ids:
        records_path = paths.annotations(bench_id)
        records_path.parent.mkdir(parents=True, exist_ok=True)
        result = import_responses(
            args.import_responses,
            template,
            records_path,
            failures_path=paths.annotation_failures(bench_id),
        )
        detail[bench_id] = {
            "imported": len(result.records),
            "skipped": result.skipped,
            "failed": len(result.failures),
        }
    _print_detail(detail)
    return EXIT_OK


def _cmd_demo(args) -> int:
    summary = run_demo(
        args.out,
        seed=args.seed if args.seed is not None else 0,
        n_chunks=args.chunks,
        n_items=args.items,
        n_exact=args.exact,
        n_semantic=args.semantic,
        k=args.k,
        jobs=args.jobs if args.jobs is not None else 1,
    )
    expected = summary["expected"]
    for bench_id, report_path in summary["reports"].items():
        coverage = summary["coverage"][bench_id]
        print(f"benchmark: {bench_id}")
        print(f"report: {report_path}")
        print(
            f"coverage@{args.k} exact-inclusive: {coverage['exact_inclusive']!r} "
            f"(planted {expected['coverage_exact_inclusive']!r})"
        )
        print(
            f"coverage@{args.k} exact-exclusive: {coverage['exact_exclusive']!r} "
            f"(planted {expected['coverage_exact_exclusive']!r})"
        )
    return EXIT_OK


def _cmd_metrics(args) -> int:
    norm = NormalizationConfig(lowercase=args.lowercase, containment=args.containment)
    out_fh = open(args.out, "w", encoding="utf-8", newline="") if args.out else sys.stdout
    try:
        with open(args.pairs, "r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"text_a", "text_b"} <= set(reader.fieldnames):
                raise ValueError("pairs file needs text_a and text_b columns")
            writer = csv.writer(out_fh)
            writer.writerow(["pair", "ngram2", "ngram3", "rouge_l_f", "jaccard", "gestalt", "exact"])
            for i, row in enumerate(reader):
                v = metric_vector(
                    row["text_a"], row["text_b"], norm=norm, denominator=args.denominator
                )
                writer.writerow(
                    [i, repr(v.ngram2), repr(v.ngram3), repr(v.rouge_l_f),
                     repr(v.jaccard), repr(v.gestalt), v.exact]
                )
    finally:
        if args.out:
            out_fh.close()
    return EXIT_OK


def _emit_prompt_rows(args, rows, kind: str, plan) -> int:
    out_rows = []
    for row in rows:
        solution = row.get("solution")
        if kind == "substitution-plan" and solution is None:
            raise ValueError(f"item {row.get('item_id')!r} has no solution for plan prompts")
        doc = build_transform_prompt(kind, row["puzzle"], solution=solution, plan=plan)
        out_rows.append({"item_id": row.get("item_id"), **doc})
    _write_rows(args.out, out_rows)
    print(f"wrote {len(out_rows)} {kind} prompt(s) to {args.out}")
    return EXIT_OK


def _write_rows(path: str, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


def _cmd_gen_dupes(args) -> int:
    rows = list(read_jsonl(args.items))
    plan = None
    if args.plan:
        with open(args.plan, "r", encoding="utf-8") as fh:
            plan = plan_from_dict(json.load(fh))

    if args.transform in ("paraphrase", "substitution-plan", "substitution-apply"):
        if args.transform == "substitution-apply" and plan is None:
            raise ValueError("substitution-apply prompts need --plan")
        return _emit_prompt_rows(args, rows, args.transform, plan)

    rng = random.Random(args.seed if args.seed is not None else 0)
    hook = shlex.split(args.solution_hook) if args.solution_hook else None
    out_rows = []
    accepted = 0
    siblings: dict[str, list[str]] = {}
    for row in rows:
        item_id = str(row.get("item_id", len(out_rows)))
        puzzle = row["puzzle"]
        solution = row.get("solution")
        if args.transform == "shuffle":
            variant_text = render_puzzle(shuffle_clues(parse_puzzle(puzzle), rng))
            chain = ("shuffle",)
            variant_solution = solution
        else:
            if plan is None:
                raise ValueError("--transform substitute needs --plan")
            variant_text = apply_substitution_plan(puzzle, plan)
            chain = ("substitute",)
            variant_solution = map_solution(solution, plan) if solution is not None else None

        variant = DuplicateVariant(original_id=item_id, chain=chain, text=variant_text)
        out_row = variant.to_row()
        if args.validate:
            outcome = validate_variant(
                variant_text,
                puzzle,
                sibling_texts=siblings.get(item_id, ()),
                chain=chain,
                plan=plan,
                original_solution=solution,
                variant_solution=variant_solution,
                max_gestalt=args.max_gestalt,
            )
            if outcome.accepted and hook is not None:
                if not run_solution_hook(
                    hook, {"item_id": item_id, "text": variant_text, "solution": variant_solution}
                ):
                    outcome.accepted = False
                    outcome.reasons.append("solution hook rejected the variant")
            out_row["accepted"] = outcome.accepted
            out_row["reasons"] = outcome.reasons
            out_row["metrics"] = outcome.metrics.to_row() if outcome.metrics else None
            if outcome.accepted:
                siblings.setdefault(item_id, []).append(variant_text)
                accepted += 1
        else:
            accepted += 1
        if variant_solution is not None:
            out_row["solution"] = variant_solution
        out_rows.append(out_row)

    _write_rows(args.out, out_rows)
    print(f"wrote {len(out_rows)} variant(s) to {args.out} ({accepted} accepted)")
    return EXIT_OK


def _cmd_mix(args) -> int:
    if args.invert:
        if not (args.mixed and args.manifest and args.out):
            raise ValueError("--invert needs --mixed, --manifest, and --out")
        with open(args.manifest, "r", encoding="utf-8") as fh:
            manifest = manifest_from_dict(json.load(fh))
        restored = invert_mix(list(read_jsonl(args.mixed)), manifest)
        _write_rows(args.out, restored)
        print(f"restored {len(restored)} record(s) to {args.out}")
        return EXIT_OK

    if not (args.clean and args.pool and args.out):
        raise ValueError("mix needs --clean, --pool, and --out")
    clean = list(read_jsonl(args.clean))
    pool = list(read_jsonl(args.pool))
    seen_ids = None
    if args.seen_ids:
        with open(args.seen_ids, "r", encoding="utf-8") as fh:
            seen_ids = json.load(fh)
    seed = args.seed if args.seed is not None else 0
    contaminated, manifest = mix_datasets(
        clean,
        pool,
        args.fraction,
        random.Random(seed),
        seed=seed,
        seen_item_ids=seen_ids,
        clean_set_id=args.clean_set_id,
        id_key=args.id_key,
        lineage_key=args.lineage_key,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_rows(str(out_dir / "mixed.jsonl"), contaminated)
    dump_json(out_dir / "mix_manifest.json", manifest.to_dict())
    print(
        f"mixed {len(manifest.swaps)} duplicate(s) into {len(contaminated)} records "
        f"under {out_dir}"
    )
    return EXIT_OK


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="pipeline config JSON")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--jobs", type=int, default=None, help="override worker count")
    p.add_argument("--out", default=None, help="override the output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contamkit",
        description="Audit training corpora for exact and semantic benchmark duplicates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for stage in ("ingest", "sample", "embed", "scan", "stats"):
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        _add_config_args(p)
        p.set_defaults(func=_cmd_stage(stage))

    p = sub.add_parser("annotate", help="run the annotate stage (live, export, or import)")
    _add_config_args(p)
    p.add_argument(
        "--import-responses",
        default=None,
        metavar="FILE",
        help="validate externally produced responses into the ledger",
    )
    p.add_argument("--benchmark", default=None, help="benchmark id for --import-responses")
    p.set_defaults(func=_cmd_annotate)

    p = sub.add_parser("run", help="run every stage in order")
    _add_config_args(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("demo", help="generate the planted mini-corpus and audit it")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--chunks", type=int, default=10_000)
    p.add_argument("--items", type=int, default=100)
    p.add_argument("--exact", type=int, default=40)
    p.add_argument("--semantic", type=int, default=35)
    p.add_argument("--k", type=int, default=100)
    p.set_defaults(func=_cmd_demo)

    p = sub.add_parser("metrics", help="lexical metric vectors for text pairs")
    p.add_argument("--pairs", required=True, help="CSV with text_a and text_b columns")
    p.add_argument("--out", default=None, help="output CSV (default stdout)")
    p.add_argument("--lowercase", action="store_true")
    p.add_argument("--containment", action="store_true")
    p.add_argument("--denominator", choices=("min", "union"), default="min")
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("gen-dupes", help="programmatic puzzle variants or transform prompts")
    p.add_argument("--items", required=True, help="JSONL with puzzle (and optional solution)")
    p.add_argument("--out", required=True, help="output JSONL")
    p.add_argument(
        "--transform",
        required=True,
        choices=("shuffle", "substitute", "paraphrase", "substitution-plan", "substitution-apply"),
    )
    p.add_argument("--plan", default=None, help="substitution plan JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--max-gestalt", type=float, default=0.85)
    p.add_argument("--no-validate", dest="validate", action="store_false")
    p.add_argument("--solution-hook", default=None, help="command validating variants via stdin")
    p.set_defaults(func=_cmd_gen_dupes)

    p = sub.add_parser("mix", help="swap duplicates into a clean dataset, or invert a mix")
    p.add_argument("--clean", default=None, help="clean dataset JSONL")
    p.add_argument("--pool", default=None, help="duplicate pool JSONL")
    p.add_argument("--fraction", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory (or file with --invert)")
    p.add_argument("--seen-ids", default=None, help="JSON array of seen item ids")
    p.add_argument("--clean-set-id", default="")
    p.add_argument("--id-key", default="id")
    p.add_argument("--lineage-key", default="original_id")
    p.add_argument("--invert", action="store_true")
    p.add_argument("--mixed", default=None, help="mixed JSONL (with --invert)")
    p.add_argument("--manifest", default=None, help="mix manifest JSON (with --invert)")
    p.set_defaults(func=_cmd_mix)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProviderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (MixingError, PuzzleParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
