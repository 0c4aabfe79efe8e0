#!/usr/bin/env python3
"""Generate a planted-ground-truth mini-corpus without running the audit.

Writes corpus.jsonl, benchmark.jsonl, and lineage.json into --out. Useful for
experimenting with the stage subcommands by hand, or for building fixtures at
sizes other than the demo defaults.
"""
import argparse
from collections import Counter

from contamkit.demo import make_planted_fixture, write_fixture


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="fixture directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--chunks", type=int, default=10_000)
    parser.add_argument("--items", type=int, default=100)
    parser.add_argument("--exact", type=int, default=40)
    parser.add_argument("--semantic", type=int, default=35)
    args = parser.parse_args()

    fixture = make_planted_fixture(
        seed=args.seed,
        n_chunks=args.chunks,
        n_items=args.items,
        n_exact=args.exact,
        n_semantic=args.semantic,
    )
    paths = write_fixture(fixture, args.out)
    kinds = Counter(fixture.lineage.values())
    print(f"corpus:    {paths['corpus']} ({len(fixture.corpus_records)} records)")
    print(f"benchmark: {paths['benchmark']} ({len(fixture.items)} items)")
    print(f"lineage:   {paths['lineage']} "
          f"({kinds.get('exact', 0)} exact, {kinds.get('semantic', 0)} semantic)")
    print(f"expected coverage@k inclusive={fixture.expected['coverage_exact_inclusive']!r} "
          f"exclusive={fixture.expected['coverage_exact_exclusive']!r}")


if __name__ == "__main__":
    main()
