"""End-to-end acceptance checks, one test per release criterion.

Each test exercises a full subsystem at its contract boundary: planted
ground-truth audit, exact top-k equivalence against a brute-force oracle,
calibration confidence intervals, reservoir statistics, lexical metric hand
values, puzzle transform invariants, mixing round trips, coverage curves,
shard serialization, and annotation schema enforcement with crash resume.
"""
import json
import math
import random
import time

import numpy as np
import pytest
from scipy import stats as scipy_stats

from contamkit.annotation import (
    MBPP_TEMPLATE,
    AnnotationError,
    CallbackJudge,
    annotate_pairs,
    load_ledger,
    parse_annotation_response,
)
from contamkit.demo import DEMO_BENCHMARK_ID, run_demo
from contamkit.embeddings import EmbeddingShard, read_shard, write_shard
from contamkit.metrics import (
    gestalt_ratio,
    jaccard_tokens,
    metric_vector,
    ngram_overlap,
    rouge_l_f,
)
from contamkit.mixing import LeakageError, invert_mix, manifest_from_dict, mix_datasets
from contamkit.sampling import run_sampler
from contamkit.search import BenchmarkItem, SimilarityMatch, scan_topk
from contamkit.stats import (
    ScoredAnnotation,
    calibration_curve,
    coverage_at_k,
    coverage_vs_k,
)
from contamkit.variants import (
    CategorySubstitution,
    SubstitutionPlan,
    apply_substitution_plan,
    parse_puzzle,
    render_puzzle,
    shuffle_clues,
    validate_variant,
)


def test_criterion_01_planted_end_to_end(tmp_path):
    """10k chunks, 100 items (40 exact / 35 reordered / 25 clean), stub judge:
    coverage@100 must come back exactly 0.75 inclusive and 0.35 exclusive,
    single-threaded, in under a minute."""
    start = time.perf_counter()
    summary = run_demo(tmp_path / "audit", seed=0, jobs=1)
    elapsed = time.perf_counter() - start

    coverage = summary["coverage"][DEMO_BENCHMARK_ID]
    assert coverage["exact_inclusive"] == 0.75
    assert coverage["exact_exclusive"] == 0.35
    assert summary["expected"]["coverage_exact_inclusive"] == 0.75
    assert summary["expected"]["coverage_exact_exclusive"] == 0.35
    assert elapsed < 60.0, f"end-to-end audit took {elapsed:.1f}s"


def _unit_rows_fp16(block: np.ndarray) -> np.ndarray:
    return (block / np.linalg.norm(block, axis=1, keepdims=True)).astype(np.float16)


def test_criterion_02_topk_oracle_equivalence():
    """50 random instances (20 items, 2000 chunks, dim 64) with duplicated
    vectors planted for exact ties: scan_topk must equal a full-sort oracle
    and be invariant across worker counts 1, 2, and 8."""
    n_items, n_chunks, dim = 20, 2000, 64
    for trial in range(50):
        rng = np.random.default_rng(trial)
        vecs = _unit_rows_fp16(rng.standard_normal((n_chunks, dim)))
        queries = _unit_rows_fp16(rng.standard_normal((n_items, dim)))
        # duplicated vectors: tied scores that only chunk_id order can break
        for src, dst in rng.integers(0, n_chunks, size=(30, 2)):
            vecs[dst] = vecs[src]
        vecs[n_chunks - 1] = vecs[0]  # same vector in first and last shard
        queries[0] = vecs[0]  # query tied at cosine 1 with every copy

        cuts = {int(c) for c in rng.integers(1, n_chunks, size=2)}
        while len(cuts) < 2:
            cuts.add(int(rng.integers(1, n_chunks)))
        bounds = [0, *sorted(cuts), n_chunks]
        ids = [f"{i:032x}" for i in range(n_chunks)]
        shards = [
            ("ds", EmbeddingShard(ids=ids[lo:hi], vectors=vecs[lo:hi], provider_tag="t"))
            for lo, hi in zip(bounds, bounds[1:])
        ]
        k = int(rng.integers(1, 61))
        items = [
            BenchmarkItem(benchmark_id="b", item_id=f"q{i:03d}", input_text="x")
            for i in range(n_items)
        ]

        # oracle: same per-shard kernel, then a full sort over the union
        query_block = queries.astype(np.float32)
        candidates = [[] for _ in range(n_items)]
        for _, shard in shards:
            scores = query_block @ shard.vectors.astype(np.float32).T
            for row, per_item in zip(scores, candidates):
                per_item.extend(zip(row.tolist(), shard.ids))
        expected = []
        for idx, per_item in enumerate(candidates):
            per_item.sort(key=lambda t: (-t[0], t[1]))
            for rank, (score, chunk_id) in enumerate(per_item[:k], start=1):
                expected.append(
                    SimilarityMatch(
                        benchmark_id="b",
                        item_id=items[idx].item_id,
                        chunk_id=chunk_id,
                        dataset_id="ds",
                        score=score,
                        rank=rank,
                    )
                )

        base = scan_topk(items, queries, shards, k, workers=1)
        assert base == expected, f"trial {trial}: differs from full-sort oracle"
        for workers in (2, 8):
            assert scan_topk(items, queries, shards, k, workers=workers) == base


def test_criterion_03_calibration_ci():
    """A bin with n=100, p=0.5 carries a normal CI of half-width 1.96*sqrt(0.0025),
    and bin counts always sum to the input size."""
    pairs = [(0.25, i < 50) for i in range(100)]
    curve = calibration_curve(pairs, bins=2, value_range=(0.0, 1.0))
    low_bin = curve.bins[0]
    assert low_bin.n == 100
    assert low_bin.p == 0.5
    half_width = (low_bin.ci_high - low_bin.ci_low) / 2
    assert abs(half_width - 1.96 * math.sqrt(0.0025)) <= 1e-9

    rnd = random.Random(42)
    for _ in range(1000):
        n = rnd.randrange(0, 301)
        fuzz = [(rnd.random(), rnd.random() < 0.5) for _ in range(n)]
        bins = rnd.randrange(1, 41)
        value_range = (0.0, 1.0) if rnd.random() < 0.5 else None
        assert calibration_curve(fuzz, bins=bins, value_range=value_range).total == n


def test_criterion_04_reservoir_quotas_and_uniformity():
    """Two strata of 80k and 20k chunks at a 1% rate must apportion quotas
    exactly 800/200 on every seed, and per-chunk inclusion counts over 1000
    seeds must look binomial: under 1% of chunks outside mean +- 3 sigma and
    a chi-square goodness-of-fit p-value above 0.001."""
    n_wide, n_narrow = 80_000, 20_000
    wide, narrow = ("crawl", "wide"), ("crawl", "narrow")
    chunks = [
        {"source_path": wide if i < n_wide else narrow, "chunk_id": f"{i:032x}", "idx": i}
        for i in range(n_wide + n_narrow)
    ]
    seen_counts = {wide: n_wide, narrow: n_narrow}

    n_seeds = 1000
    counts = np.zeros(n_wide + n_narrow, dtype=np.int64)
    for seed in range(n_seeds):
        sample, plan, _ = run_sampler(chunks, 0.01, seed, seen_counts)
        assert plan.quotas == {wide: 800, narrow: 200}
        assert len(sample) == 1000
        for chunk in sample:
            counts[chunk["idx"]] += 1

    mean = n_seeds * 0.01
    sigma = math.sqrt(n_seeds * 0.01 * 0.99)
    outlier_fraction = float(np.mean(np.abs(counts - mean) > 3 * sigma))
    assert outlier_fraction < 0.01, f"{outlier_fraction:.2%} of chunks outside 3 sigma"
    assert scipy_stats.chisquare(counts).pvalue > 0.001


def test_criterion_05_lexical_hand_cases():
    """Pinned metric values, plus identity scoring 1.0 on every field for
    arbitrary fuzzed strings."""
    assert jaccard_tokens("a b c", "a b d") == 0.5
    assert abs(rouge_l_f("the cat sat", "the cat ran") - 2 / 3) <= 1e-12
    assert ngram_overlap("a b c", "a b d", 2) == 0.5
    assert gestalt_ratio("abcd", "bcde") == 0.75

    alphabet = "abcdefg XYZ0129 .,;:!?-_\téß中"
    rnd = random.Random(5)
    for _ in range(100):
        text = "".join(rnd.choice(alphabet) for _ in range(rnd.randrange(0, 80)))
        vec = metric_vector(text, text)
        assert vec.exact is True
        assert (vec.ngram2, vec.ngram3, vec.rouge_l_f, vec.jaccard, vec.gestalt) == (
            1.0,
            1.0,
            1.0,
            1.0,
            1.0,
        )


_FILLER = "alpha bravo charlie delta echo foxtrot golf hotel india juliet kilo lima".split()
_COLORS = ("Red", "Green", "Blue", "Ivory", "Amber")
_SHAPES = ("Square", "Circle", "Triangle", "Hexagon", "Rhombus")


def _fuzz_puzzle(rnd: random.Random) -> tuple[str, SubstitutionPlan]:
    """Numbered-clue puzzle with planted category/value tokens and a
    substitution plan whose targets never occur in the text."""
    colors = rnd.sample(_COLORS, rnd.randint(2, len(_COLORS)))

    def prose_line():
        return " ".join(rnd.choice(_FILLER) for _ in range(rnd.randint(2, 6)))

    clue_lines = []
    n_clues = rnd.randint(3, 6)
    for number in range(1, n_clues + 1):
        words = [rnd.choice(_FILLER) for _ in range(rnd.randint(1, 5))]
        words.insert(rnd.randrange(len(words) + 1), "Color")
        words.insert(rnd.randrange(len(words) + 1), rnd.choice(colors))
        lead = rnd.choice(["", " ", "  "])
        sep = rnd.choice([".", ")"])
        gap = rnd.choice([" ", "  ", "\t"])
        clue_lines.append(f"{lead}{number}{sep}{gap}{' '.join(words)}")

    lines = (
        [prose_line() for _ in range(rnd.randint(0, 2))]
        + clue_lines
        + [prose_line() for _ in range(rnd.randint(0, 2))]
    )
    plan = SubstitutionPlan(
        categories={
            "Color": CategorySubstitution("Shape", dict(zip(colors, _SHAPES)))
        }
    )
    return "\n".join(lines), plan


def test_criterion_06_transform_invariants():
    """1000 fuzzed puzzles: shuffling preserves the clue multiset and
    renumbers 1..n; a substitution followed by its inverse is the identity on
    collision-free text; validation rejects variants at gestalt >= 0.85
    against the original or any sibling."""
    rnd = random.Random(123)
    for trial in range(1000):
        text, plan = _fuzz_puzzle(rnd)
        doc = parse_puzzle(text)
        assert render_puzzle(doc) == text

        shuffled = shuffle_clues(doc, rnd)
        assert sorted(c.text for c in shuffled.clues) == sorted(c.text for c in doc.clues)
        assert [c.number for c in shuffled.clues] == list(range(1, len(doc.clues) + 1))
        assert shuffled.preamble == doc.preamble
        assert shuffled.trailer == doc.trailer

        swapped = apply_substitution_plan(text, plan)
        assert swapped != text
        assert apply_substitution_plan(swapped, plan.inverse()) == text

        self_check = validate_variant(text, text)
        assert not self_check.accepted
        assert any("gestalt vs original" in reason for reason in self_check.reasons)

        shuffled_text = render_puzzle(shuffled)
        sibling_check = validate_variant(shuffled_text, text, sibling_texts=[shuffled_text])
        assert not sibling_check.accepted
        assert any("sibling" in reason for reason in sibling_check.reasons)

        clean = validate_variant(shuffled_text, text, max_gestalt=2.0)
        assert clean.accepted, f"trial {trial}: {clean.reasons}"


def test_criterion_07_mixer_round_trip_and_leakage():
    """Mixing 500 duplicates into 10,000 clean records at fraction 0.05 uses
    the whole pool, inverts byte-identically through the manifest, and
    errors out when the pool holds duplicates of unseen items."""
    clean = [{"id": f"clean-{i:05d}", "text": f"clean record {i}"} for i in range(10_000)]
    pool = [
        {"id": f"dup-{i:04d}", "original_id": f"item-{i % 400}", "text": f"duplicate {i}"}
        for i in range(500)
    ]

    mixed, manifest = mix_datasets(clean, pool, 0.05, random.Random(11), seed=11)
    assert len(mixed) == 10_000
    mixed_ids = {record["id"] for record in mixed}
    assert {record["id"] for record in pool} <= mixed_ids
    assert len({record["id"] for record in clean} - mixed_ids) == 500

    reloaded = manifest_from_dict(json.loads(json.dumps(manifest.to_dict())))
    restored = invert_mix(mixed, reloaded)

    def jsonl_bytes(records):
        return "\n".join(
            json.dumps(record, sort_keys=True, ensure_ascii=False) for record in records
        ).encode("utf-8")

    assert jsonl_bytes(restored) == jsonl_bytes(clean)

    seen = [f"item-{i}" for i in range(300)]  # pool references item-300..399 too
    with pytest.raises(LeakageError):
        mix_datasets(clean, pool, 0.05, random.Random(1), seen_item_ids=seen)


def _scored(item_id, rank, is_sd, match_type, chunk_id):
    return ScoredAnnotation(
        benchmark_id="b",
        item_id=item_id,
        chunk_id=chunk_id,
        dataset_id="d",
        rank=rank,
        score=max(0.0, 1.0 - 0.05 * rank),
        is_sd=is_sd,
        match_type=match_type,
        confidence=0.9,
        string_exact=None,
    )


def test_criterion_08_coverage_monotone_and_top1():
    """coverage@1 reports exactly 0.284 when 284 of 1000 items carry a rank-1
    duplicate, and coverage_vs_k is nondecreasing on fuzzed annotations."""
    items = [f"i{idx:04d}" for idx in range(1000)]
    records = [
        _scored(
            item,
            rank=1,
            is_sd=idx < 284,
            match_type="equivalent" if idx < 284 else "unrelated",
            chunk_id=f"{idx:032x}",
        )
        for idx, item in enumerate(items)
    ]
    assert coverage_at_k(records, items, 1).coverage == 284 / 1000
    assert coverage_vs_k(records, items, ks=[1]) == [(1, 0.284)]

    rnd = random.Random(8)
    fuzz = []
    for item in items:
        for _ in range(rnd.randrange(0, 4)):
            is_sd = rnd.random() < 0.4
            fuzz.append(
                _scored(
                    item,
                    rank=rnd.randint(1, 10),
                    is_sd=is_sd,
                    match_type=rnd.choice(("exact", "equivalent", "subset"))
                    if is_sd
                    else "unrelated",
                    chunk_id=f"{rnd.getrandbits(128):032x}",
                )
            )
    for include_exact in (True, False):
        curve = coverage_vs_k(fuzz, items, ks=range(1, 13), include_exact=include_exact)
        values = [coverage for _, coverage in curve]
        assert all(later >= earlier for earlier, later in zip(values, values[1:]))
        assert all(0.0 <= value <= 1.0 for value in values)


def test_criterion_09_shard_round_trip(tmp_path):
    """10^5 half-precision vectors survive write/read bit-exactly, and every
    stored norm sits within 2^-8 of 1."""
    rng = np.random.default_rng(9)
    raw = rng.standard_normal((100_000, 64))
    vectors = (raw / np.linalg.norm(raw, axis=1, keepdims=True)).astype(np.float16)
    ids = [f"{i:032x}" for i in range(100_000)]
    shard = EmbeddingShard(ids=ids, vectors=vectors, provider_tag="round-trip check")

    path = tmp_path / "vectors.shard"
    write_shard(shard, path)
    loaded = read_shard(path)

    assert loaded.provider_tag == "round-trip check"
    assert loaded.ids == ids
    assert np.array_equal(loaded.vectors.view(np.uint16), vectors.view(np.uint16))
    norms = np.linalg.norm(loaded.vectors.astype(np.float64), axis=1)
    assert float(np.max(np.abs(norms - 1.0))) <= 2.0 ** -8


class _CrashingJudge:
    """Healthy stub that dies with a non-judge error on its 500th call."""

    tag = "crash-stub"

    def __init__(self):
        self.calls = 0

    def annotate(self, request):
        self.calls += 1
        if self.calls == 500:
            raise RuntimeError("simulated crash")
        return {"is_sd": True, "confidence": 0.5, "match_type": "subset", "reasoning": "planted"}


def test_criterion_10_annotation_schema_and_resume(tmp_path):
    """Fuzzed judge responses: every accepted record has a bool is_sd, a
    confidence in [0,1], a known match type, and a duplicate-consistent match
    type when is_sd is set. A crash mid-run resumes to exactly one record per
    pair."""
    rnd = random.Random(7)
    match_types = MBPP_TEMPLATE.match_types
    duplicate_types = ("exact", "equivalent", "subset")
    accepted = 0
    for i in range(1000):
        roll = rnd.random()
        if roll < 0.55:
            doc = {
                "is_sd": rnd.choice([True, False, 1, "yes"]),
                "confidence": rnd.choice([rnd.random(), 1.5, -0.1, True, "high"]),
                "match_type": rnd.choice(list(match_types) + ["related", "junk"]),
                "reasoning": rnd.choice(["fine", "", 7]),
            }
            if rnd.random() < 0.2:
                doc.pop(rnd.choice(sorted(doc)))
            raw = json.dumps(doc) if rnd.random() < 0.5 else doc
        elif roll < 0.7:
            raw = rnd.choice(["not json {", "", "null", "[1, 2]", '"verdict"'])
        else:
            is_sd = rnd.random() < 0.5
            raw = {
                "is_sd": is_sd,
                "confidence": round(rnd.random(), 3),
                "match_type": rnd.choice(duplicate_types if is_sd else match_types),
                "reasoning": "fuzz",
            }
        try:
            record = parse_annotation_response(
                raw,
                ("bench", f"item-{i}", f"{i:032x}"),
                match_types=match_types,
                annotator_tag="fuzz",
            )
        except AnnotationError:
            continue
        accepted += 1
        assert isinstance(record.is_sd, bool)
        assert isinstance(record.confidence, float)
        assert 0.0 <= record.confidence <= 1.0
        assert record.match_type in match_types
        if record.is_sd:
            assert record.match_type in duplicate_types
    assert accepted >= 200  # the fuzz must actually exercise the accept path

    pairs = [
        (("bench", f"item-{i}", f"{i:032x}"), f"test text {i}", f"corpus text {i}")
        for i in range(1000)
    ]
    records_path = tmp_path / "records.jsonl"
    with pytest.raises(RuntimeError, match="simulated crash"):
        annotate_pairs(pairs, _CrashingJudge(), MBPP_TEMPLATE, records_path, concurrency=1)
    assert len(records_path.read_text().splitlines()) == 499

    def healthy(request):
        return {"is_sd": False, "confidence": 0.4, "match_type": "unrelated", "reasoning": "r"}

    result = annotate_pairs(
        pairs, CallbackJudge(healthy), MBPP_TEMPLATE, records_path, concurrency=1
    )
    assert result.skipped == 499
    assert len(result.records) == 501
    assert result.failures == [] and result.provider_failures == 0

    ledger = load_ledger(records_path)
    assert len(ledger) == 1000
    assert set(ledger) == {pair_id for pair_id, _, _ in pairs}
    assert len(records_path.read_text().splitlines()) == 1000
