import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from contamkit.mixing import (
    LeakageError,
    MixingError,
    PoolTooSmallError,
    _round_half_up,
    dose_from_rate,
    invert_mix,
    manifest_from_dict,
    mix_datasets,
    split_seen_unseen,
)


def clean_records(n):
    return [{"id": f"r{j:04d}", "text": f"clean text {j}"} for j in range(n)]


def pool_records(n, seen_ids=None):
    seen_ids = seen_ids or [f"item-{j}" for j in range(n)]
    return [
        {"id": f"dup{j:04d}", "text": f"dup text {j}", "original_id": seen_ids[j % len(seen_ids)]}
        for j in range(n)
    ]


class TestRounding:
    @pytest.mark.parametrize(
        "x,expected",
        [(0.4, 0), (0.5, 1), (0.6, 1), (1.5, 2), (2.5, 3), (-0.5, 0), (-0.6, -1), (-1.5, -1)],
    )
    def test_half_up(self, x, expected):
        assert _round_half_up(x) == expected


class TestSplit:
    def test_sizes_use_ceiling(self):
        seen, unseen = split_seen_unseen(list(range(5)), 0.5, rng=random.Random(0))
        assert len(seen) == 3 and len(unseen) == 2

    def test_fixed_order(self):
        seen, unseen = split_seen_unseen(list("abcde"), 0.4, fixed_order=True)
        assert seen == ["a", "b"] and unseen == ["c", "d", "e"]

    def test_random_split_preserves_relative_order(self):
        items = list(range(30))
        seen, unseen = split_seen_unseen(items, 0.5, rng=random.Random(1))
        assert seen == sorted(seen) and unseen == sorted(unseen)
        assert sorted(seen + unseen) == items

    def test_deterministic_per_seed(self):
        items = list(range(20))
        assert split_seen_unseen(items, 0.3, rng=random.Random(5)) == split_seen_unseen(
            items, 0.3, rng=random.Random(5)
        )

    def test_random_split_requires_rng(self):
        with pytest.raises(MixingError, match="rng"):
            split_seen_unseen([1, 2], 0.5)

    def test_fraction_validation(self):
        with pytest.raises(MixingError):
            split_seen_unseen([1], 1.5, fixed_order=True)

    def test_extremes(self):
        assert split_seen_unseen([1, 2], 0.0, fixed_order=True) == ([], [1, 2])
        assert split_seen_unseen([1, 2], 1.0, fixed_order=True) == ([1, 2], [])


class TestMix:
    def test_swap_count_and_size(self):
        clean = clean_records(100)
        mixed, manifest = mix_datasets(
            clean, pool_records(20), 0.05, random.Random(0), clean_set_id="c1"
        )
        assert len(mixed) == 100
        assert len(manifest.swaps) == 5
        dup_ids = {r["id"] for r in mixed if r["id"].startswith("dup")}
        assert len(dup_ids) == 5

    def test_swap_count_rounds_half_up(self):
        clean = clean_records(10)
        _, manifest = mix_datasets(clean, pool_records(10), 0.05, random.Random(0))
        assert len(manifest.swaps) == 1  # round(0.5) -> 1

    def test_manifest_records_removed_records(self):
        clean = clean_records(10)
        mixed, manifest = mix_datasets(clean, pool_records(5), 0.2, random.Random(3))
        for swap in manifest.swaps:
            assert swap.removed_record == clean[swap.position]
            assert mixed[swap.position]["id"] == swap.inserted_id

    def test_unswapped_positions_untouched(self):
        clean = clean_records(50)
        mixed, manifest = mix_datasets(clean, pool_records(10), 0.1, random.Random(2))
        swapped = {s.position for s in manifest.swaps}
        for i, rec in enumerate(mixed):
            if i not in swapped:
                assert rec == clean[i]

    def test_deterministic_per_seed(self):
        clean = clean_records(40)
        pool = pool_records(15)
        a = mix_datasets(clean, pool, 0.2, random.Random(9), seed=9)
        b = mix_datasets(clean, pool, 0.2, random.Random(9), seed=9)
        assert a[0] == b[0]
        assert a[1].to_dict() == b[1].to_dict()

    def test_whole_pool_used_when_exact(self):
        clean = clean_records(10)
        mixed, manifest = mix_datasets(clean, pool_records(5), 0.5, random.Random(0))
        assert {s.inserted_id for s in manifest.swaps} == {f"dup{j:04d}" for j in range(5)}

    def test_pool_too_small(self):
        with pytest.raises(PoolTooSmallError) as exc_info:
            mix_datasets(clean_records(100), pool_records(3), 0.05, random.Random(0))
        assert exc_info.value.required == 5 and exc_info.value.available == 3

    def test_leakage_check(self):
        pool = pool_records(6, seen_ids=["item-0", "item-1", "item-2"])
        pool[2]["original_id"] = "item-99"
        with pytest.raises(LeakageError, match="item-99"):
            mix_datasets(
                clean_records(100),
                pool,
                0.02,
                random.Random(0),
                seen_item_ids=["item-0", "item-1", "item-2"],
            )

    def test_leakage_check_passes_when_lineage_is_seen(self):
        seen = ["item-0", "item-1"]
        mixed, manifest = mix_datasets(
            clean_records(100),
            pool_records(6, seen_ids=seen),
            0.02,
            random.Random(0),
            seen_item_ids=seen,
        )
        assert manifest.seen_item_ids == seen
        assert len(manifest.swaps) == 2

    def test_fraction_validation(self):
        with pytest.raises(MixingError):
            mix_datasets(clean_records(5), [], 1.5, random.Random(0))

    def test_zero_fraction_is_identity(self):
        clean = clean_records(10)
        mixed, manifest = mix_datasets(clean, [], 0.0, random.Random(0))
        assert mixed == clean and manifest.swaps == []


class TestInvert:
    def test_exact_restoration(self):
        clean = clean_records(60)
        mixed, manifest = mix_datasets(clean, pool_records(20), 0.25, random.Random(4))
        assert mixed != clean
        assert invert_mix(mixed, manifest) == clean

    def test_restoration_after_manifest_round_trip(self):
        clean = clean_records(30)
        mixed, manifest = mix_datasets(
            clean, pool_records(10), 0.2, random.Random(1), seed=1, clean_set_id="c"
        )
        revived = manifest_from_dict(manifest.to_dict())
        assert invert_mix(mixed, revived) == clean

    def test_size_mismatch_rejected(self):
        clean = clean_records(10)
        mixed, manifest = mix_datasets(clean, pool_records(5), 0.2, random.Random(0))
        with pytest.raises(MixingError, match="clean_size"):
            invert_mix(mixed[:-1], manifest)


class TestDose:
    def test_hand_cases(self):
        assert dose_from_rate(2.0, 10_000) == 2
        assert dose_from_rate(2.0, 10_000, n_seen_items=50) == 100
        assert dose_from_rate(1.0, 5_000) == 1  # round(0.5) -> 1

    def test_cap_per_item(self):
        assert dose_from_rate(10.0, 10_000, n_seen_items=3, max_per_item=4) == 12

    def test_validation(self):
        with pytest.raises(MixingError):
            dose_from_rate(-1.0, 100)
        with pytest.raises(MixingError):
            dose_from_rate(1.0, 0)
        with pytest.raises(MixingError):
            dose_from_rate(1.0, 100, n_seen_items=-1)


@given(
    st.integers(min_value=1, max_value=120),
    st.floats(min_value=0.0, max_value=0.5),
    st.integers(min_value=0, max_value=2**31),
)
def test_mix_invert_round_trip(n, fraction, seed):
    clean = clean_records(n)
    pool = pool_records(max(1, n))
    try:
        mixed, manifest = mix_datasets(clean, pool, fraction, random.Random(seed), seed=seed)
    except PoolTooSmallError:
        return
    assert len(mixed) == n
    assert invert_mix(mixed, manifest) == clean
