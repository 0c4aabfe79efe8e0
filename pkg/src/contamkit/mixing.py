"""Controlled contamination: seen/unseen splits and swap-based duplicate mixing.

Mixing never changes the dataset size: each injected duplicate replaces one
clean record at a recorded position, and the manifest carries enough to undo
the operation exactly.
"""
from __future__ import annotations

import math
import random
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence


class MixingError(ValueError):
    pass


class PoolTooSmallError(MixingError):
    def __init__(self, required: int, available: int):
        super().__init__(
            f"duplicate pool too small: {required} swaps requested, {available} available"
        )
        self.required = required
        self.available = available


class LeakageError(MixingError):
    """A pool duplicate descends from an item outside the seen split."""


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_seen_unseen(
    items: Sequence,
    fraction: float = 0.5,
    rng: random.Random | None = None,
    fixed_order: bool = False,
) -> tuple[list, list]:
    """Partition items into (seen, unseen) with |seen| = ceil(fraction * n).

    fixed_order takes the first items as seen (benchmark-order protocols);
    otherwise a seeded rng picks the seen subset. Both modes preserve the
    original relative order within each half, and both are deterministic.
    """
    if not 0.0 <= fraction <= 1.0:
        raise MixingError(f"fraction must be in [0, 1], got {fraction}")
    n = len(items)
    m = math.ceil(fraction * n)
    if fixed_order:
        return list(items[:m]), list(items[m:])
    if rng is None:
        raise MixingError("random split requires an rng (or pass fixed_order=True)")
    chosen = set(rng.sample(range(n), m))
    seen = [items[i] for i in range(n) if i in chosen]
    unseen = [items[i] for i in range(n) if i not in chosen]
    return seen, unseen


@dataclass(frozen=True)
class Swap:
    position: int
    removed_id: str
    inserted_id: str
    removed_record: dict


@dataclass
class MixManifest:
    clean_set_id: str
    clean_size: int
    swap_fraction: float
    seed: int
    swaps: list[Swap] = field(default_factory=list)
    seen_item_ids: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "clean_set_id": self.clean_set_id,
            "clean_size": self.clean_size,
            "swap_fraction": self.swap_fraction,
            "seed": self.seed,
            "seen_item_ids": self.seen_item_ids,
            "swaps": [asdict(s) for s in self.swaps],
        }


def manifest_from_dict(doc: Mapping) -> MixManifest:
    return MixManifest(
        clean_set_id=doc["clean_set_id"],
        clean_size=doc["clean_size"],
        swap_fraction=doc["swap_fraction"],
        seed=doc["seed"],
        seen_item_ids=list(doc.get("seen_item_ids", [])),
        swaps=[Swap(**s) for s in doc["swaps"]],
    )


def _record_id(record: Mapping, key: str, position: int) -> str:
    value = record.get(key)
    return str(value) if value is not None else f"idx:{position}"


def mix_datasets(
    clean: Sequence[Mapping],
    pool: Sequence[Mapping],
    swap_fraction: float,
    rng: random.Random,
    seed: int = 0,
    seen_item_ids: Sequence[str] | None = None,
    clean_set_id: str = "",
    id_key: str = "id",
    lineage_key: str = "original_id",
) -> tuple[list[dict], MixManifest]:
    """Swap round(swap_fraction * |clean|) clean records for pool duplicates.

    Output size equals the clean size. When `seen_item_ids` is given, every
    pool record's lineage must point into the seen split: duplicates of
    unseen items are a leakage error, not a silent exclusion. Positions and
    pool picks are seed-deterministic; swapped-out records are stored in the
    manifest so the mix inverts exactly.
    """
    if not 0.0 <= swap_fraction <= 1.0:
        raise MixingError(f"swap_fraction must be in [0, 1], got {swap_fraction}")
    n = len(clean)
    n_swaps = _round_half_up(swap_fraction * n)

    if seen_item_ids is not None:
        seen = set(seen_item_ids)
        offenders = sorted(
            {
                str(rec.get(lineage_key))
                for rec in pool
                if rec.get(lineage_key) not in seen
            }
        )
        if offenders:
            raise LeakageError(
                "duplicate pool leaks unseen items: lineage "
                f"{offenders[:10]}{'...' if len(offenders) > 10 else ''} "
                "not in the seen split"
            )
    if len(pool) < n_swaps:
        raise PoolTooSmallError(required=n_swaps, available=len(pool))

    positions = sorted(rng.sample(range(n), n_swaps))
    if len(pool) == n_swaps:
        picks = list(range(len(pool)))
    else:
        picks = sorted(rng.sample(range(len(pool)), n_swaps))

    contaminated = [dict(rec) for rec in clean]
    manifest = MixManifest(
        clean_set_id=clean_set_id,
        clean_size=n,
        swap_fraction=swap_fraction,
        seed=seed,
        seen_item_ids=sorted(seen_item_ids) if seen_item_ids is not None else [],
    )
    for position, pick in zip(positions, picks):
        removed = contaminated[position]
        inserted = dict(pool[pick])
        manifest.swaps.append(
            Swap(
                position=position,
                removed_id=_record_id(removed, id_key, position),
                inserted_id=_record_id(inserted, id_key, position),
                removed_record=removed,
            )
        )
        contaminated[position] = inserted
    return contaminated, manifest


def invert_mix(contaminated: Sequence[Mapping], manifest: MixManifest) -> list[dict]:
    """Undo a mix exactly: restore every removed record at its position."""
    if len(contaminated) != manifest.clean_size:
        raise MixingError(
            f"contaminated size {len(contaminated)} does not match manifest "
            f"clean_size {manifest.clean_size}"
        )
    clean = [dict(rec) for rec in contaminated]
    for swap in manifest.swaps:
        clean[swap.position] = dict(swap.removed_record)
    return clean


def dose_from_rate(
    rate_per_10k: float,
    clean_size: int,
    n_seen_items: int = 1,
    max_per_item: int | None = None,
) -> int:
    """Duplicate count needed to hit a target contamination rate.

    Per item: round(rate * clean_size / 10,000), optionally capped by the
    variants available per item; the total aggregates over seen items.
    """
    if rate_per_10k < 0:
        raise MixingError("rate must be >= 0")
    if clean_size <= 0:
        raise MixingError("clean_size must be > 0")
    if n_seen_items < 0:
        raise MixingError("n_seen_items must be >= 0")
    per_item = _round_half_up(rate_per_10k * clean_size / 10_000.0)
    if max_per_item is not None:
        per_item = min(per_item, max_per_item)
    return per_item * n_seen_items
