"""Line-delimited JSON helpers shared by the pipeline stages.

Files written by pipeline stages start with a single meta line of the form
{"_meta": {...}} carrying the config hash; readers skip it transparently.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterable, Iterator


def write_jsonl(path: str | Path, rows: Iterable[dict], meta: dict | None = None) -> int:
    """Write rows as one JSON object per line. Returns the number of rows written."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        if meta is not None:
            fh.write(json.dumps({"_meta": meta}, sort_keys=True) + "\n")
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
            n += 1
    return n


def read_jsonl(path: str | Path) -> Iterator[dict]:
    """Yield data rows, skipping a leading {"_meta": ...} line if present."""
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            if i == 0 and isinstance(row, dict) and set(row) == {"_meta"}:
                continue
            yield row


def read_meta(path: str | Path) -> dict | None:
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().strip()
    if not first:
        return None
    row = json.loads(first)
    if isinstance(row, dict) and set(row) == {"_meta"}:
        return row["_meta"]
    return None


def dump_json(path: str | Path, obj: Any) -> None:
    """Deterministic JSON dump: sorted keys, stable float repr, trailing newline."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2, ensure_ascii=False)
        fh.write("\n")
