"""Corpus ingestion: stream raw records into token-bounded, content-addressed chunks."""
from __future__ import annotations

import hashlib
import re
import unicodedata
from dataclasses import dataclass, field
from typing import Iterable, Iterator

PATH_SEPARATOR = "/"

_PARAGRAPH_SPLIT = re.compile(r"\n\s*\n")

CHUNK_MODES = ("whole", "paragraph")
PAIR_MODES = ("joint", "separate")


class SourcePathError(ValueError):
    """Empty or unusable source path."""


class IngestConfigError(ValueError):
    pass


def count_tokens(text: str) -> int:
    """Token count = number of maximal whitespace-separated runs."""
    return len(text.split())


def normalize_for_id(text: str) -> str:
    return unicodedata.normalize("NFC", text).strip()


def compute_chunk_id(dataset_id: str, text: str) -> str:
    """128-bit content id over (dataset_id, normalized text), as 32 hex chars."""
    h = hashlib.md5()
    h.update(dataset_id.encode("utf-8"))
    h.update(b"\x00")
    h.update(normalize_for_id(text).encode("utf-8"))
    return h.hexdigest()


def parse_source_path(raw: str) -> tuple[str, ...]:
    """Split a source string on '/' into a stratum path. Empty input is an error."""
    if not isinstance(raw, str) or not raw.strip():
        raise SourcePathError("missing source path")
    parts = tuple(p for p in raw.split(PATH_SEPARATOR) if p)
    if not parts:
        raise SourcePathError(f"source path has no components: {raw!r}")
    return parts


@dataclass(frozen=True)
class IngestConfig:
    """Chunking policy for one dataset.

    chunk_mode "whole" emits one chunk per record when it fits the token
    bounds; "paragraph" packs blank-line paragraphs greedily up to max_tokens.
    pair_mode controls prompt/response records: "joint" concatenates the two
    fields, "separate" emits one chunk per field.
    """

    min_tokens: int = 50
    max_tokens: int = 2048
    chunk_mode: str = "whole"
    pair_mode: str = "joint"

    def __post_init__(self) -> None:
        if self.min_tokens < 1:
            raise IngestConfigError("min_tokens must be >= 1")
        if self.max_tokens < self.min_tokens:
            raise IngestConfigError("max_tokens must be >= min_tokens")
        if self.chunk_mode not in CHUNK_MODES:
            raise IngestConfigError(f"unknown chunk_mode: {self.chunk_mode!r}")
        if self.pair_mode not in PAIR_MODES:
            raise IngestConfigError(f"unknown pair_mode: {self.pair_mode!r}")


@dataclass(frozen=True)
class CorpusChunk:
    chunk_id: str
    dataset_id: str
    source_path: tuple[str, ...]
    text: str
    token_count: int
    # (source file name, record index within file, chunk index within record)
    origin: tuple[str, int, int]

    def to_row(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "dataset_id": self.dataset_id,
            "source": PATH_SEPARATOR.join(self.source_path),
            "text": self.text,
            "token_count": self.token_count,
            "origin": {
                "file": self.origin[0],
                "record": self.origin[1],
                "chunk": self.origin[2],
            },
        }


def chunk_from_row(row: dict) -> CorpusChunk:
    origin = row.get("origin", {})
    return CorpusChunk(
        chunk_id=row["chunk_id"],
        dataset_id=row["dataset_id"],
        source_path=parse_source_path(row["source"]),
        text=row["text"],
        token_count=row["token_count"],
        origin=(origin.get("file", ""), origin.get("record", -1), origin.get("chunk", -1)),
    )


@dataclass
class IngestStats:
    records: int = 0
    chunks: int = 0
    malformed: int = 0
    dropped_out_of_bounds: int = 0
    reasons: dict = field(default_factory=dict)

    def count_error(self, reason: str) -> None:
        self.malformed += 1
        self.reasons[reason] = self.reasons.get(reason, 0) + 1


def _record_texts(record: dict, cfg: IngestConfig) -> list[str]:
    """Extract the text unit(s) a record contributes, per pair_mode."""
    if "text" in record:
        text = record["text"]
        if not isinstance(text, str):
            raise ValueError("text field is not a string")
        return [text]
    if "prompt" in record and "response" in record:
        prompt, response = record["prompt"], record["response"]
        if not isinstance(prompt, str) or not isinstance(response, str):
            raise ValueError("prompt/response fields are not strings")
        if cfg.pair_mode == "joint":
            return ["\n\n".join(part for part in (prompt, response) if part)]
        return [prompt, response]
    raise ValueError("record has no text (or prompt/response) field")


def _pack_paragraphs(text: str, cfg: IngestConfig) -> list[str]:
    """Greedily pack blank-line paragraphs into chunks of at most max_tokens.

    A single paragraph longer than max_tokens is hard-split into word windows;
    bounds filtering happens in the caller.
    """
    paragraphs = [p for p in _PARAGRAPH_SPLIT.split(text) if p.strip()]
    pieces: list[str] = []
    current: list[str] = []
    current_tokens = 0

    def flush() -> None:
        nonlocal current, current_tokens
        if current:
            pieces.append("\n\n".join(current))
            current = []
            current_tokens = 0

    for para in paragraphs:
        n = count_tokens(para)
        if n > cfg.max_tokens:
            flush()
            words = para.split()
            for start in range(0, len(words), cfg.max_tokens):
                pieces.append(" ".join(words[start : start + cfg.max_tokens]))
            continue
        if current and current_tokens + n > cfg.max_tokens:
            flush()
        current.append(para)
        current_tokens += n
    flush()
    return pieces


def ingest_stream(
    records: Iterable[dict],
    cfg: IngestConfig,
    dataset_id: str,
    file_name: str = "",
    stats: IngestStats | None = None,
) -> Iterator[CorpusChunk]:
    """Turn raw records into CorpusChunks.

    Malformed records are counted in `stats` and skipped; ingestion never
    aborts on record content. Emitted chunks always satisfy the token bounds.
    """
    if stats is None:
        stats = IngestStats()
    for record_idx, record in enumerate(records):
        stats.records += 1
        if not isinstance(record, dict):
            stats.count_error("record is not an object")
            continue
        try:
            texts = _record_texts(record, cfg)
            source_path = parse_source_path(record.get("source", ""))
        except (ValueError, SourcePathError) as exc:
            stats.count_error(str(exc))
            continue

        chunk_idx = 0
        for text in texts:
            if cfg.chunk_mode == "paragraph":
                pieces = _pack_paragraphs(text, cfg)
            else:
                pieces = [text]
            for piece in pieces:
                n = count_tokens(piece)
                if n < cfg.min_tokens or n > cfg.max_tokens:
                    stats.dropped_out_of_bounds += 1
                    chunk_idx += 1
                    continue
                yield CorpusChunk(
                    chunk_id=compute_chunk_id(dataset_id, piece),
                    dataset_id=dataset_id,
                    source_path=source_path,
                    text=piece,
                    token_count=n,
                    origin=(file_name, record_idx, chunk_idx),
                )
                stats.chunks += 1
                chunk_idx += 1
