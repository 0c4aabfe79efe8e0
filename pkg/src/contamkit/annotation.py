"""LLM-judge annotation: prompt construction, verdict validation, ledger.

A judge receives a filled prompt template plus decoding parameters and must
return a structured verdict: is_sd, confidence, reasoning, match_type. Records
are appended to a JSONL ledger as they arrive so an interrupted run resumes by
pair id without duplicating work.
"""
from __future__ import annotations

import json
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import requests

from .jsonl import read_jsonl

PairId = tuple[str, str, str]  # (benchmark_id, item_id, chunk_id)

BASE_MATCH_TYPES = ("exact", "equivalent", "subset", "superset", "unrelated")
CODEFORCES_MATCH_TYPES = ("exact", "equivalent", "subset", "superset", "related", "unrelated")
# Verdicts that actually assert a duplicate. is_sd=true with any other
# match_type is inconsistent and gets rejected, never silently repaired.
DUPLICATE_MATCH_TYPES = frozenset({"exact", "equivalent", "subset"})

_SLOT = re.compile(r"\{(test_text|corpus_text)\}")


class AnnotationError(Exception):
    """Base for judge-response problems; carries the raw response for the ledger."""

    def __init__(self, reason: str, raw=None):
        super().__init__(reason)
        self.reason = reason
        self.raw = raw


class MalformedResponse(AnnotationError):
    pass


class InvalidResponse(AnnotationError):
    pass


class InconsistentResponse(AnnotationError):
    pass


class TransientJudgeError(RuntimeError):
    """Retryable provider failure (timeouts, 5xx, rate limits)."""


class PermanentJudgeError(RuntimeError):
    pass


@dataclass(frozen=True)
class JudgeParams:
    temperature: float = 1.0
    max_output_tokens: int = 8192
    thinking_level: str = "MEDIUM"


@dataclass(frozen=True)
class PromptTemplate:
    """A judge prompt with exactly one {test_text} and one {corpus_text} slot."""

    name: str
    text: str
    params: JudgeParams = JudgeParams()
    match_types: tuple[str, ...] = BASE_MATCH_TYPES

    def __post_init__(self) -> None:
        slots = [m.group(1) for m in _SLOT.finditer(self.text)]
        for required in ("test_text", "corpus_text"):
            n = slots.count(required)
            if n != 1:
                raise ValueError(
                    f"template {self.name!r}: {{{required}}} must appear exactly once, found {n}"
                )

    def fill(self, test_text: str, corpus_text: str) -> str:
        """Single-pass slot substitution: inserted content is never re-scanned."""
        values = {"test_text": test_text, "corpus_text": corpus_text}
        return _SLOT.sub(lambda m: values[m.group(1)], self.text)


MBPP_JUDGE_PROMPT = """You are an expert programmer analyzing potential semantic duplicates between coding tasks.

## Task
Determine if the following two coding tasks are semantic duplicates - meaning they describe the same programming task, just potentially phrased differently.

## Test Task (from benchmark):
{test_text}

## Corpus Task (from training data):
{corpus_text}

## Guidelines:
1. **Focus on the TASK, not the solution** - ignore any code or solutions that may be present
2. **Mathematical equivalence counts as duplicate** - e.g., "sum 1 to n" and "sum n, n-1, ..., 1" are equivalent
3. **Corpus subsumes test = duplicate** - if the corpus task is strictly harder (asks for more), but solving it would trivially solve the test task, mark as duplicate
4. **Be calibrated** - use confidence primarily for ambiguous cases, tricky phrasing, or when you're uncertain

## Match Types:
- "exact": Nearly identical wording
- "equivalent": Different phrasing, same underlying task
- "subset": Test task is a subset of corpus task (corpus is harder but solves test)
- "superset": Corpus task is a subset of test task (test is harder) - NOT a duplicate
- "unrelated": Different tasks entirely

Analyze the tasks and provide your structured judgment."""

CODEFORCES_JUDGE_PROMPT = """You are an expert competitive programmer analyzing potential semantic duplicates between programming problems.

## Task
Determine if the following two competitive programming problems are semantically related - meaning exposure to the corpus problem during training could help solve the test problem.

## Test Problem (from benchmark):
{test_text}

## Corpus Problem (from training data):
{corpus_text}

## Analysis Steps:
1. **Check data quality first**: Is the corpus text a complete problem statement? If it's empty, fragmentary, or contains only code without a problem description, mark as "unrelated".
2. **Check for exact text match**: If the corpus text appears VERBATIM (word-for-word) within the test text (e.g., corpus contains just the problem statement while test contains problem + examples), this counts as "exact" match.
3. **Extract the core problem**: Strip away story/narrative framing. What is the actual computational task?
4. **Identify the key insight**: What algorithmic technique or observation is needed?
5. **Compare**: Is there meaningful overlap in what's being asked or how to solve it?

## Match Types:
- "exact": Nearly identical problem statements, OR corpus text is a verbatim substring/subsection of test text (exact text match even if corpus is shorter)
- "equivalent": Different framing but identical algorithmic core
- "subset": Test is a special case of corpus (test asks for less than corpus)
- "superset": Corpus asks for something simpler than test, but NOT a verbatim text match
- "related": Corpus covers a component or shares key insight with test
- "unrelated": Different problems, or corpus data is unusable

## IMPORTANT: Exact Match Clarification
If the corpus text is an exact substring of the test text (the corpus text appears word-for-word inside the test text, just without some sections like examples or input/output format), mark this as "exact" NOT "superset". The key distinction:
- "exact": Corpus text IS CONTAINED VERBATIM in test text
- "superset": Corpus asks a DIFFERENT (simpler) question than test

## What counts as semantically related:
- Same computational task (any framing)
- One is a special case of the other
- Shared key insight or trick
- Corpus solves a significant component of test

## What is unrelated:
- Sharing only common techniques (DP, BFS) without structural similarity
- Unusable corpus data (empty, fragmentary, code-only)
- Genuinely different computational questions"""

MBPP_TEMPLATE = PromptTemplate(name="mbpp", text=MBPP_JUDGE_PROMPT)
CODEFORCES_TEMPLATE = PromptTemplate(
    name="codeforces",
    text=CODEFORCES_JUDGE_PROMPT,
    params=JudgeParams(thinking_level="HIGH"),
    match_types=CODEFORCES_MATCH_TYPES,
)
TEMPLATES = {t.name: t for t in (MBPP_TEMPLATE, CODEFORCES_TEMPLATE)}


@dataclass(frozen=True)
class AnnotationRequest:
    pair_id: PairId
    prompt: str
    params: JudgeParams
    test_text: str
    corpus_text: str


def build_annotation_request(
    pair_id: PairId, test_text: str, corpus_text: str, template: PromptTemplate
) -> AnnotationRequest:
    return AnnotationRequest(
        pair_id=pair_id,
        prompt=template.fill(test_text, corpus_text),
        params=template.params,
        test_text=test_text,
        corpus_text=corpus_text,
    )


@dataclass(frozen=True)
class AnnotationRecord:
    benchmark_id: str
    item_id: str
    chunk_id: str
    is_sd: bool
    confidence: float
    match_type: str
    reasoning: str = ""
    annotator_tag: str = ""

    @property
    def pair_id(self) -> PairId:
        return (self.benchmark_id, self.item_id, self.chunk_id)

    def to_row(self) -> dict:
        return asdict(self)


def record_from_row(row: dict) -> AnnotationRecord:
    return AnnotationRecord(
        benchmark_id=row["benchmark_id"],
        item_id=row["item_id"],
        chunk_id=row["chunk_id"],
        is_sd=row["is_sd"],
        confidence=row["confidence"],
        match_type=row["match_type"],
        reasoning=row.get("reasoning", ""),
        annotator_tag=row.get("annotator_tag", ""),
    )


def parse_annotation_response(
    raw,
    pair_id: PairId,
    match_types: Sequence[str] = BASE_MATCH_TYPES,
    annotator_tag: str = "",
) -> AnnotationRecord:
    """Validate one judge response into a record, or raise.

    Malformed JSON / missing fields -> MalformedResponse; out-of-range
    confidence or unknown match_type -> InvalidResponse; an is_sd=true verdict
    whose match_type is not a duplicate type -> InconsistentResponse. The raw
    response rides along on the exception for the failure ledger.
    """
    if isinstance(raw, (str, bytes)):
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise MalformedResponse(f"response is not JSON: {exc}", raw=raw) from exc
    else:
        doc = raw
    if not isinstance(doc, Mapping):
        raise MalformedResponse("response is not an object", raw=raw)
    missing = [k for k in ("is_sd", "confidence", "match_type") if k not in doc]
    if missing:
        raise MalformedResponse(f"missing fields: {', '.join(missing)}", raw=doc)

    is_sd = doc["is_sd"]
    if not isinstance(is_sd, bool):
        raise InvalidResponse(f"is_sd must be boolean, got {is_sd!r}", raw=doc)
    confidence = doc["confidence"]
    if not isinstance(confidence, (int, float)) or isinstance(confidence, bool):
        raise InvalidResponse(f"confidence must be numeric, got {confidence!r}", raw=doc)
    confidence = float(confidence)
    if not 0.0 <= confidence <= 1.0:
        raise InvalidResponse(f"confidence out of range: {confidence}", raw=doc)
    match_type = doc["match_type"]
    if match_type not in match_types:
        raise InvalidResponse(f"unknown match_type: {match_type!r}", raw=doc)
    if is_sd and match_type not in DUPLICATE_MATCH_TYPES:
        raise InconsistentResponse(
            f"is_sd=true with non-duplicate match_type {match_type!r}", raw=doc
        )
    reasoning = doc.get("reasoning", "")
    if not isinstance(reasoning, str):
        raise InvalidResponse("reasoning must be a string", raw=doc)
    return AnnotationRecord(
        benchmark_id=pair_id[0],
        item_id=pair_id[1],
        chunk_id=pair_id[2],
        is_sd=is_sd,
        confidence=confidence,
        match_type=match_type,
        reasoning=reasoning,
        annotator_tag=annotator_tag,
    )


class HttpJudge:
    """Generic HTTP judge adapter: POST prompt + params, receive the verdict JSON."""

    def __init__(
        self,
        endpoint: str,
        timeout: float = 120.0,
        api_key_env: str = "CONTAMKIT_API_KEY",
        tag: str = "http-judge",
    ):
        if not endpoint:
            raise ValueError("HttpJudge requires an endpoint")
        self.endpoint = endpoint
        self.timeout = timeout
        self.api_key_env = api_key_env
        self.tag = tag

    def annotate(self, request: AnnotationRequest):
        headers = {}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = {
            "prompt": request.prompt,
            "temperature": request.params.temperature,
            "max_output_tokens": request.params.max_output_tokens,
            "thinking_level": request.params.thinking_level,
        }
        try:
            resp = requests.post(
                self.endpoint, json=payload, headers=headers, timeout=self.timeout
            )
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise TransientJudgeError(str(exc)) from exc
        if resp.status_code >= 500 or resp.status_code == 429:
            raise TransientJudgeError(f"server error {resp.status_code}")
        if resp.status_code >= 400:
            raise PermanentJudgeError(f"request rejected: {resp.status_code} {resp.text[:200]}")
        return resp.json()


class CallbackJudge:
    """Wrap a plain function (request -> verdict dict) as a judge."""

    def __init__(self, fn: Callable[[AnnotationRequest], Mapping], tag: str = "callback"):
        self.fn = fn
        self.tag = tag

    def annotate(self, request: AnnotationRequest):
        return self.fn(request)


@dataclass
class AnnotationRunResult:
    records: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    skipped: int = 0
    provider_failures: int = 0


def load_ledger(path: str | Path) -> dict[PairId, AnnotationRecord]:
    """Read existing records keyed by pair id; missing file means empty ledger."""
    ledger: dict[PairId, AnnotationRecord] = {}
    if not Path(path).exists():
        return ledger
    for row in read_jsonl(path):
        record = record_from_row(row)
        ledger[record.pair_id] = record
    return ledger


def annotate_pairs(
    pairs: Iterable[tuple[PairId, str, str]],
    judge,
    template: PromptTemplate,
    records_path: str | Path,
    failures_path: str | Path | None = None,
    concurrency: int = 4,
    max_retries: int = 3,
    backoff: float = 0.5,
    sleep=time.sleep,
) -> AnnotationRunResult:
    """Annotate (pair_id, test_text, corpus_text) triples with bounded fan-out.

    Records append to `records_path` as they complete; pairs already present
    there are skipped, so rerunning after an interruption is idempotent. The
    failure ledger is rewritten each run (failed pairs get retried on resume).
    After a completed run every input pair has exactly one entry across
    records + failures.
    """
    if concurrency < 1:
        raise ValueError("concurrency must be >= 1")
    existing = load_ledger(records_path)
    result = AnnotationRunResult()
    pending = []
    for pair_id, test_text, corpus_text in pairs:
        if tuple(pair_id) in existing:
            result.skipped += 1
        else:
            pending.append((tuple(pair_id), test_text, corpus_text))

    annotator_tag = getattr(judge, "tag", judge.__class__.__name__)
    write_lock = threading.Lock()

    def call_one(pair_id: PairId, test_text: str, corpus_text: str):
        request = build_annotation_request(pair_id, test_text, corpus_text, template)
        attempt = 0
        while True:
            try:
                raw = judge.annotate(request)
                break
            except TransientJudgeError as exc:
                attempt += 1
                if attempt > max_retries:
                    raise PermanentJudgeError(
                        f"judge failed after {max_retries} retries: {exc}"
                    ) from exc
                sleep(backoff * (2 ** (attempt - 1)))
        return parse_annotation_response(
            raw, pair_id, match_types=template.match_types, annotator_tag=annotator_tag
        )

    with open(records_path, "a", encoding="utf-8") as records_fh:
        def handle(pair, outcome, error):
            pair_id = pair[0]
            if error is None:
                with write_lock:
                    records_fh.write(
                        json.dumps(outcome.to_row(), sort_keys=True, ensure_ascii=False) + "\n"
                    )
                    records_fh.flush()
                result.records.append(outcome)
            else:
                entry = {
                    "benchmark_id": pair_id[0],
                    "item_id": pair_id[1],
                    "chunk_id": pair_id[2],
                    "reason": str(error),
                    "kind": error.__class__.__name__,
                }
                if isinstance(error, AnnotationError) and error.raw is not None:
                    entry["raw"] = error.raw if isinstance(error.raw, (dict, str)) else str(error.raw)
                if isinstance(error, PermanentJudgeError):
                    result.provider_failures += 1
                result.failures.append(entry)

        if concurrency == 1:
            for pair in pending:
                try:
                    record = call_one(*pair)
                    handle(pair, record, None)
                except (AnnotationError, PermanentJudgeError) as exc:
                    handle(pair, None, exc)
        else:
            with ThreadPoolExecutor(max_workers=concurrency) as pool:
                futures = {pool.submit(call_one, *pair): pair for pair in pending}
                for future in as_completed(futures):
                    pair = futures[future]
                    try:
                        handle(pair, future.result(), None)
                    except (AnnotationError, PermanentJudgeError) as exc:
                        handle(pair, None, exc)

    if failures_path is not None:
        with open(failures_path, "w", encoding="utf-8") as fh:
            for entry in result.failures:
                fh.write(json.dumps(entry, sort_keys=True, ensure_ascii=False) + "\n")
    return result


def export_requests(
    pairs: Iterable[tuple[PairId, str, str]],
    template: PromptTemplate,
    path: str | Path,
    skip: Mapping[PairId, AnnotationRecord] | None = None,
) -> int:
    """Offline mode, step 1: write request documents for an external annotator."""
    skip = skip or {}
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for pair_id, test_text, corpus_text in pairs:
            if tuple(pair_id) in skip:
                continue
            request = build_annotation_request(tuple(pair_id), test_text, corpus_text, template)
            fh.write(
                json.dumps(
                    {
                        "benchmark_id": pair_id[0],
                        "item_id": pair_id[1],
                        "chunk_id": pair_id[2],
                        "prompt": request.prompt,
                        "params": asdict(request.params),
                        "template": template.name,
                    },
                    sort_keys=True,
                    ensure_ascii=False,
                )
                + "\n"
            )
            n += 1
    return n


def import_responses(
    path: str | Path,
    template: PromptTemplate,
    records_path: str | Path,
    failures_path: str | Path | None = None,
    annotator_tag: str = "offline",
) -> AnnotationRunResult:
    """Offline mode, step 2: validate completed responses into the ledger.

    Input rows carry the pair fields plus a `response` object. Validation and
    resume behavior match the online path.
    """
    existing = load_ledger(records_path)
    result = AnnotationRunResult()
    with open(records_path, "a", encoding="utf-8") as records_fh:
        for row in read_jsonl(path):
            pair_id = (row["benchmark_id"], row["item_id"], row["chunk_id"])
            if pair_id in existing:
                result.skipped += 1
                continue
            try:
                record = parse_annotation_response(
                    row.get("response"),
                    pair_id,
                    match_types=template.match_types,
                    annotator_tag=annotator_tag,
                )
            except AnnotationError as exc:
                result.failures.append(
                    {
                        "benchmark_id": pair_id[0],
                        "item_id": pair_id[1],
                        "chunk_id": pair_id[2],
                        "reason": exc.reason,
                        "kind": exc.__class__.__name__,
                    }
                )
                continue
            records_fh.write(
                json.dumps(record.to_row(), sort_keys=True, ensure_ascii=False) + "\n"
            )
            result.records.append(record)
    if failures_path is not None:
        with open(failures_path, "w", encoding="utf-8") as fh:
            for entry in result.failures:
                fh.write(json.dumps(entry, sort_keys=True, ensure_ascii=False) + "\n")
    return result
