"""Synthetic semantic duplicates: puzzle transforms, substitution plans, validation.

Programmatic transforms (clue shuffling, substitution application) run
offline; LLM-driven transforms (paraphrase, substitution-plan generation,
cohesive substitution application) only build request documents here, and
their outputs re-enter through validate_variant.
"""
from __future__ import annotations

import json
import random
import re
import subprocess
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .metrics import MetricVector, gestalt_ratio, metric_vector

TRANSFORM_ORDER = {"shuffle": 0, "substitute": 1, "paraphrase": 2}


class PuzzleParseError(ValueError):
    pass


class AmbiguousPlanError(ValueError):
    pass


class PlanError(ValueError):
    pass


class ChainOrderError(ValueError):
    pass


@dataclass(frozen=True)
class ClueGrammar:
    """Surface form of a numbered clue line, configurable per benchmark profile."""

    pattern: re.Pattern = re.compile(r"^(\s*)(\d+)([.)])(\s+)(.*)$")


DEFAULT_GRAMMAR = ClueGrammar()


@dataclass(frozen=True)
class Clue:
    number: int
    text: str
    lead: str = ""
    sep: str = "."
    gap: str = " "

    def render(self, number: int | None = None) -> str:
        n = self.number if number is None else number
        return f"{self.lead}{n}{self.sep}{self.gap}{self.text}"


@dataclass(frozen=True)
class PuzzleDocument:
    """Preamble lines, a numbered clue block, and trailer lines."""

    preamble: tuple[str, ...]
    clues: tuple[Clue, ...]
    trailer: tuple[str, ...]


def parse_puzzle(text: str, grammar: ClueGrammar = DEFAULT_GRAMMAR) -> PuzzleDocument:
    """Split text around its first run of consecutive numbered clue lines.

    Clue numbers must be 1..n consecutive. A numbered line is one clue; the
    first non-matching line after the block starts the trailer.
    """
    lines = text.split("\n")
    first = None
    for i, line in enumerate(lines):
        if grammar.pattern.match(line):
            first = i
            break
    if first is None:
        raise PuzzleParseError("no numbered clue list found")
    clues: list[Clue] = []
    end = first
    for line in lines[first:]:
        m = grammar.pattern.match(line)
        if not m:
            break
        lead, number, sep, gap, body = m.groups()
        clues.append(Clue(number=int(number), text=body, lead=lead, sep=sep, gap=gap))
        end += 1
    numbers = [c.number for c in clues]
    if numbers != list(range(1, len(clues) + 1)):
        raise PuzzleParseError(f"clue numbers not sequential from 1: {numbers}")
    return PuzzleDocument(
        preamble=tuple(lines[:first]),
        clues=tuple(clues),
        trailer=tuple(lines[end:]),
    )


def render_puzzle(doc: PuzzleDocument) -> str:
    """Inverse of parse_puzzle: an unshuffled document renders byte-identically."""
    lines = list(doc.preamble) + [c.render() for c in doc.clues] + list(doc.trailer)
    return "\n".join(lines)


def shuffle_clues(doc: PuzzleDocument, rng: random.Random) -> PuzzleDocument:
    """Uniformly permute clue texts and renumber 1..n in place.

    Line formatting (indentation, separator style) stays with each position
    so the document keeps its shape; preamble and trailer are untouched.
    """
    bodies = [c.text for c in doc.clues]
    shuffled = rng.sample(bodies, len(bodies))
    new_clues = tuple(
        Clue(number=i, text=body, lead=c.lead, sep=c.sep, gap=c.gap)
        for i, (body, c) in enumerate(zip(shuffled, doc.clues), start=1)
    )
    return PuzzleDocument(preamble=doc.preamble, clues=new_clues, trailer=doc.trailer)


@dataclass(frozen=True)
class CategorySubstitution:
    new_category: str
    values: dict[str, str]


@dataclass(frozen=True)
class SubstitutionPlan:
    """Per-category renames plus 1-to-1 value mappings.

    The flattened replacement map (categories and values together) must be
    injective, and no replacement target may equal any source: otherwise the
    plan is not invertible.
    """

    categories: dict[str, CategorySubstitution]

    def __post_init__(self) -> None:
        mapping = self.replacement_map()
        sources = set(mapping)
        targets = list(mapping.values())
        if len(set(targets)) != len(targets):
            dupes = sorted(t for t, n in Counter(targets).items() if n > 1)
            raise PlanError(f"plan is not injective: repeated targets {dupes}")
        overlap = sources & set(targets)
        if overlap:
            raise PlanError(f"plan targets collide with sources: {sorted(overlap)}")

    def replacement_map(self) -> dict[str, str]:
        mapping: dict[str, str] = {}
        for old_category, sub in self.categories.items():
            mapping[old_category] = sub.new_category
            mapping.update(sub.values)
        return mapping

    def inverse(self) -> "SubstitutionPlan":
        return SubstitutionPlan(
            categories={
                sub.new_category: CategorySubstitution(
                    new_category=old_category,
                    values={new: old for old, new in sub.values.items()},
                )
                for old_category, sub in self.categories.items()
            }
        )

    def to_dict(self) -> dict:
        return {
            "substitution_plan": {
                old: {"new_category": sub.new_category, "values": dict(sub.values)}
                for old, sub in self.categories.items()
            }
        }


def plan_from_dict(doc: Mapping) -> SubstitutionPlan:
    body = doc.get("substitution_plan", doc)
    categories = {}
    for old_category, sub in body.items():
        categories[old_category] = CategorySubstitution(
            new_category=sub["new_category"], values=dict(sub["values"])
        )
    return SubstitutionPlan(categories=categories)


def _is_word_char(ch: str) -> bool:
    return ch.isalnum()


def _boundary_ok(text: str, start: int, end: int) -> bool:
    """A match is whole-word iff alphanumeric runs do not continue across its edges."""
    if start > 0 and _is_word_char(text[start - 1]) and _is_word_char(text[start]):
        return False
    if end < len(text) and _is_word_char(text[end - 1]) and _is_word_char(text[end]):
        return False
    return True


def _substitute(text: str, mapping: Mapping[str, str]) -> str:
    """Longest-match-first, boundary-aware, single pass (output never rescanned).

    At each candidate position the longest key that matches AND sits on word
    boundaries wins; shorter keys are tried before giving up on the position.
    """
    keys = sorted((k for k in mapping if k), key=len, reverse=True)
    if not keys:
        return text
    pattern = re.compile("|".join(re.escape(k) for k in keys))
    out: list[str] = []
    pos = 0
    while pos < len(text):
        m = pattern.search(text, pos)
        if m is None:
            out.append(text[pos:])
            break
        start = m.start()
        out.append(text[pos:start])
        for key in keys:
            if text.startswith(key, start) and _boundary_ok(text, start, start + len(key)):
                out.append(mapping[key])
                pos = start + len(key)
                break
        else:
            out.append(text[start])
            pos = start + 1
    return "".join(out)


def _find_whole_word(text: str, token: str) -> bool:
    for m in re.finditer(re.escape(token), text):
        if _boundary_ok(text, m.start(), m.end()):
            return True
    return False


def apply_substitution_plan(text: str, plan: SubstitutionPlan) -> str:
    """Replace every category name and value per the plan.

    Raises AmbiguousPlanError when a replacement target already occurs in the
    input as a whole word: the result could not be inverted unambiguously.
    """
    mapping = plan.replacement_map()
    colliding = sorted(t for t in set(mapping.values()) if t and _find_whole_word(text, t))
    if colliding:
        raise AmbiguousPlanError(
            f"ambiguous plan: replacement targets already present in text: {colliding}"
        )
    return _substitute(text, mapping)


def map_solution(solution, plan: SubstitutionPlan):
    """Transform a solution structure by the plan's exact-string lookup.

    Dict keys and string leaves that equal a category or value are replaced;
    everything else passes through untouched.
    """
    mapping = plan.replacement_map()

    def walk(node):
        if isinstance(node, Mapping):
            return {walk(k): walk(v) for k, v in node.items()}
        if isinstance(node, (list, tuple)):
            mapped = [walk(x) for x in node]
            return mapped if isinstance(node, list) else tuple(mapped)
        if isinstance(node, str):
            return mapping.get(node, node)
        return node

    return walk(solution)


def validate_chain(chain: Sequence[str]) -> tuple[str, ...]:
    """Enforce the transform ordering rule: shuffle first, paraphrase last.

    Chains must be subsets of {shuffle, substitute, paraphrase} in strictly
    increasing rule order (no repeats).
    """
    chain = tuple(chain)
    for name in chain:
        if name not in TRANSFORM_ORDER:
            raise ChainOrderError(f"unknown transform: {name!r}")
    ranks = [TRANSFORM_ORDER[name] for name in chain]
    if any(b <= a for a, b in zip(ranks, ranks[1:])):
        raise ChainOrderError(
            f"chain {list(chain)} violates ordering (shuffle first, paraphrase last)"
        )
    return chain


@dataclass(frozen=True)
class DuplicateVariant:
    original_id: str
    chain: tuple[str, ...]
    text: str
    metrics: MetricVector | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "chain", validate_chain(self.chain))

    def to_row(self) -> dict:
        return {
            "original_id": self.original_id,
            "chain": list(self.chain),
            "text": self.text,
            "metrics": self.metrics.to_row() if self.metrics else None,
        }


def variant_from_row(row: dict) -> DuplicateVariant:
    metrics = row.get("metrics")
    return DuplicateVariant(
        original_id=row["original_id"],
        chain=tuple(row["chain"]),
        text=row["text"],
        metrics=MetricVector(**metrics) if metrics else None,
    )


@dataclass(frozen=True)
class TransformPrompt:
    system: str
    user: str


_PARAPHRASE_PROMPT = TransformPrompt(
    system=(
        "You are an expert editor tasked with rewriting logic grid puzzles while "
        "exactly preserving the logical structure and semantics."
    ),
    user="""Rewrite the following logic puzzle to express the exact same conditions in different words or with different word order etc. while exactly preserving the logical structure and semantics.

Original Puzzle:
{puzzle}

REQUIREMENTS:
1. Reformulate both the task description and every numbered condition.
2. You may change word order, use synonyms, and alter sentence structure.
3. PRESERVE the strict logical meaning. For example, "A is next to B" must remain logically equivalent (e.g., "B is adjacent to A").
4. PRESERVE all entity names, values, numbers, and categories EXACTLY. Do not change "Red" to "Crimson" or "John" to "Jon". The specific terms used for the puzzle items MUST remain identical to match the solution exactly.
5. The output must be natural, clear, and readable. Avoid contrived or unnatural constructions.
6. Maintain the formatting of the puzzle, including the format and numbering of the list of clues.
7. Do not start your response with a header or a preamble. Start with a naturally flowing puzzle statement in a very similar style and format as the original.

Output ONLY the rewritten puzzle text.""",
)

_SUBSTITUTION_PLAN_PROMPT = TransformPrompt(
    system=(
        "You are a helpful assistant that creates substitution plans for logic puzzles.\n"
        "Your goal is to transform the puzzle by changing BOTH the categories and their "
        "values to new domains."
    ),
    user="""Create a substitution plan to transform this logic grid puzzle.
1. Identify all categories (e.g., Color, Drink, Pet).
2. Assign a NEW category to each (e.g., Color -> Shape, Drink -> Snack, Pet -> Book).
3. Map every existing value to a new value appropriate for the new category.

Original Puzzle:
{puzzle}

Original Solution:
{solution_json}

REQUIREMENTS:
1. Change the categories to natural, distinct alternatives (e.g., colors -> shapes, flowers -> animals).
2. Keep the new categories and values DISTINCT from all of the original ones. Avoid number categories (to avoid confusion with the numbering of the puzzle).
3. Ensure 1-to-1 mapping for all values.
4. Do NOT use obscure or unusual categories. Stick to common categories like colors, animals, shapes, countries, etc. Choose natural categories and values within the flow of the puzzle wording.

Output ONLY a JSON object with this structure:
{
  "substitution_plan": {
    "OriginalCategoryName": {
      "new_category": "NewCategoryName",
      "values": {
        "OldValue1": "NewValue1",
        "OldValue2": "NewValue2"
      }
    },
    ...
  }
}""",
)

_SUBSTITUTION_APPLY_PROMPT = TransformPrompt(
    system=(
        "You are a helpful assistant that rewrites logic puzzles based on a substitution "
        "plan.\nYou must replace categories and values exactly according to the plan while "
        "PRESERVING the puzzle structure, logic, and clues EXACTLY."
    ),
    user="""Rewrite this logic puzzle by applying the following substitution plan.
Replace ALL occurrences of the old categories and values with their corresponding new ones.

Substitution Plan:
{plan_json}

Original Puzzle:
{puzzle}

CRITICAL INSTRUCTIONS:
1. Replace old categories (e.g., "Color") with new categories (e.g., "Shape").
2. Replace old values (e.g., "Red") with new values (e.g., "Square").
3. Do NOT change the logic, clues, or structure.
4. Keep the puzzle wording identical as much as possible, only make minor syntactic adjustments where necessary to preserve the flow and meaning of the puzzle wording.
5. Keep the numbering and formatting identical.
6. Output ONLY the rewritten puzzle text.""",
)

PROMPT_LIBRARY: dict[str, TransformPrompt] = {
    "paraphrase": _PARAPHRASE_PROMPT,
    "substitution-plan": _SUBSTITUTION_PLAN_PROMPT,
    "substitution-apply": _SUBSTITUTION_APPLY_PROMPT,
}

_PROMPT_SLOT = re.compile(r"\{(puzzle|solution_json|plan_json)\}")


def build_transform_prompt(
    kind: str,
    puzzle_text: str,
    solution=None,
    plan: SubstitutionPlan | None = None,
    library: Mapping[str, TransformPrompt] = PROMPT_LIBRARY,
) -> dict:
    """Fill the matching template into a request document.

    Generation itself is delegated to an external generator; this only builds
    {"kind", "system", "user"} documents. Slot filling is single-pass, so
    braces inside puzzle text or JSON payloads are never re-interpreted.
    """
    if kind not in library:
        raise ValueError(f"unknown transform prompt kind: {kind!r}")
    template = library[kind]
    values = {"puzzle": puzzle_text}
    if kind == "substitution-plan":
        if solution is None:
            raise ValueError("substitution-plan prompt requires the solution")
        values["solution_json"] = json.dumps(solution, sort_keys=True, ensure_ascii=False)
    if kind == "substitution-apply":
        if plan is None:
            raise ValueError("substitution-apply prompt requires a plan")
        values["plan_json"] = json.dumps(plan.to_dict(), sort_keys=True, ensure_ascii=False)
    user = _PROMPT_SLOT.sub(lambda m: values.get(m.group(1), m.group(0)), template.user)
    return {"kind": kind, "system": template.system, "user": user}


@dataclass
class ValidationOutcome:
    accepted: bool
    reasons: list[str] = field(default_factory=list)
    metrics: MetricVector | None = None


def validate_variant(
    variant_text: str,
    original_text: str,
    sibling_texts: Sequence[str] = (),
    chain: Sequence[str] = (),
    plan: SubstitutionPlan | None = None,
    original_solution=None,
    variant_solution=None,
    max_gestalt: float = 0.85,
    grammar: ClueGrammar = DEFAULT_GRAMMAR,
) -> ValidationOutcome:
    """Accept or reject one generated variant.

    Rejects when the character gestalt ratio against the original or any
    sibling reaches max_gestalt. For purely programmatic chains (no
    paraphrase) the structural invariants are checked too: the clue multiset
    must survive the transform (under the inverse plan when substituting) and
    the solution must map exactly through the plan.
    """
    reasons: list[str] = []
    ratio = gestalt_ratio(variant_text, original_text)
    if ratio >= max_gestalt:
        reasons.append(f"gestalt vs original {ratio:.3f} >= {max_gestalt}")
    for i, sibling in enumerate(sibling_texts):
        sibling_ratio = gestalt_ratio(variant_text, sibling)
        if sibling_ratio >= max_gestalt:
            reasons.append(f"gestalt vs sibling {i} {sibling_ratio:.3f} >= {max_gestalt}")

    chain = validate_chain(chain) if chain else ()
    if chain and "paraphrase" not in chain:
        # Text-level structure survives programmatic transforms exactly.
        try:
            effective = variant_text
            if "substitute" in chain:
                if plan is None:
                    reasons.append("substitution chain without a plan")
                else:
                    effective = _substitute(effective, plan.inverse().replacement_map())
            original_doc = parse_puzzle(original_text, grammar)
            variant_doc = parse_puzzle(effective, grammar)
            if Counter(c.text for c in original_doc.clues) != Counter(
                c.text for c in variant_doc.clues
            ):
                reasons.append("clue multiset changed under transform")
        except PuzzleParseError as exc:
            reasons.append(f"structural check failed: {exc}")
    if chain and original_solution is not None and variant_solution is not None:
        if "substitute" in chain:
            if plan is None:
                reasons.append("substitution chain without a plan for the solution check")
            elif map_solution(original_solution, plan) != variant_solution:
                reasons.append("solution does not map through the plan")
        elif original_solution != variant_solution:
            reasons.append("solution changed by a solution-preserving transform")

    return ValidationOutcome(
        accepted=not reasons,
        reasons=reasons,
        metrics=metric_vector(variant_text, original_text),
    )


def run_solution_hook(command: Sequence[str], record: Mapping, timeout: float = 60.0) -> bool:
    """Shell out to a user-supplied runner to validate a code variant.

    The record is passed as JSON on stdin; exit status 0 means pass. Execution
    sandboxes are the runner's responsibility, not ours.
    """
    proc = subprocess.run(
        list(command),
        input=json.dumps(record, sort_keys=True).encode("utf-8"),
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        timeout=timeout,
    )
    return proc.returncode == 0
