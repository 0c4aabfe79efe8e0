"""Lexical similarity metrics used to characterize candidate duplicate pairs.

All fractional metrics live in [0, 1]. Token = maximal whitespace run;
character-level similarity is the Ratcliff/Obershelp gestalt ratio (the
quantity difflib.SequenceMatcher computes, junk heuristics disabled).
"""
from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass
from difflib import SequenceMatcher

_WS = re.compile(r"\s+")


@dataclass(frozen=True)
class NormalizationConfig:
    """Text canonicalization applied before exact-duplicate checks."""

    nfc: bool = True
    lowercase: bool = False
    collapse_whitespace: bool = True
    strip: bool = True
    # When set, a normalized text contained within the other also counts as
    # an exact duplicate.
    containment: bool = False


DEFAULT_NORMALIZATION = NormalizationConfig()


def normalize_text(text: str, cfg: NormalizationConfig = DEFAULT_NORMALIZATION) -> str:
    if cfg.nfc:
        text = unicodedata.normalize("NFC", text)
    if cfg.lowercase:
        text = text.lower()
    if cfg.collapse_whitespace:
        text = _WS.sub(" ", text)
    if cfg.strip:
        text = text.strip()
    return text


def is_exact_duplicate(a: str, b: str, cfg: NormalizationConfig = DEFAULT_NORMALIZATION) -> bool:
    """Normalized equality; containment also qualifies when the flag is set."""
    na, nb = normalize_text(a, cfg), normalize_text(b, cfg)
    if na == nb:
        return True
    if cfg.containment and na and nb:
        return na in nb or nb in na
    return False


def _ngrams(tokens: list[str], n: int) -> set[tuple[str, ...]]:
    return {tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)}


def ngram_overlap(a: str, b: str, n: int, denominator: str = "min") -> float:
    """|shared token n-grams| over the smaller set (or the union).

    Either side having no n-grams (text shorter than n tokens) gives 0.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if denominator not in ("min", "union"):
        raise ValueError(f"unknown denominator: {denominator!r}")
    grams_a = _ngrams(a.split(), n)
    grams_b = _ngrams(b.split(), n)
    if not grams_a or not grams_b:
        return 0.0
    shared = len(grams_a & grams_b)
    if denominator == "union":
        return shared / len(grams_a | grams_b)
    return shared / max(1, min(len(grams_a), len(grams_b)))


def lcs_length(a: list[str], b: list[str]) -> int:
    """Longest common subsequence length, two-row dynamic program."""
    if not a or not b:
        return 0
    if len(b) > len(a):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l_f(a: str, b: str) -> float:
    """LCS-based F measure over tokens: 2PR/(P+R), P = LCS/|b|, R = LCS/|a|."""
    tokens_a, tokens_b = a.split(), b.split()
    if not tokens_a or not tokens_b:
        return 0.0
    lcs = lcs_length(tokens_a, tokens_b)
    if lcs == 0:
        return 0.0
    precision = lcs / len(tokens_b)
    recall = lcs / len(tokens_a)
    return 2 * precision * recall / (precision + recall)


def jaccard_tokens(a: str, b: str) -> float:
    """Token-set Jaccard; two empty sets count as identical (1.0)."""
    set_a, set_b = set(a.split()), set(b.split())
    if not set_a and not set_b:
        return 1.0
    union = set_a | set_b
    if not union:
        return 1.0
    return len(set_a & set_b) / len(union)


def gestalt_ratio(a: str, b: str) -> float:
    """Character-level gestalt ratio: 2*matches/(len(a)+len(b)).

    Matches are counted by recursive longest-common-substring decomposition;
    autojunk is off so long inputs are not subject to the popularity
    heuristic. Note the measure is only approximately symmetric.
    """
    if not a and not b:
        return 1.0
    return SequenceMatcher(None, a, b, autojunk=False).ratio()


@dataclass(frozen=True)
class MetricVector:
    """All pairwise metrics for one (benchmark text, corpus text) pair."""

    ngram2: float
    ngram3: float
    rouge_l_f: float
    jaccard: float
    gestalt: float
    exact: bool

    def to_row(self) -> dict:
        return {
            "ngram2": self.ngram2,
            "ngram3": self.ngram3,
            "rouge_l_f": self.rouge_l_f,
            "jaccard": self.jaccard,
            "gestalt": self.gestalt,
            "exact": self.exact,
        }


def metric_vector(
    a: str,
    b: str,
    norm: NormalizationConfig = DEFAULT_NORMALIZATION,
    denominator: str = "min",
) -> MetricVector:
    """Compute every metric over the normalized pair.

    Normalizing first keeps the vector self-consistent: exact=True implies
    the normalized strings are identical, and identical strings score 1 on
    every fractional field (including texts too short to carry n-grams).
    The exact field uses pure equality (containment never applies here).
    """
    na = normalize_text(a, norm)
    nb = normalize_text(b, norm)
    if na == nb:
        return MetricVector(1.0, 1.0, 1.0, 1.0, 1.0, exact=True)
    return MetricVector(
        ngram2=ngram_overlap(na, nb, 2, denominator),
        ngram3=ngram_overlap(na, nb, 3, denominator),
        rouge_l_f=rouge_l_f(na, nb),
        jaccard=jaccard_tokens(na, nb),
        gestalt=gestalt_ratio(na, nb),
        exact=na == nb,
    )
