"""Feature extraction for (session context, suggested query) pairs.

Ten features per candidate, in a fixed order that doubles as the model
fingerprint.  The two personalised scores are negated Jensen-Shannon
similarities and live in [-ln 2, 0]; when a profile or the suggestion's
topic distribution is unavailable they take the sentinel -1.0, which lies
strictly outside the valid range so trees can isolate "missing" cleanly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .corpus_index import tokenize
from .log_model import normalize_query
from .profiles import profile_similarity

FEATURE_NAMES: tuple[str, ...] = (
    "ClickPersonalisedScore",
    "QueryPersonalisedScore",
    "QueryRank",
    "QuerySim",
    "QueryNo",
    "SuggestedQueryCosine",
    "SuggestedQueryJaccard",
    "SuggestedQueryEdit",
    "SuggestedQueryLevenshtein",
    "SuggestedQueryPreUsed",
)

MISSING_PROFILE_SCORE = -1.0


def cosine_sim(a_text: str, b_text: str) -> float:
    """Cosine of the term-frequency vectors of the two strings."""
    a_tokens = tokenize(a_text)
    b_tokens = tokenize(b_text)
    if not a_tokens or not b_tokens:
        return 0.0
    a_counts: dict[str, int] = {}
    b_counts: dict[str, int] = {}
    for t in a_tokens:
        a_counts[t] = a_counts.get(t, 0) + 1
    for t in b_tokens:
        b_counts[t] = b_counts.get(t, 0) + 1
    dot = sum(c * b_counts.get(t, 0) for t, c in a_counts.items())
    norm_a = sum(c * c for c in a_counts.values()) ** 0.5
    norm_b = sum(c * c for c in b_counts.values()) ** 0.5
    return dot / (norm_a * norm_b)


def jaccard(a_text: str, b_text: str) -> float:
    """Token-set overlap |A ∩ B| / |A ∪ B|; 0 when both are empty."""
    a = set(tokenize(a_text))
    b = set(tokenize(b_text))
    union = a | b
    if not union:
        return 0.0
    return len(a & b) / len(union)


def _levenshtein(a: list | str, b: list | str) -> int:
    # Two-row DP, unit costs for insert/delete/substitute.
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, item_a in enumerate(a, 1):
        current = [i]
        for j, item_b in enumerate(b, 1):
            cost = 0 if item_a == item_b else 1
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost))
        previous = current
    return previous[-1]


def word_edit_distance(a_text: str, b_text: str) -> int:
    """Levenshtein distance over whole words."""
    return _levenshtein(tokenize(a_text), tokenize(b_text))


def char_levenshtein(a_text: str, b_text: str) -> int:
    """Levenshtein distance over characters of the normalized strings."""
    return _levenshtein(normalize_query(a_text), normalize_query(b_text))


@dataclass(frozen=True)
class SuggestionContext:
    """Everything about the session needed to score one suggestion list.

    ``query_no`` counts queries submitted so far in the session, current
    included.  ``used_queries`` holds normalized texts of the queries
    submitted before the current one.
    """

    current_query: str
    previous_query: Optional[str]
    query_no: int
    used_queries: frozenset[str]
    click_profile: Optional[np.ndarray]
    query_profile: Optional[np.ndarray]

    def __post_init__(self) -> None:
        if self.query_no < 1:
            raise ValueError("query_no counts the current query, so it is >= 1")


def extract_features(
    context: SuggestionContext,
    suggestion_text: str,
    base_rank: int,
    suggestion_dist: Optional[np.ndarray] = None,
) -> np.ndarray:
    """The ten-feature vector for one candidate, in FEATURE_NAMES order."""
    if base_rank < 1:
        raise ValueError("base_rank is 1-based")

    if context.click_profile is None or suggestion_dist is None:
        click_score = MISSING_PROFILE_SCORE
    else:
        click_score = profile_similarity(suggestion_dist, context.click_profile)
    if context.query_profile is None or suggestion_dist is None:
        query_score = MISSING_PROFILE_SCORE
    else:
        query_score = profile_similarity(suggestion_dist, context.query_profile)

    if context.previous_query is None:
        query_sim = 0.0
    else:
        query_sim = cosine_sim(context.current_query, context.previous_query)

    pre_used = float(normalize_query(suggestion_text) in context.used_queries)

    return np.array(
        [
            click_score,
            query_score,
            float(base_rank),
            query_sim,
            float(context.query_no),
            cosine_sim(context.current_query, suggestion_text),
            jaccard(context.current_query, suggestion_text),
            float(word_edit_distance(context.current_query, suggestion_text)),
            float(char_levenshtein(context.current_query, suggestion_text)),
            pre_used,
        ],
        dtype=np.float64,
    )


def write_feature_matrix(
    path: str | Path,
    rows: Iterable[tuple[str, int, np.ndarray]],
) -> None:
    """Dump (impression id, label, features) rows as CSV for inspection."""
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("impression_id,label," + ",".join(FEATURE_NAMES) + "\n")
        for impression_id, label, vector in rows:
            values = ",".join(repr(float(v)) for v in vector)
            handle.write(f"{impression_id},{label},{values}\n")
