"""Turning sessions into labelled, feature-extracted impressions.

For every query event with a click-validated refinement we generate the
base suggestion list, optionally union in the observed refinement (capped
at the list size, reported per week), label the candidates, build the two
temporal profiles from the pre-query session state, and extract the
feature matrix.  The query profile covers the queries submitted so far
including the current one (most recent first); the click profile covers
the clicks strictly before the current query.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .. import base_suggester, log_model
from ..corpus_index import InvertedIndex, tokenize
from ..eval_harness import PreparedImpression, WeekKey
from ..features import SuggestionContext, extract_features
from ..log_model import SearchSession, normalize_query
from ..profiles import (
    DecayParams,
    ProfileUnavailable,
    build_click_profile,
    build_query_profile,
    query_topic_dist,
)


def iso_week(timestamp) -> WeekKey:
    cal = timestamp.isocalendar()
    return (cal[0], cal[1])


@dataclass
class ReplayArtifacts:
    """Everything the replay needs besides the sessions themselves."""

    index: InvertedIndex
    doc_topics: Mapping[str, np.ndarray]
    hierarchy: base_suggester.ConceptHierarchy
    decay: DecayParams
    list_size: int = 10
    union_refinement: bool = True
    _query_dist_cache: dict[str, Optional[np.ndarray]] = field(default_factory=dict)

    def query_dist(self, text: str) -> Optional[np.ndarray]:
        key = normalize_query(text)
        if key not in self._query_dist_cache:
            self._query_dist_cache[key] = query_topic_dist(key, self.index, self.doc_topics)
        return self._query_dist_cache[key]


@dataclass
class ReplayStats:
    prepared_by_week: dict[WeekKey, int] = field(default_factory=dict)
    injected_by_week: dict[WeekKey, int] = field(default_factory=dict)
    discarded_no_refinement: int = 0
    discarded_no_positive: int = 0

    def union_counts(self) -> dict[WeekKey, tuple[int, int]]:
        return {
            week: (self.prepared_by_week[week], self.injected_by_week.get(week, 0))
            for week in sorted(self.prepared_by_week)
        }


def _injection_rank(impression_key: str, size: int) -> int:
    digest = hashlib.blake2b(impression_key.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % size


def _candidate_list(
    artifacts: ReplayArtifacts,
    impression_key: str,
    query_text: str,
    refinement: str,
) -> tuple[list[str], list[float], bool]:
    """Base suggestions, with the observed refinement unioned in if absent.

    The injected refinement goes to a pseudo-random rank derived from the
    impression id, never to a fixed position: a constant insertion rank
    would let the rank feature alone identify the positive label.  When
    the list is already full the lowest-scored candidate is dropped first.
    The injected item ties the score of the candidate it displaces so
    scores stay non-increasing.
    """
    listing = base_suggester.suggest(artifacts.hierarchy, query_text, artifacts.list_size)
    texts = list(listing.suggestions)
    scores = list(listing.scores)
    target = normalize_query(refinement)
    if target in texts or not artifacts.union_refinement:
        return texts, scores, False
    if len(texts) >= artifacts.list_size:
        texts = texts[: artifacts.list_size - 1]
        scores = scores[: artifacts.list_size - 1]
    if not texts:
        return [target], [1.0], True
    rank = _injection_rank(impression_key, len(texts) + 1)
    score = scores[rank] if rank < len(scores) else scores[-1]
    texts.insert(rank, target)
    scores.insert(rank, score)
    return texts, scores, True


def impression_context(artifacts: ReplayArtifacts, impression) -> SuggestionContext:
    """Profiles and session state as of the impression's query.

    The click profile covers clicks strictly before the query; the query
    profile covers the queries submitted so far with the current one as
    most recent.
    """
    click_dists = [
        artifacts.doc_topics[doc_id]
        for doc_id in impression.prior_clicks
        if doc_id in artifacts.doc_topics
    ]
    try:
        click_profile = build_click_profile(click_dists, artifacts.decay).dist
    except ProfileUnavailable:
        click_profile = None
    profile_queries = [impression.query_text, *impression.prior_queries]
    try:
        query_profile = build_query_profile(
            [artifacts.query_dist(q) for q in profile_queries], artifacts.decay
        ).dist
    except ProfileUnavailable:
        query_profile = None
    return SuggestionContext(
        current_query=impression.query_text,
        previous_query=impression.prior_queries[0] if impression.prior_queries else None,
        query_no=impression.position,
        used_queries=frozenset(normalize_query(q) for q in impression.prior_queries),
        click_profile=click_profile,
        query_profile=query_profile,
    )


def candidate_feature_matrix(
    artifacts: ReplayArtifacts, context: SuggestionContext, texts: Sequence[str]
) -> np.ndarray:
    return np.vstack(
        [
            extract_features(context, text, rank, artifacts.query_dist(text))
            for rank, text in enumerate(texts, 1)
        ]
    )


def prepare_impressions(
    sessions: Sequence[SearchSession], artifacts: ReplayArtifacts
) -> tuple[list[PreparedImpression], ReplayStats]:
    stats = ReplayStats()
    prepared: list[PreparedImpression] = []
    for session in sessions:
        for impression in log_model.impressions_from_session(session):
            refinement = log_model.find_validated_refinement(session, impression)
            if refinement is None:
                stats.discarded_no_refinement += 1
                continue
            impression_key = f"{session.session_id}:{impression.position}"
            texts, scores, injected = _candidate_list(
                artifacts, impression_key, impression.query_text, refinement
            )
            if not texts:
                stats.discarded_no_positive += 1
                continue
            labeled = log_model.label_suggestions(session, impression, texts)
            if labeled is None:
                stats.discarded_no_positive += 1
                continue

            context = impression_context(artifacts, impression)
            matrix = candidate_feature_matrix(artifacts, context, texts)

            week = iso_week(impression.timestamp)
            stats.prepared_by_week[week] = stats.prepared_by_week.get(week, 0) + 1
            if injected:
                stats.injected_by_week[week] = stats.injected_by_week.get(week, 0) + 1
            prepared.append(
                PreparedImpression(
                    impression_id=f"{session.session_id}:{impression.position}",
                    session_id=session.session_id,
                    week=week,
                    position=impression.position,
                    query_text=impression.query_text,
                    query_len=len(tokenize(impression.query_text)),
                    suggestions=tuple(texts),
                    labels=labeled.labels,
                    features=matrix,
                    base_scores=tuple(scores),
                    union_injected=injected,
                )
            )
    return prepared, stats
