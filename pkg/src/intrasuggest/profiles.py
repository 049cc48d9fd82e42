"""Temporal user profiles over latent topics, and profile similarity.

Both profiles are recency-weighted mixtures of topic distributions: the
click profile mixes the distributions of documents clicked so far in the
session, the query profile mixes the distributions of queries submitted
so far (the current query included, as most recent).  A query's own
distribution is the mean over the documents containing all its words;
queries matching no document have no distribution and are skipped.

Profile-to-suggestion similarity is the negated Jensen-Shannon divergence,
so it lives in [-ln 2, 0] with 0 meaning identical distributions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .corpus_index import InvertedIndex
from .log_model import normalize_query


class ProfileUnavailable(ValueError):
    """No usable history to build the requested profile from."""


@dataclass(frozen=True)
class DecayParams:
    """Geometric recency decay; 1.0 weights all history equally."""

    decay_alpha: float = 0.95

    def __post_init__(self) -> None:
        if not 0.0 <= self.decay_alpha <= 1.0:
            raise ValueError(f"decay_alpha must be in [0, 1], got {self.decay_alpha}")


@dataclass(frozen=True)
class ClickProfile:
    dist: np.ndarray
    n_clicks: int


@dataclass(frozen=True)
class QueryProfile:
    dist: np.ndarray
    n_queries: int


def decay_weights(n: int, decay_alpha: float) -> np.ndarray:
    """Normalized geometric weights for n items ordered most-recent-first.

    Weight i is proportional to decay_alpha**i (the most recent item has
    exponent 0, so decay_alpha = 0 puts all mass on it: 0**0 == 1).
    """
    if n < 1:
        raise ValueError("need at least one item to weight")
    raw = np.array([decay_alpha**i for i in range(n)], dtype=np.float64)
    return raw / raw.sum()


def build_click_profile(
    doc_topic_dists: Sequence[np.ndarray], decay: DecayParams
) -> ClickProfile:
    """Decay-weighted mixture of clicked-document topic distributions.

    Input must be ordered most-recent-first.  Each click event contributes
    separately, so a document clicked twice is counted at both recencies.
    """
    if not doc_topic_dists:
        raise ProfileUnavailable("no clicked documents in session so far")
    weights = decay_weights(len(doc_topic_dists), decay.decay_alpha)
    dist = np.zeros_like(doc_topic_dists[0], dtype=np.float64)
    for w, d in zip(weights, doc_topic_dists):
        dist = dist + w * np.asarray(d, dtype=np.float64)
    return ClickProfile(dist=dist, n_clicks=len(doc_topic_dists))


def query_topic_dist(
    query_text: str,
    index: InvertedIndex,
    doc_topics: Mapping[str, np.ndarray],
) -> Optional[np.ndarray]:
    """Topic distribution of a query: mean over documents containing all
    its words.  None when no document contains them (the distribution is
    undefined for such queries)."""
    matching = index.docs_containing_all_terms(normalize_query(query_text))
    known = sorted(d for d in matching if d in doc_topics)
    if not known:
        return None
    total = np.zeros_like(doc_topics[known[0]], dtype=np.float64)
    for doc_id in known:
        total = total + doc_topics[doc_id]
    return total / len(known)


def build_query_profile(
    query_dists: Sequence[Optional[np.ndarray]], decay: DecayParams
) -> QueryProfile:
    """Decay-weighted mixture of query topic distributions.

    Input is ordered most-recent-first and may contain None for queries
    with undefined distributions; those are skipped and decay positions
    are re-assigned over the survivors.
    """
    kept = [np.asarray(d, dtype=np.float64) for d in query_dists if d is not None]
    if not kept:
        raise ProfileUnavailable("no query in session has a defined distribution")
    weights = decay_weights(len(kept), decay.decay_alpha)
    dist = np.zeros_like(kept[0])
    for w, d in zip(weights, kept):
        dist = dist + w * d
    return QueryProfile(dist=dist, n_queries=len(kept))


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """Kullback-Leibler divergence in nats; terms with p == 0 contribute 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    mask = p > 0.0
    if np.any(q[mask] <= 0.0):
        raise ValueError("KL undefined: p > 0 where q == 0")
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def profile_similarity(suggestion_dist: np.ndarray, profile_dist: np.ndarray) -> float:
    """Negated Jensen-Shannon divergence between a suggestion's topic
    distribution and a user profile.  Symmetric, in [-ln 2, 0]."""
    q = np.asarray(suggestion_dist, dtype=np.float64)
    p = np.asarray(profile_dist, dtype=np.float64)
    m = 0.5 * (q + p)
    return -(0.5 * kl_divergence(q, m) + 0.5 * kl_divergence(p, m))
