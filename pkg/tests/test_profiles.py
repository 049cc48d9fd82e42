"""Decay weighting, profile mixtures, and Jensen-Shannon similarity."""

import math
import random

import numpy as np
import pytest

from intrasuggest.corpus_index import build_index, make_document
from intrasuggest.profiles import (
    DecayParams,
    ProfileUnavailable,
    build_click_profile,
    build_query_profile,
    decay_weights,
    kl_divergence,
    profile_similarity,
    query_topic_dist,
)


def random_dist(rng, k):
    raw = np.array([rng.gammavariate(1.0, 1.0) for _ in range(k)])
    return raw / raw.sum()


class TestDecayWeights:
    def test_three_items_alpha_095(self):
        weights = decay_weights(3, 0.95)
        np.testing.assert_allclose(weights, [0.35057, 0.33304, 0.31639], atol=1e-5)

    def test_alpha_one_is_uniform(self):
        for n in (1, 4, 9):
            np.testing.assert_allclose(decay_weights(n, 1.0), np.full(n, 1.0 / n))

    def test_alpha_zero_puts_all_mass_on_most_recent(self):
        np.testing.assert_allclose(decay_weights(3, 0.0), [1.0, 0.0, 0.0])

    def test_sums_to_one(self):
        rng = random.Random(1)
        for _ in range(100):
            n = rng.randint(1, 20)
            alpha = rng.random()
            assert decay_weights(n, alpha).sum() == pytest.approx(1.0, abs=1e-12)

    def test_zero_items_rejected(self):
        with pytest.raises(ValueError):
            decay_weights(0, 0.95)


class TestClickProfile:
    def test_two_click_mixture(self):
        dists = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
        profile = build_click_profile(dists, DecayParams(0.95))
        np.testing.assert_allclose(profile.dist, [1 / 1.95, 0.95 / 1.95], atol=1e-5)
        assert profile.n_clicks == 2

    def test_single_click_identity(self):
        profile = build_click_profile([np.array([0.3, 0.7])], DecayParams(0.95))
        np.testing.assert_allclose(profile.dist, [0.3, 0.7])

    def test_identical_dists_fixed_point(self):
        d = np.array([0.2, 0.5, 0.3])
        for alpha in (0.0, 0.5, 0.95, 1.0):
            profile = build_click_profile([d] * 5, DecayParams(alpha))
            np.testing.assert_allclose(profile.dist, d, atol=1e-12)

    def test_empty_unavailable(self):
        with pytest.raises(ProfileUnavailable):
            build_click_profile([], DecayParams())

    def test_matches_brute_force_weighted_sum(self):
        rng = random.Random(7)
        for _ in range(1000):
            n = rng.randint(1, 8)
            k = rng.randint(2, 6)
            alpha = rng.uniform(0.05, 1.0)
            dists = [random_dist(rng, k) for _ in range(n)]
            profile = build_click_profile(dists, DecayParams(alpha))
            norm = sum(alpha**i for i in range(n))
            expected = sum((alpha**i / norm) * dists[i] for i in range(n))
            np.testing.assert_allclose(profile.dist, expected, atol=1e-12)

    def test_recency_dominance(self):
        rng = random.Random(11)
        for _ in range(50):
            k = 4
            dists = [random_dist(rng, k) for _ in range(5)]
            alpha = rng.uniform(0.1, 0.9)
            weights = decay_weights(5, alpha)
            # moving any item to the front strictly increases its weight
            assert weights[0] > weights[1] > weights[4]


class TestQueryTopicDist:
    def build(self):
        docs = [make_document("d1", "a b"), make_document("d2", "a c")]
        index = build_index(docs)
        doc_topics = {"d1": np.array([0.8, 0.2]), "d2": np.array([0.4, 0.6])}
        return index, doc_topics

    def test_mean_over_matching_docs(self):
        index, doc_topics = self.build()
        np.testing.assert_allclose(query_topic_dist("a", index, doc_topics), [0.6, 0.4])

    def test_singleton(self):
        index, doc_topics = self.build()
        np.testing.assert_allclose(query_topic_dist("a b", index, doc_topics), [0.8, 0.2])

    def test_no_match_is_none(self):
        index, doc_topics = self.build()
        assert query_topic_dist("zebra", index, doc_topics) is None


class TestQueryProfile:
    def test_mixture(self):
        dists = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
        profile = build_query_profile(dists, DecayParams(0.95))
        np.testing.assert_allclose(profile.dist, [0.51282, 0.48718], atol=1e-5)

    def test_single_query(self):
        profile = build_query_profile([np.array([0.1, 0.9])], DecayParams(0.95))
        np.testing.assert_allclose(profile.dist, [0.1, 0.9])

    def test_uniform_alpha(self):
        dists = [np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 0.0])]
        profile = build_query_profile(dists, DecayParams(1.0))
        np.testing.assert_allclose(profile.dist, [2 / 3, 1 / 3])

    def test_none_entries_skipped_and_positions_reassigned(self):
        a, b = np.array([1.0, 0.0]), np.array([0.0, 1.0])
        with_nones = build_query_profile([None, a, None, b, None], DecayParams(0.95))
        without = build_query_profile([a, b], DecayParams(0.95))
        np.testing.assert_allclose(with_nones.dist, without.dist)
        assert with_nones.n_queries == 2

    def test_all_none_unavailable(self):
        with pytest.raises(ProfileUnavailable):
            build_query_profile([None, None], DecayParams())


class TestKlDivergence:
    def test_identical_is_zero(self):
        p = np.array([0.25, 0.75])
        assert kl_divergence(p, p) == pytest.approx(0.0, abs=1e-15)

    def test_point_mass_vs_mixture(self):
        assert kl_divergence(np.array([1.0, 0.0]), np.array([0.5, 0.5])) == pytest.approx(
            math.log(2), abs=1e-12
        )

    def test_hand_computed(self):
        value = kl_divergence(np.array([0.75, 0.25]), np.array([0.5, 0.5]))
        assert value == pytest.approx(0.75 * math.log(1.5) + 0.25 * math.log(0.5), abs=1e-12)
        assert value == pytest.approx(0.130812, abs=1e-6)

    def test_zero_in_q_where_p_positive(self):
        with pytest.raises(ValueError):
            kl_divergence(np.array([0.5, 0.5]), np.array([1.0, 0.0]))


class TestProfileSimilarity:
    def test_identical_is_zero(self):
        p = np.array([0.3, 0.7])
        assert profile_similarity(p, p) == pytest.approx(0.0, abs=1e-12)

    def test_disjoint_support_is_minus_ln2(self):
        value = profile_similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        assert value == pytest.approx(-math.log(2), abs=1e-12)

    def test_symmetric_and_bounded(self):
        rng = random.Random(13)
        for _ in range(1000):
            k = rng.randint(2, 8)
            p, q = random_dist(rng, k), random_dist(rng, k)
            ab = profile_similarity(p, q)
            ba = profile_similarity(q, p)
            assert abs(ab - ba) <= 1e-12
            assert -math.log(2) - 1e-12 <= ab <= 1e-12
