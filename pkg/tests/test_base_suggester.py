"""Subsumption hierarchy construction and base suggestion lists."""

import random
from datetime import datetime, timedelta, timezone

import pytest

from intrasuggest.base_suggester import (
    ConceptHierarchy,
    build_hierarchy,
    load_hierarchy,
    save_hierarchy,
    suggest,
)
from intrasuggest.corpus_index import make_document
from intrasuggest.log_model import EventType, LogEvent, SearchSession


def session_from_queries(sid, queries):
    base = datetime(2012, 1, 5, 10, 0, tzinfo=timezone.utc)
    events = tuple(
        LogEvent(sid, EventType.QUERY, i + 1, q, base + timedelta(seconds=30 * i))
        for i, q in enumerate(queries)
    )
    return SearchSession(sid, events)


def build_subsumption_corpus():
    """Every doc containing 'computer science' also contains 'computer';
    the reverse rate stays low."""
    docs = []
    for i in range(10):
        docs.append(make_document(f"cs{i}", "computer science department research"))
    for i in range(20):
        docs.append(make_document(f"c{i}", "computer lab booking form"))
    for i in range(10):
        docs.append(make_document(f"x{i}", "library opening hours"))
    return docs


def logs_for(queries, n_sessions=6):
    return [
        session_from_queries(f"s{i}", queries)
        for i in range(n_sessions)
    ]


class TestBuildHierarchy:
    def test_containment_edge_direction(self):
        docs = build_subsumption_corpus()
        sessions = logs_for(["computer", "computer science"])
        h = build_hierarchy(docs, sessions, min_freq=5, subsume_threshold=0.8)
        # broad term subsumes the phrase, never the other way around
        assert "computer science" in h.children.get("computer", {})
        assert "computer" not in h.children.get("computer science", {})
        assert h.children["computer"]["computer science"] == pytest.approx(1.0)

    def test_mutual_subsumption_no_edge(self):
        docs = [make_document(f"d{i}", "salt pepper") for i in range(12)]
        sessions = logs_for(["salt", "pepper"])
        h = build_hierarchy(docs, sessions, min_freq=5)
        assert "pepper" not in h.children.get("salt", {})
        assert "salt" not in h.children.get("pepper", {})

    def test_below_min_freq_absent(self):
        docs = build_subsumption_corpus() + [make_document("rare", "unicorn stable")]
        sessions = logs_for(["computer"])
        h = build_hierarchy(docs, sessions, min_freq=5)
        assert "unicorn" not in h.corpus_df

    def test_counts_combine_corpus_and_logs(self):
        # 'webmail' never appears in the corpus but is queried often
        docs = build_subsumption_corpus()
        sessions = logs_for(["webmail", "computer"], n_sessions=6)
        h = build_hierarchy(docs, sessions, min_freq=5)
        assert "webmail" in h.corpus_df

    def test_empty_inputs_rejected(self):
        with pytest.raises(ValueError):
            build_hierarchy([], logs_for(["a"]))
        with pytest.raises(ValueError):
            build_hierarchy([make_document("d", "a b")], [])

    def test_asymmetry_property(self):
        rng = random.Random(19)
        vocab = [f"w{i}" for i in range(12)]
        docs = [
            make_document(f"d{i}", " ".join(rng.choices(vocab, k=6)))
            for i in range(60)
        ]
        sessions = logs_for([" ".join(rng.choices(vocab, k=2)) for _ in range(4)])
        h = build_hierarchy(docs, sessions, min_freq=3)
        for parent, children in h.children.items():
            for child in children:
                assert parent not in h.children.get(child, {})

    def test_edge_weights_in_unit_interval(self):
        docs = build_subsumption_corpus()
        h = build_hierarchy(docs, logs_for(["computer", "computer science"]))
        for children in h.children.values():
            for weight in children.values():
                assert 0.0 < weight <= 1.0

    def test_deterministic(self):
        docs = build_subsumption_corpus()
        sessions = logs_for(["computer", "computer science"])
        a = build_hierarchy(docs, sessions)
        b = build_hierarchy(docs, sessions)
        assert a.children == b.children
        assert a.fallback == b.fallback


def toy_hierarchy(fallback=()):
    return ConceptHierarchy(
        corpus_df={"lecture": 30, "lecture notes": 9, "lecture timetable": 7},
        log_freq={"lecture": 10, "lecture notes": 8, "lecture timetable": 4},
        children={
            "lecture": {"lecture notes": 0.9, "lecture timetable": 0.7},
        },
        parents={
            "lecture notes": {"lecture": 0.9},
            "lecture timetable": {"lecture": 0.7},
        },
        fallback=tuple(fallback),
        min_freq=5,
        subsume_threshold=0.8,
    )


class TestSuggest:
    def test_children_ranked_by_weight_times_prior(self):
        listing = suggest(toy_hierarchy(), "lecture", 2)
        assert listing.suggestions == ("lecture notes", "lecture timetable")
        assert listing.scores[0] >= listing.scores[1]

    def test_n_larger_than_pool_no_padding_shorter_list(self):
        listing = suggest(toy_hierarchy(), "lecture", 50)
        # children + blended fallback, no artificial padding beyond the pool
        assert len(listing.suggestions) == len(set(listing.suggestions))
        assert "lecture" not in listing.suggestions

    def test_unknown_query_uses_fallback(self):
        listing = suggest(toy_hierarchy(fallback=("webmail", "campus map")), "zzz unseen", 2)
        assert listing.suggestions == ("webmail", "campus map")

    def test_popular_refinements_blended_into_matched_lists(self):
        listing = suggest(toy_hierarchy(fallback=("webmail", "campus map")), "lecture", 10)
        assert "webmail" in listing.suggestions
        # the blend is discounted, so the top structural child still wins
        assert listing.suggestions[0] == "lecture notes"

    def test_input_query_never_suggested(self):
        listing = suggest(toy_hierarchy(), "Lecture  Notes", 10)
        assert "lecture notes" not in listing.suggestions

    def test_scores_non_increasing(self):
        listing = suggest(toy_hierarchy(), "lecture", 10)
        assert all(
            listing.scores[i] >= listing.scores[i + 1]
            for i in range(len(listing.scores) - 1)
        )

    def test_fallback_excludes_query_itself(self):
        listing = suggest(toy_hierarchy(fallback=("webmail", "campus map")), "webmail", 2)
        assert "webmail" not in listing.suggestions

    def test_n_must_be_positive(self):
        with pytest.raises(ValueError):
            suggest(toy_hierarchy(), "lecture", 0)

    def test_parent_offered_for_phrase_query(self):
        listing = suggest(toy_hierarchy(), "lecture notes", 10)
        assert "lecture" in listing.suggestions


class TestSerialization:
    def test_roundtrip(self, tmp_path):
        docs = build_subsumption_corpus()
        sessions = logs_for(["computer", "computer science"])
        h = build_hierarchy(docs, sessions, trained_through="2012-W01")
        path = tmp_path / "hierarchy.txt"
        save_hierarchy(h, path)
        loaded = load_hierarchy(path)
        assert loaded.corpus_df == h.corpus_df
        assert loaded.log_freq == h.log_freq
        assert loaded.children == h.children
        assert loaded.parents == h.parents
        assert loaded.fallback == h.fallback
        assert loaded.trained_through == "2012-W01"
        for query in ("computer", "computer science", "library", "unseen"):
            assert suggest(loaded, query, 5) == suggest(h, query, 5)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "junk.txt"
        path.write_text("nope\n", encoding="utf-8")
        with pytest.raises(ValueError, match="header"):
            load_hierarchy(path)
