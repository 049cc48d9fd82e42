"""Log parsing, session assembly, preprocessing, and labelling."""

import random
from datetime import datetime, timezone

import pytest

from intrasuggest.log_model import (
    DuplicateSeqError,
    EventType,
    LogEvent,
    LogFormatError,
    assemble_sessions,
    compute_log_stats,
    find_validated_refinement,
    impressions_from_session,
    label_suggestions,
    normalize_query,
    parse_log_line,
    preprocess_sessions,
    read_log_file,
)


def ev(sid, kind, seq, content, ts="2012-01-05T10:00:00Z"):
    stamp = datetime.fromisoformat(ts.replace("Z", "+00:00")).astimezone(timezone.utc)
    return LogEvent(sid, EventType(kind), seq, content, stamp)


def session_of(*events):
    return assemble_sessions(list(events))[0]


class TestParseLogLine:
    def test_query_line(self):
        event = parse_log_line("s1\tQ\t1\tlecture notes\t2012-01-05T10:00:00Z")
        assert event.event_type is EventType.QUERY
        assert event.seq_id == 1
        assert event.content == "lecture notes"
        assert event.timestamp == datetime(2012, 1, 5, 10, 0, 0, tzinfo=timezone.utc)

    def test_click_line(self):
        event = parse_log_line("s1\tC\t2\t/sociology/notes.pdf\t2012-01-05T10:00:41Z")
        assert event.event_type is EventType.CLICK
        assert event.seq_id == 2

    def test_unknown_event_code(self):
        with pytest.raises(LogFormatError, match="unknown event code"):
            parse_log_line("s1\tX\t3\tfoo\t2012-01-05T10:01:00Z")

    def test_wrong_field_count(self):
        with pytest.raises(LogFormatError, match="5 tab-separated"):
            parse_log_line("s1\tQ\t1\tfoo")

    def test_bad_timestamp(self):
        with pytest.raises(LogFormatError, match="timestamp"):
            parse_log_line("s1\tQ\t1\tfoo\tnot-a-time")

    def test_non_positive_seq(self):
        with pytest.raises(LogFormatError, match="positive"):
            parse_log_line("s1\tQ\t0\tfoo\t2012-01-05T10:00:00Z")

    def test_empty_content(self):
        with pytest.raises(LogFormatError, match="content"):
            parse_log_line("s1\tQ\t1\t\t2012-01-05T10:00:00Z")


def test_read_log_file_counts_rejects(tmp_path):
    path = tmp_path / "log.tsv"
    path.write_text(
        "# comment\n"
        "s1\tQ\t1\talpha\t2012-01-05T10:00:00Z\n"
        "s1\tX\t2\tbroken\t2012-01-05T10:00:10Z\n"
        "s1\tC\t3\t/d1\t2012-01-05T10:00:20Z\n",
        encoding="utf-8",
    )
    parsed = read_log_file(path)
    assert len(parsed.events) == 2
    assert parsed.reject_count == 1
    assert parsed.rejected[0][0] == 3  # 1-based line number of the bad row


class TestAssembleSessions:
    def test_groups_by_session(self):
        events = [ev("s1", "Q", 1, "a"), ev("s1", "C", 2, "/d"), ev("s2", "Q", 1, "b")]
        sessions = assemble_sessions(events)
        assert [s.session_id for s in sessions] == ["s1", "s2"]
        assert [len(s.events) for s in sessions] == [2, 1]

    def test_empty_stream(self):
        assert assemble_sessions([]) == []

    def test_order_invariant_under_shuffle(self):
        rng = random.Random(5)
        events = [
            ev(f"s{i % 7}", "Q" if j % 2 == 0 else "C", j + 1, f"c{j}")
            for i in range(7)
            for j in range(i + 1)
        ]
        reference = assemble_sessions(events)
        for _ in range(20):
            shuffled = events[:]
            rng.shuffle(shuffled)
            assert assemble_sessions(shuffled) == reference

    def test_duplicate_seq_is_an_error(self):
        with pytest.raises(DuplicateSeqError, match=r"\('s1', 2\)"):
            assemble_sessions([ev("s1", "Q", 2, "a"), ev("s1", "C", 2, "/d")])

    def test_non_monotone_timestamps_flagged_not_dropped(self):
        events = [
            ev("s1", "Q", 1, "a", "2012-01-05T10:00:00Z"),
            ev("s1", "C", 2, "/d", "2012-01-05T09:00:00Z"),
        ]
        (session,) = assemble_sessions(events)
        assert len(session.events) == 2
        assert session.timestamp_anomalies == (2,)


class TestPreprocess:
    def test_removes_single_event_sessions(self):
        events = [ev("s1", "Q", 1, "a"), ev("s2", "Q", 1, "b"), ev("s2", "C", 2, "/d"),
                  ev("s2", "Q", 3, "c")]
        sessions = assemble_sessions(events)
        kept = preprocess_sessions(sessions)
        assert [s.session_id for s in kept] == ["s2"]

    def test_all_single_event(self):
        sessions = assemble_sessions([ev("s1", "Q", 1, "a"), ev("s2", "Q", 1, "b")])
        assert preprocess_sessions(sessions) == []

    def test_identity_when_nothing_to_remove(self):
        sessions = assemble_sessions([ev("s1", "Q", 1, "a"), ev("s1", "C", 2, "/d")])
        assert preprocess_sessions(sessions) == sessions

    def test_idempotent(self):
        events = [ev("s1", "Q", 1, "a"), ev("s2", "Q", 1, "b"), ev("s2", "C", 2, "/d")]
        sessions = assemble_sessions(events)
        once = preprocess_sessions(sessions)
        assert preprocess_sessions(once) == once


class TestImpressions:
    def test_prior_state_excludes_current(self):
        session = session_of(
            ev("s1", "Q", 1, "alpha"),
            ev("s1", "C", 2, "/d1"),
            ev("s1", "Q", 3, "beta"),
            ev("s1", "C", 4, "/d2"),
            ev("s1", "Q", 5, "gamma"),
        )
        imps = impressions_from_session(session)
        assert [i.position for i in imps] == [1, 2, 3]
        assert imps[0].prior_clicks == () and imps[0].prior_queries == ()
        assert imps[1].prior_clicks == ("/d1",)
        assert imps[2].prior_queries == ("beta", "alpha")  # most recent first
        assert imps[2].prior_clicks == ("/d2", "/d1")


class TestLabelling:
    def build(self):
        return session_of(
            ev("s1", "Q", 1, "campus", "2012-01-05T10:00:00Z"),
            ev("s1", "Q", 2, "campus map", "2012-01-05T10:00:30Z"),
            ev("s1", "C", 3, "/maps.pdf", "2012-01-05T10:00:50Z"),
            ev("s1", "Q", 4, "parking", "2012-01-05T10:01:30Z"),
        )

    def test_positive_at_matching_rank_only(self):
        session = self.build()
        imp = impressions_from_session(session)[0]
        labeled = label_suggestions(session, imp, ["campus shop", "Campus  Map", "library"])
        assert labeled is not None
        assert labeled.labels == (0, 1, 0)

    def test_discard_when_no_click_follows(self):
        session = session_of(
            ev("s1", "Q", 1, "campus"),
            ev("s1", "Q", 2, "campus map"),
        )
        imp = impressions_from_session(session)[0]
        assert label_suggestions(session, imp, ["campus map"]) is None

    def test_discard_when_no_suggestion_matches(self):
        session = self.build()
        imp = impressions_from_session(session)[0]
        assert label_suggestions(session, imp, ["library", "webmail"]) is None

    def test_last_query_discarded(self):
        session = self.build()
        imp = impressions_from_session(session)[-1]
        assert label_suggestions(session, imp, ["anything"]) is None

    def test_click_must_precede_next_query(self):
        # The only click happens after the second refinement, so it cannot
        # validate the first one.
        session = session_of(
            ev("s1", "Q", 1, "campus"),
            ev("s1", "Q", 2, "campus map"),
            ev("s1", "Q", 3, "campus parking"),
            ev("s1", "C", 4, "/parking.pdf"),
        )
        imp = impressions_from_session(session)[0]
        assert find_validated_refinement(session, imp) is None
        imp2 = impressions_from_session(session)[1]
        assert find_validated_refinement(session, imp2) == "campus parking"

    def test_all_matching_occurrences_positive(self):
        session = self.build()
        imp = impressions_from_session(session)[0]
        labeled = label_suggestions(session, imp, ["campus map", "x", "campus map"])
        assert labeled.labels == (1, 0, 1)

    def test_labels_match_independent_linear_scan(self):
        # Random sessions; labels re-derived with a straightforward scan.
        rng = random.Random(99)
        for trial in range(200):
            events = []
            seq = 0
            queries = []
            for _ in range(rng.randint(2, 8)):
                seq += 1
                text = f"q{rng.randint(0, 4)}"
                events.append(ev("s", "Q", seq, text))
                queries.append((seq, text))
                for _ in range(rng.randint(0, 2)):
                    seq += 1
                    events.append(ev("s", "C", seq, f"/d{rng.randint(0, 3)}"))
            session = session_of(*events)
            suggestions = [f"q{i}" for i in range(5)]
            for imp in impressions_from_session(session):
                labeled = label_suggestions(session, imp, suggestions)

                # independent scan over the raw event list
                later = [e for e in events if e.seq_id > imp.seq_id]
                expected = None
                for i, e in enumerate(later):
                    if e.event_type is EventType.QUERY:
                        tail = later[i + 1 :]
                        clicked = False
                        for t in tail:
                            if t.event_type is EventType.QUERY:
                                break
                            clicked = True
                        if clicked:
                            expected = e.content
                        break
                if expected is None or expected not in suggestions:
                    assert labeled is None
                else:
                    assert labeled is not None
                    assert labeled.labels == tuple(
                        int(s == expected) for s in suggestions
                    )


class TestStats:
    def test_hand_count(self):
        sessions = assemble_sessions(
            [
                ev("s1", "Q", 1, "a"),
                ev("s1", "C", 2, "/d"),
                ev("s1", "Q", 3, "b"),
                ev("s2", "Q", 1, "c"),
                ev("s2", "C", 2, "/d"),
            ]
        )
        stats = compute_log_stats(sessions)
        assert stats.n_sessions == 2
        assert stats.n_events == 5
        assert stats.n_queries == 3
        assert stats.n_clicks == 2
        assert stats.events_per_session == pytest.approx(2.5)

    def test_empty(self):
        stats = compute_log_stats([])
        assert stats.n_sessions == 0
        assert stats.events_per_session == 0.0

    def test_events_identity(self):
        rng = random.Random(3)
        events = []
        for s in range(20):
            for j in range(rng.randint(1, 6)):
                kind = "Q" if rng.random() < 0.6 else "C"
                events.append(ev(f"s{s}", kind, j + 1, f"c{j}"))
        stats = compute_log_stats(assemble_sessions(events))
        assert stats.n_events == stats.n_queries + stats.n_clicks

    def test_table_rows_labels(self):
        rows = compute_log_stats([]).table_rows()
        assert [label for label, _ in rows] == [
            "#search sessions", "#events", "#events/session", "#queries",
            "#query/session", "#clicked url", "#clicks/session",
        ]


class TestNormalizeQuery:
    def test_collapses_whitespace(self):
        assert normalize_query("  Lecture   Notes ") == "lecture notes"

    def test_lowercases(self):
        assert normalize_query("WEBMAIL") == "webmail"

    def test_empty(self):
        assert normalize_query("") == ""
