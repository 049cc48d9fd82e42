"""Query-log parsing, session assembly, and click-validated labelling.

The log format is one event per line, five tab-separated fields::

    session_id <TAB> Q|C <TAB> seq_id <TAB> content <TAB> ISO-8601 timestamp

``Q`` rows carry query text, ``C`` rows carry the clicked document id.
Lines starting with ``#`` are comments.  Malformed lines are rejected
individually (with a reason) so one bad row never aborts a whole file.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional, Sequence


class LogFormatError(ValueError):
    """A log line that cannot be turned into a LogEvent."""


class DuplicateSeqError(ValueError):
    """Two events in one session share a seq_id."""


class EventType(enum.Enum):
    QUERY = "Q"
    CLICK = "C"


@dataclass(frozen=True)
class LogEvent:
    session_id: str
    event_type: EventType
    seq_id: int
    content: str
    timestamp: datetime


@dataclass(frozen=True)
class SearchSession:
    """One user episode: the ordered events sharing a session id.

    ``timestamp_anomalies`` lists seq_ids whose timestamp precedes the
    previous event's; such events are flagged but kept.
    """

    session_id: str
    events: tuple[LogEvent, ...]
    timestamp_anomalies: tuple[int, ...] = ()

    def query_events(self) -> list[LogEvent]:
        return [e for e in self.events if e.event_type is EventType.QUERY]


@dataclass(frozen=True)
class QueryImpression:
    """A query submission plus the session state accumulated before it.

    ``position`` counts query events in the session up to and including
    this one.  ``prior_clicks`` / ``prior_queries`` are most-recent-first
    and only contain events with a smaller seq_id (the current query is
    excluded from ``prior_queries``).
    """

    session_id: str
    seq_id: int
    position: int
    query_text: str
    timestamp: datetime
    prior_clicks: tuple[str, ...]
    prior_queries: tuple[str, ...]


@dataclass(frozen=True)
class LabeledImpression:
    impression: QueryImpression
    suggestions: tuple[str, ...]
    labels: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.suggestions) != len(self.labels):
            raise ValueError("labels must align with suggestions")


def normalize_query(text: str) -> str:
    """Lowercase, collapse internal whitespace, strip. No stemming."""
    return " ".join(text.lower().split())


def parse_log_line(line: str) -> LogEvent:
    """Parse one tab-separated event record.

    Raises LogFormatError naming the problem: wrong field count, unknown
    event code, non-positive seq_id, empty content, bad timestamp.
    """
    fields = line.rstrip("\n").split("\t")
    if len(fields) != 5:
        raise LogFormatError(f"expected 5 tab-separated fields, got {len(fields)}")
    session_id, code, seq_text, content, ts_text = fields
    if not session_id:
        raise LogFormatError("empty session id")
    try:
        event_type = EventType(code)
    except ValueError:
        raise LogFormatError(f"unknown event code {code!r}") from None
    try:
        seq_id = int(seq_text)
    except ValueError:
        raise LogFormatError(f"seq_id {seq_text!r} is not an integer") from None
    if seq_id <= 0:
        raise LogFormatError(f"seq_id must be positive, got {seq_id}")
    if not content:
        raise LogFormatError("empty content")
    timestamp = _parse_timestamp(ts_text)
    return LogEvent(session_id, event_type, seq_id, content, timestamp)


def _parse_timestamp(text: str) -> datetime:
    raw = text.strip()
    if raw.endswith("Z"):
        raw = raw[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(raw)
    except ValueError:
        raise LogFormatError(f"unparseable timestamp {text!r}") from None
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


@dataclass
class ParsedLog:
    events: list[LogEvent]
    rejected: list[tuple[int, str]] = field(default_factory=list)

    @property
    def reject_count(self) -> int:
        return len(self.rejected)


def read_log_file(path: str | Path) -> ParsedLog:
    """Read a log file, collecting per-line rejections instead of failing."""
    result = ParsedLog(events=[])
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, 1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                result.events.append(parse_log_line(line))
            except LogFormatError as exc:
                result.rejected.append((line_no, str(exc)))
    return result


def assemble_sessions(events: Iterable[LogEvent]) -> list[SearchSession]:
    """Group events by session id and order each session by seq_id.

    The returned list is sorted by session_id, so any permutation of the
    input stream assembles to the same output.  Duplicate
    (session_id, seq_id) pairs are an error; non-monotone timestamps are
    flagged on the session, not dropped.
    """
    by_session: dict[str, list[LogEvent]] = {}
    for event in events:
        by_session.setdefault(event.session_id, []).append(event)

    sessions = []
    for session_id in sorted(by_session):
        ordered = sorted(by_session[session_id], key=lambda e: e.seq_id)
        seen: set[int] = set()
        for event in ordered:
            if event.seq_id in seen:
                raise DuplicateSeqError(
                    f"duplicate (session_id, seq_id) = ({session_id!r}, {event.seq_id})"
                )
            seen.add(event.seq_id)
        anomalies = tuple(
            ordered[i].seq_id
            for i in range(1, len(ordered))
            if ordered[i].timestamp < ordered[i - 1].timestamp
        )
        sessions.append(SearchSession(session_id, tuple(ordered), anomalies))
    return sessions


def preprocess_sessions(sessions: Sequence[SearchSession]) -> list[SearchSession]:
    """Drop single-event sessions; everything else passes through unchanged."""
    return [s for s in sessions if len(s.events) != 1]


def impressions_from_session(session: SearchSession) -> list[QueryImpression]:
    """One impression per query event, carrying the pre-query session state."""
    impressions = []
    clicks: list[str] = []
    queries: list[str] = []
    position = 0
    for event in session.events:
        if event.event_type is EventType.QUERY:
            position += 1
            impressions.append(
                QueryImpression(
                    session_id=session.session_id,
                    seq_id=event.seq_id,
                    position=position,
                    query_text=event.content,
                    timestamp=event.timestamp,
                    prior_clicks=tuple(reversed(clicks)),
                    prior_queries=tuple(reversed(queries)),
                )
            )
            queries.append(event.content)
        else:
            clicks.append(event.content)
    return impressions


def find_validated_refinement(
    session: SearchSession, impression: QueryImpression
) -> Optional[str]:
    """The next query after the impression, if a click follows it.

    Returns the raw text of the query submitted immediately after the
    impression's query, provided at least one click lands between that
    refinement and the subsequent query (or session end).  Returns None
    when the impression is the last query or the refinement is never
    clicked through.
    """
    next_query: Optional[LogEvent] = None
    clicked = False
    for event in session.events:
        if event.seq_id <= impression.seq_id:
            continue
        if event.event_type is EventType.QUERY:
            if next_query is None:
                next_query = event
            else:
                break
        elif next_query is not None:
            clicked = True
    if next_query is None or not clicked:
        return None
    return next_query.content


def label_suggestions(
    session: SearchSession,
    impression: QueryImpression,
    suggestions: Sequence[str],
) -> Optional[LabeledImpression]:
    """Assign binary relevance labels against the click-validated refinement.

    A suggestion is positive iff it equals (after normalize_query) the
    click-validated next query.  Every occurrence of the refinement text is
    positive.  Returns None (discard) when no validated refinement exists
    or no suggestion matches it.
    """
    if not suggestions:
        raise ValueError("suggestions must be non-empty")
    refinement = find_validated_refinement(session, impression)
    if refinement is None:
        return None
    target = normalize_query(refinement)
    labels = tuple(int(normalize_query(s) == target) for s in suggestions)
    if not any(labels):
        return None
    return LabeledImpression(impression, tuple(suggestions), labels)


@dataclass(frozen=True)
class LogStats:
    n_sessions: int
    n_events: int
    n_queries: int
    n_clicks: int
    events_per_session: float
    queries_per_session: float
    clicks_per_session: float

    def table_rows(self) -> list[tuple[str, str]]:
        """Rows in the conventional log-statistics presentation order."""
        return [
            ("#search sessions", str(self.n_sessions)),
            ("#events", str(self.n_events)),
            ("#events/session", f"{self.events_per_session:.2f}"),
            ("#queries", str(self.n_queries)),
            ("#query/session", f"{self.queries_per_session:.2f}"),
            ("#clicked url", str(self.n_clicks)),
            ("#clicks/session", f"{self.clicks_per_session:.2f}"),
        ]


def compute_log_stats(sessions: Sequence[SearchSession]) -> LogStats:
    n_sessions = len(sessions)
    n_events = sum(len(s.events) for s in sessions)
    n_queries = sum(
        1 for s in sessions for e in s.events if e.event_type is EventType.QUERY
    )
    n_clicks = n_events - n_queries
    if n_sessions == 0:
        return LogStats(0, 0, 0, 0, 0.0, 0.0, 0.0)
    return LogStats(
        n_sessions=n_sessions,
        n_events=n_events,
        n_queries=n_queries,
        n_clicks=n_clicks,
        events_per_session=n_events / n_sessions,
        queries_per_session=n_queries / n_sessions,
        clicks_per_session=n_clicks / n_sessions,
    )
