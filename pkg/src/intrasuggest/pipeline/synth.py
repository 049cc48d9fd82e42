"""Seeded synthetic corpus + query-log generator for desk-scale experiments.

The world model: a fixed number of planted topics, each owning a block of
topic-specific words, plus a shared pool of ambiguous "stem" words used by
documents of every topic.  Each (topic, stem) pair has canonical
refinements: a bigram `stem ext1` and a trigram `stem ext1 ext2` whose
extension words belong to the topic.  Documents embed those chains
contiguously (so a subsumption hierarchy can discover them) amid
topic-specific filler words and a little cross-topic noise.

A session draws a user interest distribution, picks an intent topic, and
walks a refinement chain: an ambiguous stem query is refined into the
intent's bigram, a bigram sometimes into the trigram, otherwise the user
jumps to a fresh stem.  After each query the user clicks documents of the
intent topic that contain the query words (or, at the noise rate, a random
document).  The same query text therefore calls for different refinements
in different sessions, which is exactly the ambiguity personalisation is
supposed to resolve.

Outputs conform to the corpus and log file formats; a ground-truth file
records each session's intent topic and planted query chain.  Everything
is a pure function of the configuration, byte for byte.
"""

from __future__ import annotations

import random
from bisect import bisect_left
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path

SECONDS_PER_WEEK = 7 * 86400
SESSION_TIME_MARGIN = 900  # keep whole sessions inside one ISO week


@dataclass(frozen=True)
class SynthConfig:
    n_topics: int = 20
    n_sessions: int = 5000
    n_docs: int = 1500
    stem_vocab: int = 30
    topic_vocab: int = 40
    doc_length: int = 30
    chains_per_doc: int = 4
    noise_word_rate: float = 0.10
    session_acts: tuple[tuple[int, float], ...] = (
        (1, 0.10),
        (2, 0.30),
        (3, 0.28),
        (4, 0.18),
        (5, 0.14),
    )
    click_prob: float = 0.85
    click_noise: float = 0.10
    clicks_extra_prob: float = 0.30
    specific_start_prob: float = 0.50
    trigram_refine_prob: float = 0.40
    weeks: int = 4
    start_date: str = "2012-01-02"  # a Monday, so weeks align with ISO weeks
    rng_seed: int = 42

    def __post_init__(self) -> None:
        if self.n_topics < 2 or self.n_sessions < 1 or self.n_docs < self.n_topics:
            raise ValueError("need >=2 topics, >=1 session, and >=1 doc per topic")
        if self.topic_vocab < 12 or self.stem_vocab < self.chains_per_doc:
            raise ValueError("vocabulary sizes too small for the chain structure")
        if not 0.0 <= self.click_noise <= 1.0 or not 0.0 <= self.noise_word_rate <= 1.0:
            raise ValueError("noise rates must be in [0, 1]")
        total = sum(p for _, p in self.session_acts)
        if abs(total - 1.0) > 1e-9 or any(n < 1 for n, _ in self.session_acts):
            raise ValueError("session_acts must be a distribution over counts >= 1")


@dataclass(frozen=True)
class SynthSummary:
    n_docs: int
    n_sessions: int
    n_events: int
    n_queries: int
    n_clicks: int


class _World:
    """Derived vocabulary and helper tables, all deterministic."""

    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        self.stems = [f"sw{i:02d}" for i in range(cfg.stem_vocab)]
        self.topic_terms = [
            [f"t{z:02d}w{j:02d}" for j in range(cfg.topic_vocab)]
            for z in range(cfg.n_topics)
        ]
        # Zipf-ish cumulative weights for filler sampling.
        weights = [1.0 / (j + 1) for j in range(cfg.topic_vocab)]
        self.filler_cum = []
        acc = 0.0
        for w in weights:
            acc += w
            self.filler_cum.append(acc)

    def ext1(self, z: int, s: int) -> str:
        return self.topic_terms[z][(5 * s + z) % self.cfg.topic_vocab]

    def ext2(self, z: int, s: int) -> str:
        return self.topic_terms[z][(5 * s + z + 11) % self.cfg.topic_vocab]

    def bigram(self, z: int, s: int) -> str:
        return f"{self.stems[s]} {self.ext1(z, s)}"

    def trigram(self, z: int, s: int) -> str:
        return f"{self.stems[s]} {self.ext1(z, s)} {self.ext2(z, s)}"

    def sample_filler(self, rng: random.Random, z: int) -> str:
        u = rng.random() * self.filler_cum[-1]
        return self.topic_terms[z][bisect_left(self.filler_cum, u)]


def _generate_docs(
    world: _World, rng: random.Random
) -> tuple[list[str], list[list[str]], list[int]]:
    cfg = world.cfg
    doc_ids: list[str] = []
    doc_tokens: list[list[str]] = []
    doc_topics: list[int] = []
    for i in range(cfg.n_docs):
        z = i % cfg.n_topics
        chunks: list[list[str]] = []
        used = 0
        stems = rng.sample(range(cfg.stem_vocab), cfg.chains_per_doc)
        for s in stems:
            if rng.random() < 0.5:
                chunk = [world.stems[s], world.ext1(z, s)]
            else:
                chunk = [world.stems[s], world.ext1(z, s), world.ext2(z, s)]
            chunks.append(chunk)
            used += len(chunk)
        while used < cfg.doc_length:
            if rng.random() < cfg.noise_word_rate:
                other = rng.randrange(cfg.n_topics - 1)
                if other >= z:
                    other += 1
                word = world.sample_filler(rng, other)
            else:
                word = world.sample_filler(rng, z)
            chunks.append([word])
            used += 1
        rng.shuffle(chunks)
        tokens = [w for chunk in chunks for w in chunk]
        doc_ids.append(f"/corpus/t{z:02d}/d{i:05d}")
        doc_tokens.append(tokens)
        doc_topics.append(z)
    return doc_ids, doc_tokens, doc_topics


def _draw(rng: random.Random, pairs: tuple[tuple[int, float], ...]) -> int:
    u = rng.random()
    acc = 0.0
    for value, p in pairs:
        acc += p
        if u < acc:
            return value
    return pairs[-1][0]


def synth_generate(
    cfg: SynthConfig,
    corpus_path: str | Path,
    logs_path: str | Path,
    truth_path: str | Path,
) -> SynthSummary:
    """Write the corpus, log, and ground-truth files; return basic counts."""
    rng = random.Random(cfg.rng_seed)
    world = _World(cfg)
    doc_ids, doc_tokens, doc_topics = _generate_docs(world, rng)

    # Lookup tables for click targeting.
    docs_with_word: dict[str, set[int]] = {}
    for i, tokens in enumerate(doc_tokens):
        for w in set(tokens):
            docs_with_word.setdefault(w, set()).add(i)
    docs_by_topic: dict[int, list[int]] = {}
    for i, z in enumerate(doc_topics):
        docs_by_topic.setdefault(z, []).append(i)

    def click_target(z: int, query_words: list[str]) -> int:
        if rng.random() < cfg.click_noise:
            return rng.randrange(cfg.n_docs)
        matching: set[int] | None = None
        for w in query_words:
            found = docs_with_word.get(w, set())
            matching = found if matching is None else matching & found
            if not matching:
                break
        on_topic = sorted(i for i in (matching or ()) if doc_topics[i] == z)
        if not on_topic:
            stem_docs = docs_with_word.get(query_words[0], set())
            on_topic = sorted(i for i in stem_docs if doc_topics[i] == z)
        if not on_topic:
            on_topic = docs_by_topic[z]
        return on_topic[rng.randrange(len(on_topic))]

    base = datetime.fromisoformat(cfg.start_date).replace(tzinfo=timezone.utc)
    interest_shape = 0.5

    n_events = n_queries = n_clicks = 0
    log_lines: list[str] = []
    truth_lines: list[str] = []
    for sidx in range(cfg.n_sessions):
        session_id = f"s{sidx:06d}"
        interests = [rng.gammavariate(interest_shape, 1.0) for _ in range(cfg.n_topics)]
        total = sum(interests)
        u = rng.random() * total
        acc = 0.0
        z = cfg.n_topics - 1
        for topic, weight in enumerate(interests):
            acc += weight
            if u < acc:
                z = topic
                break

        acts = _draw(rng, cfg.session_acts)
        available = list(range(cfg.stem_vocab))

        def next_stem() -> int:
            return available.pop(rng.randrange(len(available)))

        # Only the session opener may be a bare ambiguous stem; refinements
        # and chain restarts are always specific (bigram or trigram), which
        # is also what keeps the suggester's popularity pool refinement-shaped.
        queries: list[str] = []
        stem = next_stem()
        level = 2 if rng.random() < cfg.specific_start_prob else 1
        for _ in range(acts):
            if level == 1:
                queries.append(world.stems[stem])
                level = 2
            elif level == 2:
                queries.append(world.bigram(z, stem))
                if rng.random() < cfg.trigram_refine_prob:
                    level = 3
                else:
                    stem = next_stem()
            else:
                queries.append(world.trigram(z, stem))
                stem = next_stem()
                level = 2

        week = rng.randrange(cfg.weeks)
        offset = rng.uniform(0.0, SECONDS_PER_WEEK - SESSION_TIME_MARGIN)
        when = base + timedelta(weeks=week, seconds=int(offset))
        seq = 0
        for query in queries:
            seq += 1
            n_queries += 1
            stamp = when.strftime("%Y-%m-%dT%H:%M:%SZ")
            log_lines.append(f"{session_id}\tQ\t{seq}\t{query}\t{stamp}")
            when += timedelta(seconds=rng.randrange(20, 41))
            if rng.random() < cfg.click_prob:
                clicks = 1 + (1 if rng.random() < cfg.clicks_extra_prob else 0)
                for _ in range(clicks):
                    seq += 1
                    n_clicks += 1
                    target = click_target(z, query.split(" "))
                    stamp = when.strftime("%Y-%m-%dT%H:%M:%SZ")
                    log_lines.append(
                        f"{session_id}\tC\t{seq}\t{doc_ids[target]}\t{stamp}"
                    )
                    when += timedelta(seconds=rng.randrange(15, 31))
        n_events += seq
        truth_lines.append(session_id + "\t" + str(z) + "\t" + "\t".join(queries))

    corpus_path = Path(corpus_path)
    corpus_path.parent.mkdir(parents=True, exist_ok=True)
    with open(corpus_path, "w", encoding="utf-8") as out:
        out.write("# synthetic intranet corpus: doc_id<TAB>text\n")
        for doc_id, tokens in zip(doc_ids, doc_tokens):
            out.write(doc_id + "\t" + " ".join(tokens) + "\n")

    logs_path = Path(logs_path)
    logs_path.parent.mkdir(parents=True, exist_ok=True)
    with open(logs_path, "w", encoding="utf-8") as out:
        out.write("# synthetic query log: session<TAB>Q|C<TAB>seq<TAB>content<TAB>timestamp\n")
        for line in log_lines:
            out.write(line + "\n")

    truth_path = Path(truth_path)
    truth_path.parent.mkdir(parents=True, exist_ok=True)
    with open(truth_path, "w", encoding="utf-8") as out:
        out.write("# ground truth: session_id<TAB>intent_topic<TAB>query chain...\n")
        for line in truth_lines:
            out.write(line + "\n")

    return SynthSummary(
        n_docs=cfg.n_docs,
        n_sessions=cfg.n_sessions,
        n_events=n_events,
        n_queries=n_queries,
        n_clicks=n_clicks,
    )


def load_ground_truth(path: str | Path) -> dict[str, tuple[int, tuple[str, ...]]]:
    """session_id -> (intent topic, planted query chain)."""
    truth: dict[str, tuple[int, tuple[str, ...]]] = {}
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.rstrip("\n").split("\t")
            truth[parts[0]] = (int(parts[1]), tuple(parts[2:]))
    return truth


def doc_planted_topic(doc_id: str) -> int:
    """Recover a synthetic document's dominant topic from its id."""
    return int(doc_id.split("/")[2][1:])
