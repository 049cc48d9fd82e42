"""Non-personalised suggestion lists from a concept subsumption hierarchy.

Concepts are word n-grams harvested from query logs plus frequent corpus
terms.  A broader concept subsumes a narrower one when it appears in at
least ``subsume_threshold`` of the documents containing the narrower one
while the reverse rate stays below the threshold; the edge weight is that
conditional containment rate.  Suggestions for a query are the children,
parents, and siblings of the concepts found in the query, ranked by edge
weight times a query-log popularity prior.  Queries matching no concept
fall back to the globally most frequent refinements seen in the training
logs.

This is a deliberately simple stand-in for a production suggester: the
personalisation experiments only need a deterministic, reasonable base
list to re-rank.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .corpus_index import Document, tokenize
from .log_model import EventType, SearchSession, normalize_query

FALLBACK_SIZE = 100

# Popular refinements are blended into every candidate pool after
# rescaling onto the query's structural score range; the discount lets a
# structural neighbour win against an equally popular global refinement.
POPULAR_BLEND_WEIGHT = 0.9


@dataclass(frozen=True)
class SuggestionList:
    query: str
    suggestions: tuple[str, ...]
    scores: tuple[float, ...]


@dataclass
class ConceptHierarchy:
    """Nodes keyed by their space-joined phrase text."""

    corpus_df: dict[str, int]
    log_freq: dict[str, int]
    children: dict[str, dict[str, float]]  # parent -> child -> weight
    parents: dict[str, dict[str, float]]  # child -> parent -> weight
    fallback: tuple[str, ...]
    min_freq: int
    subsume_threshold: float
    trained_through: Optional[str] = None
    _max_log_freq: int = field(default=0, repr=False)

    def __post_init__(self) -> None:
        self._max_log_freq = max(self.log_freq.values(), default=0)

    @property
    def nodes(self) -> list[str]:
        return sorted(self.corpus_df)

    def popularity_prior(self, phrase: str) -> float:
        """Query-log popularity smoothed so corpus-only terms keep a
        small nonzero prior."""
        return (self.log_freq.get(phrase, 0) + 1.0) / (self._max_log_freq + 1.0)


def _phrase_ngrams(tokens: Sequence[str], max_len: int) -> set[str]:
    grams = set()
    for size in range(1, max_len + 1):
        for start in range(len(tokens) - size + 1):
            grams.add(" ".join(tokens[start : start + size]))
    return grams


def _contains_phrase(tokens: Sequence[str], phrase_tokens: Sequence[str]) -> bool:
    size = len(phrase_tokens)
    if size == 1:
        return phrase_tokens[0] in tokens
    first = phrase_tokens[0]
    for start in range(len(tokens) - size + 1):
        if tokens[start] == first and list(tokens[start : start + size]) == list(phrase_tokens):
            return True
    return False


def build_hierarchy(
    docs: Sequence[Document],
    sessions: Sequence[SearchSession],
    min_freq: int = 5,
    subsume_threshold: float = 0.8,
    max_phrase_len: int = 3,
    trained_through: Optional[str] = None,
) -> ConceptHierarchy:
    """Construct the subsumption hierarchy from a corpus and training logs.

    A candidate concept must occur at least min_freq times across corpus
    documents and log queries combined.  Mutual subsumption (both
    conditional rates at or above the threshold) yields no edge; any
    longer cycle is broken by dropping its lightest edge.
    """
    if not docs or not sessions:
        raise ValueError("hierarchy needs a non-empty corpus and non-empty logs")

    log_freq: dict[str, int] = {}
    refinement_counts: dict[str, int] = {}
    for session in sessions:
        previous_any = False
        for event in session.events:
            if event.event_type is not EventType.QUERY:
                continue
            text = normalize_query(event.content)
            tokens = tokenize(text)
            if tokens:
                for gram in _phrase_ngrams(tokens, max_phrase_len):
                    log_freq[gram] = log_freq.get(gram, 0) + 1
            if previous_any and text:
                refinement_counts[text] = refinement_counts.get(text, 0) + 1
            previous_any = True

    # Corpus-term candidates: every unigram; phrase candidates come from logs.
    unigram_df: dict[str, int] = {}
    for doc in docs:
        for term in set(doc.tokens):
            unigram_df[term] = unigram_df.get(term, 0) + 1

    candidates = set(log_freq) | set(unigram_df)
    corpus_df: dict[str, int] = {}
    doc_sets: dict[str, set[str]] = {}
    multi = sorted(c for c in candidates if " " in c)
    for doc in docs:
        token_set = set(doc.tokens)
        for phrase in multi:
            parts = phrase.split(" ")
            if all(p in token_set for p in parts) and _contains_phrase(doc.tokens, parts):
                doc_sets.setdefault(phrase, set()).add(doc.doc_id)
    for phrase in multi:
        corpus_df[phrase] = len(doc_sets.get(phrase, ()))
    for term, df in unigram_df.items():
        corpus_df[term] = df
    for doc in docs:
        for term in set(doc.tokens):
            if term in candidates:
                doc_sets.setdefault(term, set()).add(doc.doc_id)

    nodes = sorted(
        c
        for c in candidates
        if corpus_df.get(c, 0) + log_freq.get(c, 0) >= min_freq
    )
    node_set = set(nodes)

    # Pairwise document co-occurrence, discovered through per-document
    # node lists so disjoint concepts are never paired.
    nodes_by_doc: dict[str, list[str]] = {}
    for node in nodes:
        for doc_id in doc_sets.get(node, ()):
            nodes_by_doc.setdefault(doc_id, []).append(node)
    co_counts: dict[tuple[str, str], int] = {}
    for doc_id in sorted(nodes_by_doc):
        present = sorted(nodes_by_doc[doc_id])
        for i, a in enumerate(present):
            for b in present[i + 1 :]:
                key = (a, b)
                co_counts[key] = co_counts.get(key, 0) + 1

    children: dict[str, dict[str, float]] = {}
    parents: dict[str, dict[str, float]] = {}

    def add_edge(parent: str, child: str, weight: float) -> None:
        children.setdefault(parent, {})[child] = weight
        parents.setdefault(child, {})[parent] = weight

    for (a, b), both in sorted(co_counts.items()):
        df_a = corpus_df.get(a, 0)
        df_b = corpus_df.get(b, 0)
        if df_a == 0 or df_b == 0:
            continue
        p_a_given_b = both / df_b
        p_b_given_a = both / df_a
        if p_a_given_b >= subsume_threshold and p_b_given_a < subsume_threshold:
            add_edge(a, b, p_a_given_b)
        elif p_b_given_a >= subsume_threshold and p_a_given_b < subsume_threshold:
            add_edge(b, a, p_b_given_a)

    _break_cycles(children, parents)

    fallback = tuple(
        text
        for text, _ in sorted(refinement_counts.items(), key=lambda kv: (-kv[1], kv[0]))[
            :FALLBACK_SIZE
        ]
    )
    corpus_df_nodes = {n: corpus_df.get(n, 0) for n in nodes}
    log_freq_nodes = {n: log_freq.get(n, 0) for n in nodes if n in log_freq}
    # Drop any edge endpoint that fell below min_freq (defensive; edges are
    # built from nodes only).
    assert all(p in node_set for p in children), "edge from non-node"
    return ConceptHierarchy(
        corpus_df=corpus_df_nodes,
        log_freq=log_freq_nodes,
        children=children,
        parents=parents,
        fallback=fallback,
        min_freq=min_freq,
        subsume_threshold=subsume_threshold,
        trained_through=trained_through,
    )


def _break_cycles(
    children: dict[str, dict[str, float]], parents: dict[str, dict[str, float]]
) -> None:
    """Drop the lightest edge of every directed cycle until acyclic."""
    while True:
        cycle = _find_cycle(children)
        if cycle is None:
            return
        lightest = min(
            zip(cycle, cycle[1:]),
            key=lambda edge: (children[edge[0]][edge[1]], edge),
        )
        parent, child = lightest
        del children[parent][child]
        if not children[parent]:
            del children[parent]
        del parents[child][parent]
        if not parents[child]:
            del parents[child]


def _find_cycle(children: dict[str, dict[str, float]]) -> Optional[list[str]]:
    WHITE, GREY, BLACK = 0, 1, 2
    color: dict[str, int] = {}
    stack_path: list[str] = []

    def visit(node: str) -> Optional[list[str]]:
        color[node] = GREY
        stack_path.append(node)
        for child in sorted(children.get(node, ())):
            state = color.get(child, WHITE)
            if state == GREY:
                at = stack_path.index(child)
                return stack_path[at:] + [child]
            if state == WHITE:
                found = visit(child)
                if found is not None:
                    return found
        stack_path.pop()
        color[node] = BLACK
        return None

    for start in sorted(children):
        if color.get(start, WHITE) == WHITE:
            found = visit(start)
            if found is not None:
                return found
    return None


def suggest(hierarchy: ConceptHierarchy, query_text: str, n: int) -> SuggestionList:
    """Top-n suggestions: hierarchy neighbours blended with popular
    refinements.

    Candidates from the hierarchy (children, parents, and siblings of the
    query's concepts) are scored edge-weight times popularity prior; the
    most frequent observed refinements join every candidate pool at a
    discounted weight on the same score scale.  The pool is deduplicated,
    stripped of the input query, and ordered by descending score with
    lexicographic tie-breaks.  A query matching no concept falls back to
    the popular-refinement list alone.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    qnorm = normalize_query(query_text)
    qtokens = tokenize(qnorm)
    matched = sorted(
        gram for gram in _phrase_ngrams(qtokens, max_len=3) if gram in hierarchy.corpus_df
    )

    scored: dict[str, float] = {}

    def offer(phrase: str, score: float) -> None:
        if phrase == qnorm:
            return
        if score > scored.get(phrase, -1.0):
            scored[phrase] = score

    for node in matched:
        for child, weight in sorted(hierarchy.children.get(node, {}).items()):
            offer(child, weight * hierarchy.popularity_prior(child))
        for parent, weight in sorted(hierarchy.parents.get(node, {}).items()):
            offer(parent, weight * hierarchy.popularity_prior(parent))
            for sibling, sib_weight in sorted(hierarchy.children.get(parent, {}).items()):
                if sibling != node:
                    offer(sibling, sib_weight * hierarchy.popularity_prior(sibling))

    if matched and scored:
        pool = hierarchy.fallback[: 2 * n]
        if pool:
            top_structural = max(scored.values())
            max_prior = max(hierarchy.popularity_prior(t) for t in pool)
            scale = POPULAR_BLEND_WEIGHT * top_structural / max_prior
            for text in pool:
                offer(text, scale * hierarchy.popularity_prior(text))

    if not scored:
        texts = [t for t in hierarchy.fallback if t != qnorm][:n]
        scores = [1.0 / (rank + 1) for rank in range(len(texts))]
        return SuggestionList(query=query_text, suggestions=tuple(texts),
                              scores=tuple(scores))

    ordered = sorted(scored.items(), key=lambda kv: (-kv[1], kv[0]))[:n]
    return SuggestionList(
        query=query_text,
        suggestions=tuple(text for text, _ in ordered),
        scores=tuple(score for _, score in ordered),
    )


FORMAT_HEADER = "intrasuggest-hierarchy v1"


def save_hierarchy(hierarchy: ConceptHierarchy, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as out:
        out.write(FORMAT_HEADER + "\n")
        out.write(f"min_freq {hierarchy.min_freq}\n")
        out.write(f"subsume_threshold {hierarchy.subsume_threshold!r}\n")
        out.write(f"trained_through {hierarchy.trained_through or 'none'}\n")
        nodes = hierarchy.nodes
        out.write(f"nodes {len(nodes)}\n")
        for node in nodes:
            out.write(
                f"{node}\t{hierarchy.corpus_df[node]}\t{hierarchy.log_freq.get(node, 0)}\n"
            )
        edges = [
            (parent, child, weight)
            for parent in sorted(hierarchy.children)
            for child, weight in sorted(hierarchy.children[parent].items())
        ]
        out.write(f"edges {len(edges)}\n")
        for parent, child, weight in edges:
            out.write(f"{parent}\t{child}\t{weight!r}\n")
        out.write(f"fallback {len(hierarchy.fallback)}\n")
        for text in hierarchy.fallback:
            out.write(text + "\n")
        out.write("end\n")


def load_hierarchy(path: str | Path) -> ConceptHierarchy:
    with open(path, encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    if not lines or lines[0] != FORMAT_HEADER:
        raise ValueError(f"{path}: not a hierarchy file (bad header)")
    pos = 1
    min_freq = int(lines[pos].split(" ", 1)[1]); pos += 1
    subsume_threshold = float(lines[pos].split(" ", 1)[1]); pos += 1
    trained_through = lines[pos].split(" ", 1)[1]; pos += 1
    n_nodes = int(lines[pos].split(" ", 1)[1]); pos += 1
    corpus_df: dict[str, int] = {}
    log_freq: dict[str, int] = {}
    for i in range(n_nodes):
        phrase, df_text, lf_text = lines[pos + i].split("\t")
        corpus_df[phrase] = int(df_text)
        if int(lf_text):
            log_freq[phrase] = int(lf_text)
    pos += n_nodes
    n_edges = int(lines[pos].split(" ", 1)[1]); pos += 1
    children: dict[str, dict[str, float]] = {}
    parents: dict[str, dict[str, float]] = {}
    for i in range(n_edges):
        parent, child, weight_text = lines[pos + i].split("\t")
        children.setdefault(parent, {})[child] = float(weight_text)
        parents.setdefault(child, {})[parent] = float(weight_text)
    pos += n_edges
    n_fallback = int(lines[pos].split(" ", 1)[1]); pos += 1
    fallback = tuple(lines[pos + i] for i in range(n_fallback))
    pos += n_fallback
    if lines[pos] != "end":
        raise ValueError(f"{path}: truncated file")
    return ConceptHierarchy(
        corpus_df=corpus_df,
        log_freq=log_freq,
        children=children,
        parents=parents,
        fallback=fallback,
        min_freq=min_freq,
        subsume_threshold=subsume_threshold,
        trained_through=None if trained_through == "none" else trained_through,
    )
