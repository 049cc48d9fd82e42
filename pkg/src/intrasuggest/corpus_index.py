"""Document collection storage and conjunctive containment retrieval.

Containment queries answer "which documents contain every word of this
query" over raw tokens: no stemming and no stopword removal, so the
answer set depends only on the text itself.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

TOKEN_PATTERN = re.compile(r"[^\W_]+", re.UNICODE)


class DuplicateDocIdError(ValueError):
    """Two documents in one collection share a doc_id."""


class CorpusFormatError(ValueError):
    """A corpus file line that is not `doc_id<TAB>text`."""


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric characters.

    Unicode alphanumerics are kept; underscores separate tokens.
    """
    return TOKEN_PATTERN.findall(text.lower())


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    tokens: tuple[str, ...]


def make_document(doc_id: str, text: str) -> Document:
    return Document(doc_id=doc_id, text=text, tokens=tuple(tokenize(text)))


class InvertedIndex:
    """Immutable term -> sorted doc_id postings over a document collection."""

    def __init__(self, postings: dict[str, tuple[str, ...]], n_docs: int):
        self._postings = postings
        self.n_docs = n_docs

    @property
    def vocabulary_size(self) -> int:
        return len(self._postings)

    def document_frequency(self, term: str) -> int:
        return len(self._postings.get(term, ()))

    def postings(self, term: str) -> tuple[str, ...]:
        return self._postings.get(term, ())

    def docs_containing_all_terms(self, query_text: str) -> set[str]:
        """Intersection of postings for the distinct query tokens.

        An empty token list yields the empty set (a query with no words
        matches nothing, by definition).
        """
        terms = set(tokenize(query_text))
        if not terms:
            return set()
        # Intersect smallest-first to keep the working set tiny.
        ordered = sorted(terms, key=lambda t: (self.document_frequency(t), t))
        result = set(self._postings.get(ordered[0], ()))
        for term in ordered[1:]:
            if not result:
                return set()
            result &= set(self._postings.get(term, ()))
        return result


def build_index(docs: Sequence[Document]) -> InvertedIndex:
    seen: set[str] = set()
    raw: dict[str, set[str]] = {}
    for doc in docs:
        if doc.doc_id in seen:
            raise DuplicateDocIdError(f"duplicate doc_id {doc.doc_id!r}")
        seen.add(doc.doc_id)
        for term in set(doc.tokens):
            raw.setdefault(term, set()).add(doc.doc_id)
    postings = {term: tuple(sorted(ids)) for term, ids in sorted(raw.items())}
    return InvertedIndex(postings, n_docs=len(docs))


def load_corpus(path: str | Path) -> list[Document]:
    """Read a corpus file: one `doc_id<TAB>text` per line, `#` comments."""
    docs = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.rstrip("\n").split("\t", 1)
            if len(parts) != 2 or not parts[0]:
                raise CorpusFormatError(
                    f"{path}:{line_no}: expected doc_id<TAB>text"
                )
            docs.append(make_document(parts[0], parts[1]))
    return docs
