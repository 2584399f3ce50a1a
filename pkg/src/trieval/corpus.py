"""Corpus loading, tokenization, passage segmentation, and term statistics.

The corpus file is UTF-8, one JSON object per line with fields
``doc_key``, ``url``, ``title``, ``body``; unknown fields are ignored.
Documents whose body tokenizes to nothing are skipped (reported via
logging, counted on the corpus), and a duplicate ``doc_key`` aborts the
load. Everything returned here is immutable after load and safe to share
across threads.
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from trieval.errors import CorpusError

log = logging.getLogger(__name__)

# Tokens are maximal runs of letters/digits; underscore counts as a separator.
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

TokenSequence = list[str]


def tokenize(text: str) -> TokenSequence:
    """Lowercase and split on whitespace, punctuation, and underscores."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Document:
    doc_key: str
    url: str
    title: str
    body: str


@dataclass(frozen=True)
class CorpusStats:
    """Document count and per-term document frequency over tokenized bodies."""

    doc_count: int
    doc_frequency: dict[str, int]

    def idf(self, term: str) -> float:
        """ln(N / df); unsmoothed, so corpus-universal terms weigh zero."""
        df = self.doc_frequency.get(term)
        if df is None:
            return 0.0
        return math.log(self.doc_count / df)


@dataclass(frozen=True)
class Corpus:
    documents: tuple[Document, ...]
    stats: CorpusStats
    skipped: int = 0
    _by_key: dict[str, int] = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.documents)

    def index_of(self, doc_key: str) -> int | None:
        return self._by_key.get(doc_key)

    def get(self, doc_key: str) -> Document | None:
        idx = self._by_key.get(doc_key)
        return None if idx is None else self.documents[idx]


def _build_stats(documents: list[Document]) -> CorpusStats:
    df: Counter[str] = Counter()
    for doc in documents:
        df.update(set(tokenize(doc.body)))
    return CorpusStats(doc_count=len(documents), doc_frequency=dict(df))


def load_corpus(path: str | Path) -> Corpus:
    """Load a line-delimited JSON corpus file.

    Malformed lines are reported with their line number and skipped;
    empty-body documents are skipped and counted. Zero valid documents
    or a duplicate doc_key is fatal.
    """
    path = Path(path)
    documents: list[Document] = []
    seen: set[str] = set()
    skipped = 0
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                doc = Document(
                    doc_key=str(record["doc_key"]),
                    url=str(record.get("url", "")),
                    title=str(record.get("title", "")),
                    body=str(record["body"]),
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                log.warning("%s:%d: malformed record skipped (%s)", path, lineno, exc)
                skipped += 1
                continue
            if not tokenize(doc.body):
                log.warning("%s:%d: empty body, document %r skipped", path, lineno, doc.doc_key)
                skipped += 1
                continue
            if doc.doc_key in seen:
                raise CorpusError(f"duplicate doc_key {doc.doc_key!r} at {path}:{lineno}")
            seen.add(doc.doc_key)
            documents.append(doc)
    if not documents:
        raise CorpusError(f"no valid documents in {path}")
    corpus = Corpus(
        documents=tuple(documents),
        stats=_build_stats(documents),
        skipped=skipped,
        _by_key={d.doc_key: i for i, d in enumerate(documents)},
    )
    if skipped:
        log.info("loaded %d documents from %s (%d skipped)", len(documents), path, skipped)
    return corpus


def segment_passages(doc: Document, s: int) -> list[TokenSequence]:
    """Split the body into consecutive non-overlapping windows of s tokens.

    The final window may be shorter; it is kept when non-empty.
    """
    if s < 1:
        raise ValueError(f"window size must be >= 1, got {s}")
    tokens = tokenize(doc.body)
    return [tokens[i : i + s] for i in range(0, len(tokens), s)]


def select_key_terms(doc: Document, stats: CorpusStats, n_terms: int) -> TokenSequence:
    """Pick the n_terms distinct body terms with the highest tf-idf weight.

    Weight is tf(t, doc) * ln(N / df(t)); ties break by ascending term so
    the ranking is reproducible. Returns fewer terms when the document
    has fewer distinct terms.
    """
    if n_terms < 1:
        raise ValueError(f"n_terms must be >= 1, got {n_terms}")
    counts = Counter(tokenize(doc.body))
    ranked = sorted(
        counts.items(), key=lambda item: (-item[1] * stats.idf(item[0]), item[0])
    )
    return [term for term, _ in ranked[:n_terms]]
