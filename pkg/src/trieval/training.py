"""Training pair generation and the three-stage training schedule.

Pairs map a token sequence (passage, key terms, pseudo query, or real
query) to a document's docid. Stages run strictly in order: general
pre-training on document content, search-oriented pre-training on
pseudo queries, then supervised fine-tuning on annotated queries, each
stage picking up the weights the previous one left behind.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from trieval.corpus import (
    Corpus,
    CorpusStats,
    Document,
    segment_passages,
    select_key_terms,
    tokenize,
)
from trieval.docids import DocidSequence, DocidVocabulary
from trieval.errors import TrainingError
from trieval.scorer import LinearScorer

log = logging.getLogger(__name__)

STAGES = ("general_passage", "general_terms", "pseudo_query", "supervised")


@dataclass(frozen=True)
class TrainingPair:
    input: tuple[str, ...]
    target: DocidSequence
    stage: str

    def __post_init__(self) -> None:
        if not self.input:
            raise TrainingError(f"empty input for document {self.target.doc_key!r}")
        if self.stage not in STAGES:
            raise TrainingError(f"unknown stage {self.stage!r}")


@dataclass(frozen=True)
class StagePlan:
    """How much data each stage sees and how long it trains."""

    passages_per_doc: int = 10
    terms_per_doc: int = 1
    key_term_count: int = 10
    pseudo_queries_per_doc: int = 10
    general_epochs: int = 12
    search_epochs: int = 12
    supervised_epochs: int = 12
    lr: float = 1e-3

    def __post_init__(self) -> None:
        counts = (
            self.passages_per_doc,
            self.terms_per_doc,
            self.key_term_count,
            self.pseudo_queries_per_doc,
            self.general_epochs,
            self.search_epochs,
            self.supervised_epochs,
        )
        if any(c < 0 for c in counts):
            raise ValueError("stage plan counts must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")


def gen_general(
    corpus: Corpus, docids: Sequence[DocidSequence], s: int, plan: StagePlan
) -> list[TrainingPair]:
    """Content-to-docid pairs: leading passages plus key-term sequences.

    Per document: its first min(passages_per_doc, available) windows of
    s tokens, then terms_per_doc copies of the top key_term_count tf-idf
    terms. Output follows corpus order.
    """
    if len(docids) != len(corpus):
        raise TrainingError(
            f"docid count {len(docids)} != document count {len(corpus)}"
        )
    pairs: list[TrainingPair] = []
    for doc, docid in zip(corpus.documents, docids):
        for window in segment_passages(doc, s)[: plan.passages_per_doc]:
            pairs.append(TrainingPair(tuple(window), docid, "general_passage"))
        if plan.terms_per_doc:
            terms = tuple(select_key_terms(doc, corpus.stats, plan.key_term_count))
            for _ in range(plan.terms_per_doc):
                pairs.append(TrainingPair(terms, docid, "general_terms"))
    return pairs


def gen_pseudo_queries(
    doc: Document,
    k: int,
    seed: int,
    stats: CorpusStats,
    s: int = 64,
    top_terms: int = 10,
) -> list[tuple[str, ...]]:
    """Query-like spans of the document's first passage.

    Candidates are every contiguous span of 3 to 8 tokens in the first
    s-token window, deduplicated in order of appearance. When more than
    k remain, k are drawn without replacement with weight 1 + (number
    of the document's top tf-idf terms the span contains), so spans
    that mention characteristic vocabulary are preferred.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    passage = segment_passages(doc, s)[0]
    spans: list[tuple[str, ...]] = []
    seen: set[tuple[str, ...]] = set()
    for length in range(3, 9):
        for start in range(len(passage) - length + 1):
            span = tuple(passage[start : start + length])
            if span not in seen:
                seen.add(span)
                spans.append(span)
    if not spans and passage:
        # passage shorter than the minimum span: fall back to the whole thing
        spans = [tuple(passage)]
    if len(spans) <= k:
        return spans
    key_terms = set(select_key_terms(doc, stats, top_terms))
    weights = np.array(
        [1.0 + len(key_terms.intersection(span)) for span in spans]
    )
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(spans), size=k, replace=False, p=weights / weights.sum())
    return [spans[i] for i in picks]


def gen_search_pairs(
    corpus: Corpus, docids: Sequence[DocidSequence], plan: StagePlan, seed: int, s: int = 64
) -> list[TrainingPair]:
    """Pseudo-query-to-docid pairs for every document, corpus order."""
    if len(docids) != len(corpus):
        raise TrainingError(
            f"docid count {len(docids)} != document count {len(corpus)}"
        )
    pairs: list[TrainingPair] = []
    if plan.pseudo_queries_per_doc == 0:
        return pairs
    for i, (doc, docid) in enumerate(zip(corpus.documents, docids)):
        queries = gen_pseudo_queries(
            doc, plan.pseudo_queries_per_doc, seed + i, corpus.stats, s=s
        )
        for query in queries:
            if query:
                pairs.append(TrainingPair(query, docid, "pseudo_query"))
    return pairs


def load_external_queries(path: str | Path) -> dict[str, list[str]]:
    """JSONL {doc_key, queries: [str]} records, e.g. from a neural generator."""
    out: dict[str, list[str]] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                key, queries = str(record["doc_key"]), list(record["queries"])
            except (ValueError, KeyError, TypeError) as exc:
                raise TrainingError(f"{path}:{lineno}: bad query record ({exc})") from exc
            out.setdefault(key, []).extend(str(q) for q in queries)
    return out


def gen_search_pairs_external(
    corpus: Corpus,
    docids: Sequence[DocidSequence],
    queries_by_key: dict[str, list[str]],
    per_doc_cap: int,
) -> list[TrainingPair]:
    """Like gen_search_pairs but with externally supplied pseudo queries."""
    pairs: list[TrainingPair] = []
    for doc, docid in zip(corpus.documents, docids):
        for query in queries_by_key.get(doc.doc_key, [])[:per_doc_cap]:
            tokens = tuple(tokenize(query))
            if tokens:
                pairs.append(TrainingPair(tokens, docid, "pseudo_query"))
    return pairs


def load_qrels(path: str | Path) -> list[tuple[str, str]]:
    """TSV `query text<TAB>doc_key` rows."""
    rows: list[tuple[str, str]] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise TrainingError(f"{path}:{lineno}: expected `query<TAB>doc_key`")
            rows.append((parts[0], parts[1]))
    return rows


def gen_supervised(
    qrels: Sequence[tuple[str, str]], corpus: Corpus, docids: Sequence[DocidSequence]
) -> list[TrainingPair]:
    """One query-to-docid pair per qrel row; unknown doc_keys are skipped."""
    by_key = {d.doc_key: d for d in docids}
    pairs: list[TrainingPair] = []
    skipped = 0
    for query, doc_key in qrels:
        docid = by_key.get(doc_key)
        if docid is None or corpus.get(doc_key) is None:
            log.warning("qrel references unknown doc_key %r, skipped", doc_key)
            skipped += 1
            continue
        tokens = tuple(tokenize(query))
        if not tokens:
            log.warning("qrel query %r tokenizes to nothing, skipped", query)
            skipped += 1
            continue
        pairs.append(TrainingPair(tokens, docid, "supervised"))
    if qrels and not pairs:
        raise TrainingError(f"no usable qrels ({skipped} rows skipped)")
    return pairs


@dataclass(frozen=True)
class StageResult:
    name: str
    trace: tuple[float, ...]
    weights_digest: str


def run_three_stage(
    scorer: LinearScorer,
    plan: StagePlan,
    general_pairs: Sequence[TrainingPair],
    pseudo_pairs: Sequence[TrainingPair],
    supervised_pairs: Sequence[TrainingPair],
    seed: int = 0,
) -> list[StageResult]:
    """Train sequentially: general, search-oriented, supervised.

    Each stage continues from the previous stage's weights but starts
    its optimizer fresh. A stage with 0 epochs is skipped outright (its
    pair list may then be empty), which is how single-stage ablations
    run. Returns one result per executed stage with its loss trace and
    a digest of the weights it ended on.
    """
    stages = (
        ("general", general_pairs, plan.general_epochs),
        ("search", pseudo_pairs, plan.search_epochs),
        ("supervised", supervised_pairs, plan.supervised_epochs),
    )
    results: list[StageResult] = []
    for offset, (name, pairs, epochs) in enumerate(stages):
        if epochs == 0:
            continue
        if not pairs:
            raise TrainingError(f"stage {name!r} has no training pairs")
        scorer.reset_optimizer()
        trace = scorer.train(pairs, epochs, plan.lr, seed + offset)
        results.append(StageResult(name, tuple(trace), scorer.weights_digest()))
    return results


def dump_pairs(path: str | Path, pairs: Sequence[TrainingPair], vocab: DocidVocabulary) -> None:
    """TSV dump: stage, input tokens space-joined, docid tokens space-joined."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for pair in pairs:
            docid_tokens = " ".join(vocab.tokens[t] for t in pair.target.tokens)
            fh.write(f"{pair.stage}\t{' '.join(pair.input)}\t{docid_tokens}\n")


def load_pairs(
    path: str | Path, vocab: DocidVocabulary, docids: Sequence[DocidSequence]
) -> list[TrainingPair]:
    """Inverse of dump_pairs; targets are matched back to known docids."""
    by_tokens = {d.tokens: d for d in docids}
    pairs: list[TrainingPair] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise TrainingError(f"{path}:{lineno}: expected 3 tab-separated fields")
            stage, input_str, docid_str = parts
            token_ids = tuple(vocab.id_of(t) for t in docid_str.split(" "))
            target = by_tokens.get(token_ids)
            if target is None:
                raise TrainingError(f"{path}:{lineno}: docid not in the active index")
            pairs.append(TrainingPair(tuple(input_str.split(" ")), target, stage))
    return pairs


def stage_pair_counts(pairs: Sequence[TrainingPair]) -> dict[str, int]:
    counts = dict.fromkeys(STAGES, 0)
    for pair in pairs:
        counts[pair.stage] += 1
    return counts
