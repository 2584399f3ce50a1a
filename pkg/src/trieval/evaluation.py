"""Retrieval metrics and the docid prefix-similarity analysis.

Metrics are set-based: recall@k averages |top-k hits ∩ relevant| /
|relevant| per query, MRR@k averages the reciprocal rank of the first
relevant hit within the cutoff. The analysis half measures whether
documents whose docids share a prefix are also close in embedding
space, reported as a histogram of pairwise cosine similarities.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from trieval.decoder import RankedResult
from trieval.docids import DocidSequence, EmbeddingMatrix
from trieval.errors import EvaluationError


@dataclass(frozen=True)
class EvalRecord:
    """One scored query: its relevant doc_keys and the produced ranking."""

    relevant: frozenset[str]
    result: RankedResult

    def __post_init__(self) -> None:
        if not self.relevant:
            raise EvaluationError("query scored with an empty relevant set")


def recall_at_k(records: Sequence[EvalRecord], k: int) -> float:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not records:
        raise EvaluationError("no records to score")
    per_query = []
    for record in records:
        top = record.result.doc_keys()[:k]
        per_query.append(len(record.relevant.intersection(top)) / len(record.relevant))
    return math.fsum(per_query) / len(per_query)


def mrr_at_k(records: Sequence[EvalRecord], k: int) -> float:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not records:
        raise EvaluationError("no records to score")
    per_query = []
    for record in records:
        reciprocal = 0.0
        for rank, doc_key in enumerate(record.result.doc_keys()[:k], start=1):
            if doc_key in record.relevant:
                reciprocal = 1.0 / rank
                break
        per_query.append(reciprocal)
    return math.fsum(per_query) / len(per_query)


@dataclass(frozen=True)
class MetricReport:
    recall_1: float
    recall_5: float
    recall_10: float
    mrr_10: float
    query_count: int

    def as_dict(self) -> dict[str, float | int]:
        return {
            "recall@1": self.recall_1,
            "recall@5": self.recall_5,
            "recall@10": self.recall_10,
            "mrr@10": self.mrr_10,
            "query_count": self.query_count,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path: str | Path) -> "MetricReport":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            recall_1=raw["recall@1"],
            recall_5=raw["recall@5"],
            recall_10=raw["recall@10"],
            mrr_10=raw["mrr@10"],
            query_count=raw["query_count"],
        )


def compute_metrics(records: Sequence[EvalRecord]) -> MetricReport:
    return MetricReport(
        recall_1=recall_at_k(records, 1),
        recall_5=recall_at_k(records, 5),
        recall_10=recall_at_k(records, 10),
        mrr_10=mrr_at_k(records, 10),
        query_count=len(records),
    )


def format_metric_table(rows: dict[str, MetricReport]) -> str:
    """Aligned-column text table, one row per labeled report."""
    if not rows:
        raise EvaluationError("no metric rows to format")
    label_width = max(len("variant"), max(len(label) for label in rows))
    header = (
        f"{'variant':<{label_width}}  {'R@1':>7}  {'R@5':>7}  "
        f"{'R@10':>7}  {'MRR@10':>7}  {'queries':>7}"
    )
    lines = [header]
    for label, report in rows.items():
        lines.append(
            f"{label:<{label_width}}  {report.recall_1:>7.4f}  {report.recall_5:>7.4f}  "
            f"{report.recall_10:>7.4f}  {report.mrr_10:>7.4f}  {report.query_count:>7d}"
        )
    return "\n".join(lines)


# --- prefix similarity analysis ----------------------------------------------


@dataclass(frozen=True)
class SimilarityHistogram:
    """Pairwise cosine similarities of one docid prefix group, binned over [-1, 1]."""

    prefix: tuple[int, ...]
    group_size: int
    sampled: int
    bin_width: float
    counts: tuple[int, ...]
    mean_similarity: float

    @property
    def pair_count(self) -> int:
        return sum(self.counts)

    def save(self, path: str | Path) -> None:
        lines = ["bin_low,bin_high,count"]
        for i, count in enumerate(self.counts):
            low = -1.0 + i * self.bin_width
            high = min(1.0, low + self.bin_width)
            lines.append(f"{low:.6f},{high:.6f},{count}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def mean_pairwise_cosine(vectors: np.ndarray) -> float:
    """Mean cosine similarity over all unordered pairs of rows."""
    if vectors.shape[0] < 2:
        raise ValueError("need at least 2 vectors")
    sims = _pairwise_cosines(vectors)
    return float(sims.mean())


def _pairwise_cosines(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    if (norms == 0).any():
        raise EvaluationError("zero vector in similarity analysis")
    unit = vectors / norms
    sims = unit @ unit.T
    iu = np.triu_indices(len(vectors), k=1)
    return sims[iu]


def largest_prefix_group(
    docids: Sequence[DocidSequence], prefix_len: int
) -> tuple[tuple[int, ...], list[int]]:
    """Biggest set of document positions sharing a docid prefix.

    Ties go to the lexicographically smallest prefix. Docids shorter
    than prefix_len cannot share one and are ignored.
    """
    if prefix_len < 1:
        raise ValueError(f"prefix_len must be >= 1, got {prefix_len}")
    groups: dict[tuple[int, ...], list[int]] = {}
    for pos, docid in enumerate(docids):
        if len(docid.tokens) >= prefix_len:
            groups.setdefault(docid.tokens[:prefix_len], []).append(pos)
    qualifying = {p: members for p, members in groups.items() if len(members) >= 2}
    if not qualifying:
        raise EvaluationError(
            f"no prefix of length {prefix_len} is shared by 2 or more docids"
        )
    prefix = min(qualifying, key=lambda p: (-len(qualifying[p]), p))
    return prefix, qualifying[prefix]


def prefix_similarity_analysis(
    docids: Sequence[DocidSequence],
    embeddings: EmbeddingMatrix,
    prefix_len: int,
    sample_n: int,
    bin_width: float,
    seed: int,
) -> SimilarityHistogram:
    """Histogram the pairwise similarity inside one shared-prefix group.

    Takes the largest group of docids agreeing on their first
    prefix_len tokens, samples at most sample_n of its documents with a
    seeded generator, and bins every pairwise cosine similarity at
    bin_width intervals across [-1, 1].
    """
    if sample_n < 2:
        raise ValueError(f"sample_n must be >= 2, got {sample_n}")
    if not 0 < bin_width <= 2:
        raise ValueError(f"bin_width must be in (0, 2], got {bin_width}")
    if len(docids) != embeddings.vectors.shape[0]:
        raise EvaluationError(
            f"docid count {len(docids)} != embedding rows {embeddings.vectors.shape[0]}"
        )
    prefix, members = largest_prefix_group(docids, prefix_len)
    group_size = len(members)
    if len(members) > sample_n:
        rng = np.random.default_rng(seed)
        chosen = sorted(rng.choice(len(members), size=sample_n, replace=False))
        members = [members[i] for i in chosen]
    vectors = embeddings.vectors[members]
    sims = _pairwise_cosines(vectors)

    n_bins = max(1, round(2.0 / bin_width))
    counts = [0] * n_bins
    for sim in sims:
        idx = int((sim + 1.0) // bin_width)
        counts[min(max(idx, 0), n_bins - 1)] += 1
    return SimilarityHistogram(
        prefix=prefix,
        group_size=group_size,
        sampled=len(members),
        bin_width=bin_width,
        counts=tuple(counts),
        mean_similarity=float(sims.mean()),
    )
