"""Trie-constrained beam search and an exhaustive ranking oracle.

At every step a hypothesis may emit only tokens the trie allows after
its prefix, so any sequence that reaches the sentinel names a real
document. Scores are length-unnormalized sums of token log-probs.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

from trieval.errors import TrieError
from trieval.trie import PrefixTrie


class ScorerContract(Protocol):
    def next_logprobs(self, input_tokens: Sequence[str], prefix: Sequence[int]): ...


class _DocidLike(Protocol):
    tokens: tuple[int, ...]
    doc_key: str


@dataclass(frozen=True)
class Hypothesis:
    prefix: tuple[int, ...]
    logprob: float
    complete: bool


@dataclass(frozen=True)
class RankedResult:
    """Descending (doc_key, score) ranking for one query."""

    hits: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        keys = [k for k, _ in self.hits]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate doc_key in ranking")
        scores = [s for _, s in self.hits]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("ranking scores must be non-increasing")

    def doc_keys(self) -> list[str]:
        return [k for k, _ in self.hits]

    def __len__(self) -> int:
        return len(self.hits)


def _order_key(prefix: tuple[int, ...], logprob: float) -> tuple[float, tuple[int, ...]]:
    # best first: score descending, then ascending token order for ties
    return (-logprob, prefix)


def constrained_beam_search(
    scorer: ScorerContract,
    trie: PrefixTrie,
    query: Sequence[str],
    beam_width: int,
    top_k: int,
) -> RankedResult:
    """Beam-decode docids for one query, restricted to trie paths.

    Hypotheses that emit the sentinel move to a finished pool. Active
    ones are pruned only when the pool already holds beam_width results
    and they score strictly below the pool's beam_width-th best, which
    an extension (logprobs <= 0) can never recover from. With
    beam_width at least the number of indexed docids nothing is ever
    pruned, so the result matches exhaustive scoring.
    """
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    if beam_width < top_k:
        raise ValueError(f"beam_width {beam_width} < top_k {top_k}")
    if len(trie) == 0:
        raise TrieError("cannot search an empty trie")

    query = tuple(query)
    sentinel = trie.sentinel_id
    active: list[Hypothesis] = [Hypothesis((), 0.0, False)]
    finished: list[Hypothesis] = []
    while active:
        candidates: list[Hypothesis] = []
        for hyp in active:
            logprobs = scorer.next_logprobs(query, hyp.prefix)
            for tok in trie.allowed_next(hyp.prefix):
                score = hyp.logprob + float(logprobs[tok])
                if tok == sentinel:
                    finished.append(Hypothesis(hyp.prefix, score, True))
                else:
                    candidates.append(Hypothesis(hyp.prefix + (tok,), score, False))
        candidates.sort(key=lambda h: _order_key(h.prefix, h.logprob))
        active = candidates[:beam_width]
        if len(finished) >= beam_width:
            finished.sort(key=lambda h: _order_key(h.prefix, h.logprob))
            bar = finished[beam_width - 1].logprob
            active = [h for h in active if h.logprob >= bar]

    finished.sort(key=lambda h: _order_key(h.prefix, h.logprob))
    hits = tuple(
        (trie.doc_key_at(h.prefix), h.logprob) for h in finished[:top_k]
    )
    return RankedResult(hits)


def brute_force_rank(
    scorer: ScorerContract,
    docids: Sequence[_DocidLike],
    query: Sequence[str],
    top_k: int,
    sentinel_id: int | None = None,
) -> RankedResult:
    """Score every docid's full chain and sort; the testing oracle.

    The chain includes the sentinel step, so scores are directly
    comparable with beam-search output. `sentinel_id` is unused when the
    scorer already knows its vocabulary size; it remains a parameter so
    scorers without a fixed sentinel can be driven explicitly.
    """
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    query = tuple(query)
    scored = []
    for docid in docids:
        score = _chain_score(scorer, query, docid.tokens, sentinel_id)
        scored.append((docid, score))
    scored.sort(key=lambda pair: _order_key(pair[0].tokens, pair[1]))
    return RankedResult(tuple((d.doc_key, s) for d, s in scored[:top_k]))


def _chain_score(
    scorer: ScorerContract,
    query: tuple[str, ...],
    tokens: tuple[int, ...],
    sentinel_id: int | None,
) -> float:
    if sentinel_id is None:
        sequence_score = getattr(scorer, "sequence_score", None)
        if sequence_score is not None:
            return float(sequence_score(query, tokens))
        raise ValueError("sentinel_id required for scorers without sequence_score")
    steps = list(tokens) + [sentinel_id]
    return math.fsum(
        float(scorer.next_logprobs(query, tokens[:pos])[gold])
        for pos, gold in enumerate(steps)
    )


@dataclass(frozen=True)
class LatencyReport:
    """Wall-clock per-query decode times, milliseconds."""

    samples_ms: tuple[float, ...]

    @property
    def count(self) -> int:
        return len(self.samples_ms)

    def as_dict(self) -> dict[str, float | int]:
        if not self.samples_ms:
            return {"count": 0, "mean_ms": 0.0, "median_ms": 0.0, "p95_ms": 0.0}
        ordered = sorted(self.samples_ms)
        n = len(ordered)
        if n % 2:
            median = ordered[n // 2]
        else:
            median = (ordered[n // 2 - 1] + ordered[n // 2]) / 2.0
        p95 = ordered[max(0, math.ceil(0.95 * n) - 1)]
        return {
            "count": n,
            "mean_ms": math.fsum(ordered) / n,
            "median_ms": median,
            "p95_ms": p95,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), indent=2) + "\n", encoding="utf-8")


def retrieve_batch(
    scorer: ScorerContract,
    trie: PrefixTrie,
    queries: Sequence[Sequence[str]],
    beam_width: int,
    top_k: int,
) -> tuple[list[RankedResult], LatencyReport]:
    """Decode each query independently and time each decode."""
    results: list[RankedResult] = []
    timings: list[float] = []
    for query in queries:
        start = time.perf_counter()
        results.append(constrained_beam_search(scorer, trie, query, beam_width, top_k))
        timings.append((time.perf_counter() - start) * 1000.0)
    return results, LatencyReport(tuple(timings))


def dump_rankings(path: str | Path, results: Sequence[RankedResult]) -> None:
    """TSV rows: query_index, rank (1-based), doc_key, score."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for qi, result in enumerate(results):
            for rank, (doc_key, score) in enumerate(result.hits, start=1):
                fh.write(f"{qi}\t{rank}\t{doc_key}\t{score!r}\n")


def load_rankings(path: str | Path) -> list[RankedResult]:
    by_query: dict[int, list[tuple[int, str, float]]] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            qi, rank, doc_key, score = line.split("\t")
            by_query.setdefault(int(qi), []).append((int(rank), doc_key, float(score)))
    results = []
    for qi in sorted(by_query):
        rows = sorted(by_query[qi])
        results.append(RankedResult(tuple((k, s) for _, k, s in rows)))
    return results
