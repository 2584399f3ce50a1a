"""End-to-end pipeline steps behind the CLI subcommands.

Each step reads the artifacts of earlier steps from the run directory
and writes its own under fixed names, so a run directory is a complete,
reproducible record: corpus stats, docids, trie, training pairs, scorer
checkpoint, loss traces, rankings, latency, metrics, and the
prefix-similarity histogram.
"""

from __future__ import annotations

import json
import logging
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from trieval.config import (
    SEED_ANALYZE,
    SEED_EMBED,
    SEED_HASH,
    SEED_KMEANS,
    SEED_PSEUDO,
    SEED_TRAIN,
    RunConfig,
)
from trieval.corpus import Corpus, load_corpus, tokenize
from trieval.decoder import (
    LatencyReport,
    RankedResult,
    dump_rankings,
    load_rankings,
    retrieve_batch,
)
from trieval.docids import (
    DocidIndex,
    DocidVocabulary,
    EmbeddingMatrix,
    KeywordDocidConfig,
    build_docids,
    dump_docids,
    dump_embeddings,
    embed_documents,
    load_docids,
    load_embeddings,
)
from trieval.errors import TrainingError
from trieval.evaluation import (
    EvalRecord,
    MetricReport,
    SimilarityHistogram,
    compute_metrics,
    format_metric_table,
    prefix_similarity_analysis,
)
from trieval.scorer import LinearScorer, ScorerConfig, dump_loss_trace
from trieval.training import (
    StagePlan,
    StageResult,
    TrainingPair,
    dump_pairs,
    gen_general,
    gen_search_pairs,
    gen_supervised,
    load_pairs,
    load_qrels,
    run_three_stage,
)
from trieval.trie import PrefixTrie

log = logging.getLogger(__name__)

STATS_FILE = "corpus_stats.json"
VOCAB_FILE = "vocab.json"
DOCIDS_FILE = "docids.tsv"
TRIE_FILE = "trie.bin"
EMBEDDINGS_FILE = "embeddings.jsonl"
PAIRS_FILE = "pairs.tsv"
SCORER_FILE = "scorer.bin"
STAGES_FILE = "stages.json"
RANKINGS_FILE = "retrieval.tsv"
LATENCY_FILE = "latency.json"
METRICS_JSON_FILE = "metrics.json"
METRICS_TABLE_FILE = "metrics.txt"
HISTOGRAM_FILE = "histogram.csv"
ABLATION_JSON_FILE = "ablation.json"
ABLATION_TABLE_FILE = "ablation.txt"

ABLATION_VARIANTS = ("full", "no_general", "no_search", "no_supervised")


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"missing file {path} ({hint})")
    return path


def _plan(config: RunConfig) -> StagePlan:
    return StagePlan(
        passages_per_doc=config.passages_per_doc,
        terms_per_doc=config.terms_per_doc,
        key_term_count=config.key_term_count,
        pseudo_queries_per_doc=config.pseudo_queries_per_doc,
        general_epochs=config.general_epochs,
        search_epochs=config.search_epochs,
        supervised_epochs=config.supervised_epochs,
        lr=config.lr,
    )


def _scorer_config(config: RunConfig) -> ScorerConfig:
    return ScorerConfig(
        feature_dim=config.feature_dim,
        position_buckets=config.position_buckets,
        hash_seed=config.component_seed(SEED_HASH),
    )


def run_ingest(config: RunConfig) -> Corpus:
    """Load and validate the corpus; record its vital statistics."""
    corpus = load_corpus(config.corpus)
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    stats = {
        "documents": len(corpus),
        "skipped_records": corpus.skipped,
        "distinct_terms": len(corpus.stats.doc_frequency),
    }
    (out / STATS_FILE).write_text(
        json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return corpus


def run_build_docids(config: RunConfig) -> DocidIndex:
    """Encode every document, then freeze vocabulary, docids, and trie."""
    corpus = load_corpus(config.corpus)
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    embeddings = None
    if config.docid_kind == "pq":
        embeddings = _load_or_embed(config, corpus, write=True)
    index = build_docids(
        corpus,
        config.docid_kind,
        keyword_config=KeywordDocidConfig(config.title_length_threshold),
        embeddings=embeddings,
        m=config.m,
        k=config.k,
        embed_dim=config.embed_dim,
        seed=config.component_seed(SEED_KMEANS),
        kmeans_iters=config.kmeans_iters,
    )
    index.vocab.save(out / VOCAB_FILE)
    dump_docids(out / DOCIDS_FILE, index)
    trie = PrefixTrie.from_docids(index.docids, index.vocab.sentinel_id)
    trie.save(out / TRIE_FILE)
    return index


def _load_or_embed(config: RunConfig, corpus: Corpus, write: bool = False) -> EmbeddingMatrix:
    path = config.out_dir / EMBEDDINGS_FILE
    if path.exists():
        return load_embeddings(path, corpus)
    embeddings = embed_documents(corpus, config.embed_dim, config.component_seed(SEED_EMBED))
    if write:
        dump_embeddings(path, corpus, embeddings)
    return embeddings


def _load_index(config: RunConfig) -> tuple[Corpus, DocidIndex]:
    corpus = load_corpus(config.corpus)
    out = config.out_dir
    vocab = DocidVocabulary.load(_require(out / VOCAB_FILE, "run `build-docids` first"))
    docids = load_docids(_require(out / DOCIDS_FILE, "run `build-docids` first"), vocab)
    return corpus, DocidIndex(vocab=vocab, docids=docids)


def run_gen_data(config: RunConfig) -> list[TrainingPair]:
    """Generate all three stages' training pairs and dump them."""
    corpus, index = _load_index(config)
    plan = _plan(config)
    pairs = gen_general(corpus, index.docids, config.s, plan)
    pairs += gen_search_pairs(
        corpus, index.docids, plan, config.component_seed(SEED_PSEUDO), s=config.s
    )
    qrels = load_qrels(_require(Path(config.qrels), "training qrels input"))
    pairs += gen_supervised(qrels, corpus, index.docids)
    dump_pairs(config.out_dir / PAIRS_FILE, pairs, index.vocab)
    return pairs


def _split_stages(
    pairs: Sequence[TrainingPair],
) -> tuple[list[TrainingPair], list[TrainingPair], list[TrainingPair]]:
    general = [p for p in pairs if p.stage in ("general_passage", "general_terms")]
    pseudo = [p for p in pairs if p.stage == "pseudo_query"]
    supervised = [p for p in pairs if p.stage == "supervised"]
    return general, pseudo, supervised


def run_train(
    config: RunConfig, skip_stages: Sequence[str] = ()
) -> tuple[LinearScorer, list[StageResult]]:
    """Three-stage training from dumped pairs; checkpoints the scorer.

    `skip_stages` names stages to drop (general, search, supervised) by
    forcing their epoch count to zero, which is how ablation variants
    are produced.
    """
    for stage in skip_stages:
        if stage not in ("general", "search", "supervised"):
            raise TrainingError(f"unknown stage to skip: {stage!r}")
    corpus, index = _load_index(config)
    pairs = load_pairs(
        _require(config.out_dir / PAIRS_FILE, "run `gen-data` first"),
        index.vocab,
        index.docids,
    )
    plan = _plan(config)
    if "general" in skip_stages:
        plan = replace(plan, general_epochs=0)
    if "search" in skip_stages:
        plan = replace(plan, search_epochs=0)
    if "supervised" in skip_stages:
        plan = replace(plan, supervised_epochs=0)
    general, pseudo, supervised = _split_stages(pairs)
    scorer = LinearScorer.for_vocab(index.vocab, _scorer_config(config))
    results = run_three_stage(
        scorer, plan, general, pseudo, supervised, seed=config.component_seed(SEED_TRAIN)
    )
    out = config.out_dir
    scorer.save(out / SCORER_FILE)
    summary = []
    for result in results:
        dump_loss_trace(out / f"loss_{result.name}.csv", result.trace)
        summary.append(
            {
                "stage": result.name,
                "epochs": len(result.trace),
                "final_loss": result.trace[-1],
                "weights_digest": result.weights_digest,
            }
        )
    (out / STAGES_FILE).write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return scorer, results


def read_query_file(path: str | Path) -> tuple[list[str], dict[str, set[str]]]:
    """Unique queries (first-appearance order) and their relevant doc_keys."""
    queries: list[str] = []
    relevant: dict[str, set[str]] = {}
    for query, doc_key in load_qrels(path):
        if query not in relevant:
            relevant[query] = set()
            queries.append(query)
        relevant[query].add(doc_key)
    return queries, relevant


def run_retrieve(config: RunConfig) -> tuple[list[RankedResult], LatencyReport]:
    """Decode rankings for every held-out query; write TSV + latency."""
    out = config.out_dir
    scorer = LinearScorer.load(_require(out / SCORER_FILE, "run `train` first"))
    trie = PrefixTrie.load(_require(out / TRIE_FILE, "run `build-docids` first"))
    queries, _ = read_query_file(_require(Path(config.eval_qrels), "held-out qrels input"))
    tokenized = [tokenize(q) for q in queries]
    results, latency = retrieve_batch(
        scorer, trie, tokenized, config.beam_width, config.top_k
    )
    dump_rankings(out / RANKINGS_FILE, results)
    latency.save(out / LATENCY_FILE)
    return results, latency


def run_eval(config: RunConfig) -> MetricReport:
    """Score dumped rankings against the held-out qrels."""
    out = config.out_dir
    results = load_rankings(_require(out / RANKINGS_FILE, "run `retrieve` first"))
    queries, relevant = read_query_file(Path(config.eval_qrels))
    if len(results) != len(queries):
        raise TrainingError(
            f"{len(results)} rankings for {len(queries)} queries; rerun retrieve"
        )
    records = [
        EvalRecord(frozenset(relevant[q]), result)
        for q, result in zip(queries, results)
    ]
    report = compute_metrics(records)
    report.save(out / METRICS_JSON_FILE)
    table = format_metric_table({config.docid_kind: report})
    (out / METRICS_TABLE_FILE).write_text(table + "\n", encoding="utf-8")
    return report


def run_analyze(config: RunConfig, prefix_len: int = 2, sample_n: int = 100) -> SimilarityHistogram:
    """Prefix-similarity histogram over the built docid index."""
    corpus, index = _load_index(config)
    embeddings = _load_or_embed(config, corpus)
    histogram = prefix_similarity_analysis(
        index.docids,
        embeddings,
        prefix_len=prefix_len,
        sample_n=sample_n,
        bin_width=0.025,
        seed=config.component_seed(SEED_ANALYZE),
    )
    histogram.save(config.out_dir / HISTOGRAM_FILE)
    return histogram


def run_all(config: RunConfig, skip_stages: Sequence[str] = ()) -> MetricReport:
    """ingest, build-docids, gen-data, train, retrieve, eval in sequence."""
    run_ingest(config)
    run_build_docids(config)
    run_gen_data(config)
    run_train(config, skip_stages)
    run_retrieve(config)
    return run_eval(config)


_VARIANT_SKIPS = {
    "full": (),
    "no_general": ("general",),
    "no_search": ("search",),
    "no_supervised": ("supervised",),
}


def ablation_run(config: RunConfig) -> dict[str, MetricReport]:
    """Evaluate the full model against each single-stage-removed variant.

    Shares one corpus, docid index, and pair dump across variants; each
    variant trains in its own subdirectory of the run directory.
    """
    base = config.out_dir
    run_ingest(config)
    run_build_docids(config)
    run_gen_data(config)
    reports: dict[str, MetricReport] = {}
    for variant in ABLATION_VARIANTS:
        sub = base / "ablation" / variant
        sub.mkdir(parents=True, exist_ok=True)
        for name in (VOCAB_FILE, DOCIDS_FILE, TRIE_FILE, PAIRS_FILE):
            (sub / name).write_bytes((base / name).read_bytes())
        variant_config = replace(config, out=str(sub))
        run_train(variant_config, _VARIANT_SKIPS[variant])
        run_retrieve(variant_config)
        reports[variant] = run_eval(variant_config)
    payload = {name: report.as_dict() for name, report in reports.items()}
    (base / ABLATION_JSON_FILE).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    table = format_metric_table(reports)
    (base / ABLATION_TABLE_FILE).write_text(table + "\n", encoding="utf-8")
    return reports
