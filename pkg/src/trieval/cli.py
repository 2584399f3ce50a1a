"""Command-line pipeline: ingest, build-docids, gen-data, train, retrieve, eval, analyze.

Every configuration key can come from defaults, a --config key=value
file, or a same-named flag, in increasing priority. Each subcommand
prints the fully resolved config before it runs, writes its artifacts
into the run directory, and exits nonzero with a single `error:` line
on failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from typing import Sequence

from trieval import pipeline
from trieval.config import RunConfig, build_config, parse_config_file
from trieval.errors import TrievalError
from trieval.evaluation import format_metric_table
from trieval.training import stage_pair_counts

_FLAG_TYPES = {"int": int, "float": float, "str": str}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="key=value config file")
    for field in fields(RunConfig):
        parser.add_argument(
            "--" + field.name.replace("_", "-"),
            dest=field.name,
            type=_FLAG_TYPES.get(str(field.type), str),
            default=None,
            help=f"override {field.name} (default {field.default})",
        )


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    file_values = parse_config_file(args.config) if args.config else None
    overrides = {
        field.name: getattr(args, field.name)
        for field in fields(RunConfig)
        if getattr(args, field.name, None) is not None
    }
    return build_config(file_values, overrides)


def _cmd_ingest(config: RunConfig, args: argparse.Namespace) -> None:
    corpus = pipeline.run_ingest(config)
    print(f"ingested {len(corpus)} documents ({corpus.skipped} records skipped)")


def _cmd_build_docids(config: RunConfig, args: argparse.Namespace) -> None:
    index = pipeline.run_build_docids(config)
    print(
        f"built {len(index.docids)} {index.vocab.kind} docids "
        f"over {len(index.vocab)} tokens"
    )


def _cmd_gen_data(config: RunConfig, args: argparse.Namespace) -> None:
    pairs = pipeline.run_gen_data(config)
    counts = stage_pair_counts(pairs)
    summary = ", ".join(f"{stage}={n}" for stage, n in counts.items())
    print(f"generated {len(pairs)} pairs ({summary})")


def _cmd_train(config: RunConfig, args: argparse.Namespace) -> None:
    _, results = pipeline.run_train(config, tuple(args.skip_stage))
    for result in results:
        print(
            f"stage {result.name}: {len(result.trace)} epochs, "
            f"final mean loss {result.trace[-1]:.4f}"
        )


def _cmd_retrieve(config: RunConfig, args: argparse.Namespace) -> None:
    results, latency = pipeline.run_retrieve(config)
    stats = latency.as_dict()
    print(
        f"retrieved top-{config.top_k} for {stats['count']} queries "
        f"(mean {stats['mean_ms']:.2f} ms, p95 {stats['p95_ms']:.2f} ms)"
    )


def _cmd_eval(config: RunConfig, args: argparse.Namespace) -> None:
    report = pipeline.run_eval(config)
    print(format_metric_table({config.docid_kind: report}))


def _cmd_analyze(config: RunConfig, args: argparse.Namespace) -> None:
    histogram = pipeline.run_analyze(
        config, prefix_len=args.prefix_len, sample_n=args.sample_n
    )
    print(
        f"prefix group {histogram.prefix}: {histogram.sampled} of "
        f"{histogram.group_size} docs, {histogram.pair_count} pairs, "
        f"mean cosine {histogram.mean_similarity:.4f}"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trieval",
        description="generative document retrieval over docid prefix tries",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    commands = {
        "ingest": ("validate the corpus and record its statistics", _cmd_ingest),
        "build-docids": ("encode docids, vocabulary, and prefix trie", _cmd_build_docids),
        "gen-data": ("generate training pairs for all three stages", _cmd_gen_data),
        "train": ("run the staged training schedule", _cmd_train),
        "retrieve": ("beam-decode rankings for held-out queries", _cmd_retrieve),
        "eval": ("score dumped rankings against held-out qrels", _cmd_eval),
        "analyze": ("histogram embedding similarity within a prefix group", _cmd_analyze),
    }
    for name, (help_text, handler) in commands.items():
        cmd = sub.add_parser(name, help=help_text)
        _add_config_flags(cmd)
        cmd.set_defaults(handler=handler)
        if name == "train":
            cmd.add_argument(
                "--skip-stage",
                action="append",
                default=[],
                choices=("general", "search", "supervised"),
                help="drop a training stage (repeatable; ablation variants)",
            )
        if name == "analyze":
            cmd.add_argument("--prefix-len", type=int, default=2)
            cmd.add_argument("--sample-n", type=int, default=100)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    args = build_parser().parse_args(argv)
    try:
        config = _config_from_args(args)
        for line in config.effective_lines():
            print(line)
        args.handler(config, args)
    except (TrievalError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
