"""Command-line entry point.

Subcommands: synth, ingest, stats, train-lda, build-hierarchy,
train-ranker, evaluate, suggest.  Exit codes: 0 success, 2 configuration
error, 3 missing artifact, 4 data error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from .. import log_model
from ..corpus_index import CorpusFormatError, DuplicateDocIdError
from ..features import FEATURE_NAMES
from .config import ConfigError, ExperimentConfig, load_config
from . import run as stages

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING_ARTIFACT = 3
EXIT_DATA = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="intrasuggest",
        description="Personalised query suggestion experiments on intranet search logs.",
    )
    parser.add_argument("--config", required=True, help="experiment config file")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", help="generate the synthetic corpus, logs, and ground truth")
    sub.add_parser("ingest", help="validate the corpus and report collection stats")
    sub.add_parser("stats", help="print search-log statistics after preprocessing")
    sub.add_parser("train-lda", help="train the topic model on history-week clicks")
    sub.add_parser("build-hierarchy", help="build the concept subsumption hierarchy")

    ranker = sub.add_parser("train-ranker", help="fit the Click and Ours ensembles")
    ranker.add_argument("--dump-features", type=Path, default=None,
                        help="also write the training feature matrix as CSV")

    evaluate = sub.add_parser("evaluate", help="run the rolling weekly replay evaluation")
    evaluate.add_argument("--report", type=Path, default=None,
                          help="report file path (default: <report_dir>/report.txt)")

    suggest = sub.add_parser("suggest", help="re-rank suggestions for one query")
    suggest.add_argument("query", help="the current query text")
    suggest.add_argument("--history", type=Path, default=None,
                         help="log-format file with the session-so-far events")
    suggest.add_argument("--method", default="Ours", choices=["Base", "Click", "Ours"])
    return parser


def _load(args: argparse.Namespace) -> ExperimentConfig:
    return load_config(args.config)


def _cmd_synth(config: ExperimentConfig, args: argparse.Namespace) -> int:
    summary = stages.stage_synth(config)
    print(f"wrote corpus: {config.paths.corpus} ({summary.n_docs} documents)")
    print(f"wrote logs: {config.paths.logs} ({summary.n_events} events, "
          f"{summary.n_queries} queries, {summary.n_clicks} clicks)")
    print(f"wrote ground truth: {config.paths.truth_path()}")
    return EXIT_OK


def _cmd_ingest(config: ExperimentConfig, args: argparse.Namespace) -> int:
    n_docs, vocab = stages.stage_ingest(config)
    print(f"corpus ok: {n_docs} documents, {vocab} distinct terms")
    return EXIT_OK


def _cmd_stats(config: ExperimentConfig, args: argparse.Namespace) -> int:
    stats, rejects = stages.stage_stats(config)
    for label, value in stats.table_rows():
        print(f"{label}\t{value}")
    print(f"#rejected lines\t{rejects}")
    return EXIT_OK


def _cmd_train_lda(config: ExperimentConfig, args: argparse.Namespace) -> int:
    model = stages.stage_train_lda(config)
    print(f"trained topic model: K={model.num_topics}, "
          f"V={len(model.vocabulary)}, through {model.trained_through}")
    print(f"wrote {stages.topic_model_path(config)}")
    return EXIT_OK


def _cmd_build_hierarchy(config: ExperimentConfig, args: argparse.Namespace) -> int:
    hierarchy = stages.stage_build_hierarchy(config)
    n_edges = sum(len(c) for c in hierarchy.children.values())
    print(f"built hierarchy: {len(hierarchy.nodes)} nodes, {n_edges} edges, "
          f"through {hierarchy.trained_through}")
    print(f"wrote {stages.hierarchy_path(config)}")
    return EXIT_OK


def _cmd_train_ranker(config: ExperimentConfig, args: argparse.Namespace) -> int:
    ensembles = stages.stage_train_ranker(config, dump_features=args.dump_features)
    for name, ensemble in ensembles.items():
        print(f"trained {name}: {len(ensemble.trees)} trees over "
              f"{len(ensemble.feature_names)} features")
        print(f"wrote {stages.ensemble_path(config, name)}")
    return EXIT_OK


def _cmd_evaluate(config: ExperimentConfig, args: argparse.Namespace) -> int:
    outcome = stages.stage_evaluate(config, report_path=args.report)
    print(outcome.report_text, end="")
    print(f"wrote {outcome.report_path}")
    print(f"wrote {outcome.table_path}")
    return EXIT_OK


def _cmd_suggest(config: ExperimentConfig, args: argparse.Namespace) -> int:
    history: list[log_model.LogEvent] = []
    if args.history is not None:
        parsed = log_model.read_log_file(args.history)
        if parsed.rejected:
            line_no, reason = parsed.rejected[0]
            raise log_model.LogFormatError(f"{args.history}:{line_no}: {reason}")
        history = parsed.events
    rows = stages.suggest_once(config, history, args.query, method_name=args.method)
    if not rows:
        print("no suggestions")
        return EXIT_OK
    print("rank\tscore\tsuggestion\t" + "\t".join(FEATURE_NAMES))
    for row in rows:
        feats = "\t".join(f"{v:.4f}" for v in row.features)
        print(f"{row.rank}\t{row.score:.6f}\t{row.suggestion}\t{feats}")
    return EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "ingest": _cmd_ingest,
    "stats": _cmd_stats,
    "train-lda": _cmd_train_lda,
    "build-hierarchy": _cmd_build_hierarchy,
    "train-ranker": _cmd_train_ranker,
    "evaluate": _cmd_evaluate,
    "suggest": _cmd_suggest,
}


def run_command(argv: Sequence[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        config = _load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _COMMANDS[args.command](config, args)
    except stages.MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_ARTIFACT
    except (
        CorpusFormatError,
        DuplicateDocIdError,
        log_model.LogFormatError,
        log_model.DuplicateSeqError,
        FileNotFoundError,
    ) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
