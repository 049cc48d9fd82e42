"""Pipeline stages shared by the CLI and the test suite.

Artifact layout under ``paths.model_dir``::

    topic_model.txt     written by train-lda
    hierarchy.txt       written by build-hierarchy
    ensemble_click.txt  written by train-ranker
    ensemble_ours.txt   written by train-ranker

The topic model and hierarchy are trained once, on the first
``eval.history_weeks`` ISO weeks of the logs; their artifacts carry that
cutoff so the evaluation stage can verify no test week leaked into them.
The re-ranking ensembles are re-trained per fold inside `evaluate`
(train-ranker's artifacts exist for the interactive `suggest` command).
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .. import base_suggester, log_model, topic_model
from ..corpus_index import Document, InvertedIndex, build_index, load_corpus
from ..eval_harness import (
    PreparedImpression,
    RollingResult,
    WeekKey,
    format_week,
    render_report,
    rolling_weekly_eval,
    write_per_impression_table,
)
from ..features import FEATURE_NAMES, write_feature_matrix
from ..log_model import SearchSession
from ..profiles import DecayParams
from ..ranker import RankingEnsemble, load_ensemble, predict, save_ensemble
from .config import ExperimentConfig, effective_lines, write_effective_config
from .methods import BASE_SPEC, CLICK_SPEC, OURS_SPEC, RerankMethod, build_method_pipelines
from .replay import (
    ReplayArtifacts,
    ReplayStats,
    candidate_feature_matrix,
    impression_context,
    iso_week,
    prepare_impressions,
)
from .synth import SynthSummary, synth_generate


class MissingArtifactError(FileNotFoundError):
    """A required model artifact has not been produced yet."""

    def __init__(self, artifact: Path, stage: str):
        super().__init__(f"missing artifact {artifact}: run the {stage!r} stage first")
        self.stage = stage


def _parse_week_label(label: str) -> WeekKey:
    year, _, week = label.partition("-W")
    return (int(year), int(week))


def topic_model_path(config: ExperimentConfig) -> Path:
    return config.paths.model_dir / "topic_model.txt"


def hierarchy_path(config: ExperimentConfig) -> Path:
    return config.paths.model_dir / "hierarchy.txt"


def ensemble_path(config: ExperimentConfig, method: str) -> Path:
    return config.paths.model_dir / f"ensemble_{method.lower()}.txt"


def stage_synth(config: ExperimentConfig) -> SynthSummary:
    return synth_generate(
        config.synth,
        config.paths.corpus,
        config.paths.logs,
        config.paths.truth_path(),
    )


def load_sessions(config: ExperimentConfig) -> tuple[list[SearchSession], int]:
    """Parse, assemble, and preprocess the configured log file."""
    parsed = log_model.read_log_file(config.paths.logs)
    sessions = log_model.assemble_sessions(parsed.events)
    return log_model.preprocess_sessions(sessions), parsed.reject_count


def session_week(session: SearchSession) -> WeekKey:
    return iso_week(session.events[0].timestamp)


def history_sessions(
    config: ExperimentConfig, sessions: Sequence[SearchSession]
) -> tuple[list[SearchSession], WeekKey]:
    """Sessions inside the initial history window, plus the cutoff week."""
    weeks = sorted({session_week(s) for s in sessions})
    if not weeks:
        raise ValueError("no sessions in the log")
    cutoff = weeks[min(config.eval.history_weeks, len(weeks)) - 1]
    return [s for s in sessions if session_week(s) <= cutoff], cutoff


def clicked_documents(
    sessions: Sequence[SearchSession], docs: Sequence[Document]
) -> list[Document]:
    by_id = {doc.doc_id: doc for doc in docs}
    clicked_ids = sorted(
        {
            event.content
            for session in sessions
            for event in session.events
            if event.event_type is log_model.EventType.CLICK and event.content in by_id
        }
    )
    return [by_id[doc_id] for doc_id in clicked_ids]


def stage_ingest(config: ExperimentConfig) -> tuple[int, int]:
    """Validate the corpus and report (document count, vocabulary size)."""
    docs = load_corpus(config.paths.corpus)
    index = build_index(docs)
    return len(docs), index.vocabulary_size


def stage_stats(config: ExperimentConfig) -> tuple[log_model.LogStats, int]:
    sessions, rejects = load_sessions(config)
    return log_model.compute_log_stats(sessions), rejects


def stage_train_lda(config: ExperimentConfig) -> topic_model.TopicModel:
    """Train LDA on history-week clicked documents, fold in the rest of the
    corpus, and persist the artifact with every document's distribution."""
    docs = load_corpus(config.paths.corpus)
    sessions, _ = load_sessions(config)
    history, cutoff = history_sessions(config, sessions)
    clicked = clicked_documents(history, docs)

    hyper = config.topics.hyperparams(config.rng_seed)
    if config.topics.candidates:
        chosen = topic_model.select_topic_count(
            clicked,
            config.topics.candidates,
            hyper,
            config.topics.validation_fraction,
        )
        hyper = topic_model.LdaHyperparams(
            num_topics=chosen,
            dirichlet_alpha=config.topics.dirichlet_alpha,
            dirichlet_beta=hyper.dirichlet_beta,
            gibbs_iterations=hyper.gibbs_iterations,
            burn_in=hyper.burn_in,
            sample_lag=hyper.sample_lag,
            infer_iterations=hyper.infer_iterations,
            infer_burn_in=hyper.infer_burn_in,
            rng_seed=hyper.rng_seed,
        )
    model = topic_model.train_lda(clicked, hyper, trained_through=format_week(cutoff))
    model.theta = topic_model.corpus_topic_distributions(model, docs)
    config.paths.model_dir.mkdir(parents=True, exist_ok=True)
    topic_model.save_topic_model(model, topic_model_path(config))
    return model


def stage_build_hierarchy(config: ExperimentConfig) -> base_suggester.ConceptHierarchy:
    docs = load_corpus(config.paths.corpus)
    sessions, _ = load_sessions(config)
    history, cutoff = history_sessions(config, sessions)
    hierarchy = base_suggester.build_hierarchy(
        docs,
        history,
        min_freq=config.suggester.min_freq,
        subsume_threshold=config.suggester.subsume_threshold,
        max_phrase_len=config.suggester.max_phrase_len,
        trained_through=format_week(cutoff),
    )
    config.paths.model_dir.mkdir(parents=True, exist_ok=True)
    base_suggester.save_hierarchy(hierarchy, hierarchy_path(config))
    return hierarchy


@dataclass
class LoadedArtifacts:
    docs: list[Document]
    index: InvertedIndex
    model: topic_model.TopicModel
    hierarchy: base_suggester.ConceptHierarchy

    def doc_topics(self) -> dict[str, np.ndarray]:
        known = dict(self.model.theta)
        for doc in self.docs:
            if doc.doc_id not in known:
                known[doc.doc_id] = topic_model.infer_doc_topics(self.model, doc)
        return known


def load_artifacts(config: ExperimentConfig) -> LoadedArtifacts:
    tm_path = topic_model_path(config)
    if not tm_path.exists():
        raise MissingArtifactError(tm_path, "train-lda")
    h_path = hierarchy_path(config)
    if not h_path.exists():
        raise MissingArtifactError(h_path, "build-hierarchy")
    docs = load_corpus(config.paths.corpus)
    return LoadedArtifacts(
        docs=docs,
        index=build_index(docs),
        model=topic_model.load_topic_model(tm_path),
        hierarchy=base_suggester.load_hierarchy(h_path),
    )


def replay_artifacts(
    config: ExperimentConfig, loaded: LoadedArtifacts
) -> ReplayArtifacts:
    return ReplayArtifacts(
        index=loaded.index,
        doc_topics=loaded.doc_topics(),
        hierarchy=loaded.hierarchy,
        decay=DecayParams(config.decay_alpha),
        list_size=config.suggester.list_size,
        union_refinement=config.suggester.union_refinement,
    )


def prepare_all(
    config: ExperimentConfig,
) -> tuple[list[PreparedImpression], ReplayStats, LoadedArtifacts]:
    loaded = load_artifacts(config)
    sessions, _ = load_sessions(config)
    prepared, stats = prepare_impressions(sessions, replay_artifacts(config, loaded))
    return prepared, stats, loaded


def stage_train_ranker(
    config: ExperimentConfig, dump_features: Optional[Path] = None
) -> dict[str, RankingEnsemble]:
    """Fit the Click and Ours ensembles on every labelled impression and
    persist them for the interactive `suggest` command."""
    prepared, _, _ = prepare_all(config)
    trainable = [imp for imp in prepared if 0 < sum(imp.labels) < len(imp.labels)]
    if dump_features is not None:
        write_feature_matrix(
            dump_features,
            (
                (imp.impression_id, label, imp.features[i])
                for imp in prepared
                for i, label in enumerate(imp.labels)
            ),
        )
    ensembles = {}
    config.paths.model_dir.mkdir(parents=True, exist_ok=True)
    for spec in (CLICK_SPEC, OURS_SPEC):
        method = RerankMethod(spec, config.ranker)
        ensemble = method.fit(trainable)
        save_ensemble(ensemble, ensemble_path(config, spec.name))
        ensembles[spec.name] = ensemble
    return ensembles


@dataclass
class EvalOutcome:
    result: RollingResult
    stats: ReplayStats
    report_text: str
    report_path: Path
    table_path: Path


def stage_evaluate(
    config: ExperimentConfig, report_path: Optional[Path] = None
) -> EvalOutcome:
    prepared, stats, loaded = prepare_all(config)
    methods = build_method_pipelines(config.ranker)
    result = rolling_weekly_eval(
        prepared, methods, config_fingerprint=",".join(FEATURE_NAMES)
    )

    first_test_week = result.folds[0][1]
    for label, artifact in (
        (loaded.model.trained_through, "topic model"),
        (loaded.hierarchy.trained_through, "hierarchy"),
    ):
        if label is None:
            continue
        if _parse_week_label(label) >= first_test_week:
            raise RuntimeError(
                f"{artifact} was trained through {label}, which overlaps the "
                f"first test week {format_week(first_test_week)}"
            )

    method_names = [m.name for m in methods]
    report_text = render_report(
        result,
        method_names,
        effective_lines(config),
        stats.union_counts(),
        baseline=BASE_SPEC.name,
    )
    config.paths.report_dir.mkdir(parents=True, exist_ok=True)
    if report_path is None:
        report_path = config.paths.report_dir / "report.txt"
    report_path = Path(report_path)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(report_text, encoding="utf-8")
    table_path = report_path.with_name(report_path.name + ".per_impression.tsv")
    write_per_impression_table(table_path, result, method_names)
    write_effective_config(config, config.paths.report_dir / "config.effective.txt")
    return EvalOutcome(
        result=result,
        stats=stats,
        report_text=report_text,
        report_path=report_path,
        table_path=table_path,
    )


@dataclass
class SuggestionRow:
    rank: int
    suggestion: str
    score: float
    features: np.ndarray


def suggest_once(
    config: ExperimentConfig,
    history_events: Sequence[log_model.LogEvent],
    query: str,
    method_name: str = "Ours",
) -> list[SuggestionRow]:
    """Re-rank the base list for one query given the session so far.

    ``history_events`` must all belong to one session; the current query is
    appended as the next event.  Unlike replay, there is no observed
    refinement, so nothing is unioned into the base list.
    """
    loaded = load_artifacts(config)
    artifacts = replay_artifacts(config, loaded)

    if method_name not in (BASE_SPEC.name, CLICK_SPEC.name, OURS_SPEC.name):
        raise ValueError(f"unknown method {method_name!r}")
    ensemble = None
    spec = {CLICK_SPEC.name: CLICK_SPEC, OURS_SPEC.name: OURS_SPEC}.get(method_name)
    if spec is not None:
        path = ensemble_path(config, method_name)
        if not path.exists():
            raise MissingArtifactError(path, "train-ranker")
        ensemble = load_ensemble(path)

    if history_events:
        session_id = history_events[0].session_id
        last = max(history_events, key=lambda e: e.seq_id)
        when = last.timestamp + timedelta(seconds=30)
        seq = last.seq_id + 1
    else:
        session_id = "interactive"
        when = datetime(2000, 1, 1, tzinfo=timezone.utc)
        seq = 1
    events = list(history_events) + [
        log_model.LogEvent(session_id, log_model.EventType.QUERY, seq, query, when)
    ]
    session = log_model.assemble_sessions(events)[0]
    impression = log_model.impressions_from_session(session)[-1]

    listing = base_suggester.suggest(artifacts.hierarchy, query, artifacts.list_size)
    texts = list(listing.suggestions)
    if not texts:
        return []
    context = impression_context(artifacts, impression)
    matrix = candidate_feature_matrix(artifacts, context, texts)

    if ensemble is None:
        order = np.arange(len(texts))
        ranked_scores = np.asarray(listing.scores, dtype=np.float64)
    else:
        idx = list(spec.feature_indices or ())
        ranked_scores = predict(ensemble, matrix[:, idx])
        order = np.argsort(-ranked_scores, kind="stable")
    return [
        SuggestionRow(
            rank=out_rank,
            suggestion=texts[i],
            score=float(ranked_scores[i]),
            features=matrix[i],
        )
        for out_rank, i in enumerate(order, 1)
    ]
