"""Synthetic benchmark generation, configuration, and the CLI pipeline."""

import random
from pathlib import Path

import numpy as np
import pytest

from intrasuggest import log_model
from intrasuggest.base_suggester import build_hierarchy
from intrasuggest.corpus_index import build_index, load_corpus
from intrasuggest.eval_harness import average_precision
from intrasuggest.features import FEATURE_NAMES
from intrasuggest.log_model import EventType, normalize_query
from intrasuggest.pipeline.cli import run_command
from intrasuggest.pipeline.config import ConfigError, load_config
from intrasuggest.pipeline.methods import BASE_SPEC, CLICK_SPEC, OURS_SPEC
from intrasuggest.pipeline.replay import ReplayArtifacts, prepare_impressions
from intrasuggest.pipeline.synth import (
    SynthConfig,
    doc_planted_topic,
    load_ground_truth,
    synth_generate,
)
from intrasuggest.profiles import DecayParams

TINY_SYNTH = dict(
    n_topics=4,
    n_sessions=120,
    n_docs=160,
    stem_vocab=10,
    topic_vocab=20,
    doc_length=24,
    chains_per_doc=3,
    weeks=2,
    rng_seed=11,
)


def render_config(tmp_path: Path, **overrides) -> Path:
    values = dict(
        num_topics=4,
        gibbs_iterations=60,
        burn_in=20,
        sample_lag=10,
        infer_iterations=30,
        infer_burn_in=10,
        num_trees=20,
        min_leaf=10,
        seed=11,
    )
    values.update(overrides)
    text = f"""
[paths]
logs = {tmp_path}/data/logs.tsv
corpus = {tmp_path}/data/corpus.tsv
model_dir = {tmp_path}/models
report_dir = {tmp_path}/reports

[profiles]
decay_alpha = 0.95

[topics]
num_topics = {values['num_topics']}
dirichlet_alpha = 0.5
gibbs_iterations = {values['gibbs_iterations']}
burn_in = {values['burn_in']}
sample_lag = {values['sample_lag']}
infer_iterations = {values['infer_iterations']}
infer_burn_in = {values['infer_burn_in']}

[suggester]
list_size = 10

[ranker]
num_trees = {values['num_trees']}
min_instances_per_leaf = {values['min_leaf']}

[eval]
history_weeks = 1

[run]
rng_seed = {values['seed']}

[synth]
n_topics = {TINY_SYNTH['n_topics']}
n_sessions = {TINY_SYNTH['n_sessions']}
n_docs = {TINY_SYNTH['n_docs']}
stem_vocab = {TINY_SYNTH['stem_vocab']}
topic_vocab = {TINY_SYNTH['topic_vocab']}
doc_length = {TINY_SYNTH['doc_length']}
chains_per_doc = {TINY_SYNTH['chains_per_doc']}
weeks = {TINY_SYNTH['weeks']}
rng_seed = {TINY_SYNTH['rng_seed']}
"""
    path = tmp_path / "experiment.cfg"
    path.write_text(text, encoding="utf-8")
    return path


class TestSynthGenerate:
    def test_seeded_runs_byte_identical(self, tmp_path):
        cfg = SynthConfig(**TINY_SYNTH)
        paths_a = [tmp_path / f"a_{n}" for n in ("corpus", "logs", "truth")]
        paths_b = [tmp_path / f"b_{n}" for n in ("corpus", "logs", "truth")]
        synth_generate(cfg, *paths_a)
        synth_generate(cfg, *paths_b)
        for a, b in zip(paths_a, paths_b):
            assert a.read_bytes() == b.read_bytes()

    def test_zero_click_noise_clicks_match_intent(self, tmp_path):
        cfg = SynthConfig(**{**TINY_SYNTH, "click_noise": 0.0})
        corpus, logs, truth = (tmp_path / n for n in ("corpus", "logs", "truth"))
        synth_generate(cfg, corpus, logs, truth)
        intents = {sid: topic for sid, (topic, _) in load_ground_truth(truth).items()}
        parsed = log_model.read_log_file(logs)
        assert parsed.reject_count == 0
        clicks = [e for e in parsed.events if e.event_type is EventType.CLICK]
        assert clicks
        for event in clicks:
            assert doc_planted_topic(event.content) == intents[event.session_id]

    def test_queries_per_session_matches_configured_mean(self, tmp_path):
        cfg = SynthConfig(n_sessions=5000, rng_seed=42)
        corpus, logs, truth = (tmp_path / n for n in ("corpus", "logs", "truth"))
        summary = synth_generate(cfg, corpus, logs, truth)
        configured_mean = sum(n * p for n, p in cfg.session_acts)
        observed = summary.n_queries / summary.n_sessions
        assert abs(observed - configured_mean) / configured_mean <= 0.05
        # cross-check against the log statistics
        sessions = log_model.assemble_sessions(log_model.read_log_file(logs).events)
        stats = log_model.compute_log_stats(sessions)
        assert stats.n_queries == summary.n_queries
        assert stats.n_events == summary.n_events

    def test_sessions_fit_inside_iso_weeks(self, tmp_path):
        cfg = SynthConfig(**TINY_SYNTH)
        corpus, logs, truth = (tmp_path / n for n in ("corpus", "logs", "truth"))
        synth_generate(cfg, corpus, logs, truth)
        sessions = log_model.assemble_sessions(log_model.read_log_file(logs).events)
        weeks = set()
        for session in sessions:
            session_weeks = {e.timestamp.isocalendar()[:2] for e in session.events}
            assert len(session_weeks) == 1
            weeks |= session_weeks
        assert len(weeks) == TINY_SYNTH["weeks"]

    def test_inconsistent_config_rejected(self):
        with pytest.raises(ValueError):
            SynthConfig(n_topics=2, topic_vocab=4)
        with pytest.raises(ValueError):
            SynthConfig(session_acts=((1, 0.5),))


class TestGroundTruthOracle:
    def test_intent_oracle_reaches_perfect_map_without_noise(self, tmp_path):
        cfg = SynthConfig(**{**TINY_SYNTH, "click_noise": 0.0})
        corpus_path, logs_path, truth_path = (
            tmp_path / n for n in ("corpus", "logs", "truth")
        )
        synth_generate(cfg, corpus_path, logs_path, truth_path)
        truth = load_ground_truth(truth_path)
        docs = load_corpus(corpus_path)
        sessions = log_model.preprocess_sessions(
            log_model.assemble_sessions(log_model.read_log_file(logs_path).events)
        )
        hierarchy = build_hierarchy(docs, sessions, min_freq=5)
        # Feature values are irrelevant to the oracle; uniform topics suffice.
        artifacts = ReplayArtifacts(
            index=build_index(docs),
            doc_topics={d.doc_id: np.full(4, 0.25) for d in docs},
            hierarchy=hierarchy,
            decay=DecayParams(0.95),
        )
        prepared, _ = prepare_impressions(sessions, artifacts)
        assert prepared
        aps = []
        for imp in prepared:
            chain = truth[imp.session_id][1]
            planted_next = normalize_query(chain[imp.position])
            order = sorted(
                range(len(imp.suggestions)),
                key=lambda i: (imp.suggestions[i] != planted_next, i),
            )
            aps.append(average_precision([imp.labels[i] for i in order]))
        assert np.mean(aps) == pytest.approx(1.0)


class TestBaseOrderInvariant:
    def test_union_off_base_equals_suggester_output(self, tmp_path):
        from intrasuggest.base_suggester import suggest
        from intrasuggest.pipeline.methods import BaseOrderMethod

        cfg = SynthConfig(**TINY_SYNTH)
        corpus_path, logs_path, truth_path = (
            tmp_path / n for n in ("corpus", "logs", "truth")
        )
        synth_generate(cfg, corpus_path, logs_path, truth_path)
        docs = load_corpus(corpus_path)
        sessions = log_model.preprocess_sessions(
            log_model.assemble_sessions(log_model.read_log_file(logs_path).events)
        )
        hierarchy = build_hierarchy(docs, sessions, min_freq=5)
        artifacts = ReplayArtifacts(
            index=build_index(docs),
            doc_topics={d.doc_id: np.full(4, 0.25) for d in docs},
            hierarchy=hierarchy,
            decay=DecayParams(0.95),
            union_refinement=False,
        )
        prepared, _ = prepare_impressions(sessions, artifacts)
        assert prepared
        base = BaseOrderMethod()
        for imp in prepared[:50]:
            listing = suggest(hierarchy, imp.query_text, artifacts.list_size)
            ordered = tuple(imp.suggestions[i] for i in base.order(imp))
            assert ordered == listing.suggestions


class TestConfig:
    def test_parse_and_defaults(self, tmp_path):
        config = load_config(render_config(tmp_path))
        assert config.topics.num_topics == 4
        assert config.ranker.num_trees == 20
        assert config.ranker.min_instances_per_leaf == 10
        assert config.decay_alpha == 0.95
        assert config.suggester.union_refinement is True  # default
        assert config.rng_seed == 11
        assert config.ranker.rng_seed == 11

    def test_env_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SUGGEST_RANKER_NUM_TREES", "7")
        monkeypatch.setenv("SUGGEST_SUGGESTER_UNION_REFINEMENT", "false")
        config = load_config(render_config(tmp_path))
        assert config.ranker.num_trees == 7
        assert config.suggester.union_refinement is False

    def test_unknown_key_rejected(self, tmp_path):
        path = render_config(tmp_path)
        path.write_text(path.read_text() + "\n[ranker]\nbogus = 1\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="unknown key"):
            load_config(path)

    def test_unknown_section_rejected(self, tmp_path):
        path = render_config(tmp_path)
        path.write_text(path.read_text() + "\n[mystery]\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="unknown section"):
            load_config(path)

    def test_bad_value_rejected(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SUGGEST_RANKER_NUM_TREES", "many")
        with pytest.raises(ConfigError, match="num_trees"):
            load_config(render_config(tmp_path))


class TestMethodSpecs:
    def test_masks(self):
        assert BASE_SPEC.feature_indices is None
        assert len(CLICK_SPEC.feature_indices) == 9
        assert len(OURS_SPEC.feature_indices) == 10
        assert "QueryPersonalisedScore" not in CLICK_SPEC.feature_names()
        assert OURS_SPEC.feature_names() == FEATURE_NAMES


class TestCliPipeline:
    def test_full_stage_sequence(self, tmp_path, capsys):
        config = str(render_config(tmp_path))
        for command in ("synth", "ingest", "stats", "train-lda",
                        "build-hierarchy", "train-ranker"):
            assert run_command(["--config", config, command]) == 0, command
        assert run_command(["--config", config, "evaluate"]) == 0
        out = capsys.readouterr().out
        assert "#search sessions" in out
        assert "[results]" in out
        report = tmp_path / "reports" / "report.txt"
        assert report.exists()
        assert (tmp_path / "reports" / "config.effective.txt").exists()
        assert (tmp_path / "reports" / "report.txt.per_impression.tsv").exists()

        history = tmp_path / "history.tsv"
        history.write_text(
            "h1\tQ\t1\tsw01\t2012-01-02T10:00:00Z\n"
            "h1\tC\t2\t/corpus/t00/d00000\t2012-01-02T10:00:30Z\n",
            encoding="utf-8",
        )
        assert run_command(
            ["--config", config, "suggest", "sw01 t00w01", "--history", str(history)]
        ) == 0
        out = capsys.readouterr().out
        assert out.startswith("rank\tscore\tsuggestion")

    def test_missing_artifact_exit_code(self, tmp_path, capsys):
        config = str(render_config(tmp_path))
        assert run_command(["--config", config, "synth"]) == 0
        status = run_command(["--config", config, "evaluate"])
        assert status == 3
        assert "train-lda" in capsys.readouterr().err

    def test_suggest_before_train_ranker(self, tmp_path, capsys):
        config = str(render_config(tmp_path))
        for command in ("synth", "train-lda", "build-hierarchy"):
            assert run_command(["--config", config, command]) == 0
        status = run_command(["--config", config, "suggest", "sw01"])
        assert status == 3
        assert "train-ranker" in capsys.readouterr().err

    def test_unknown_command_exit_code(self, tmp_path):
        config = str(render_config(tmp_path))
        assert run_command(["--config", config, "frobnicate"]) == 2

    def test_config_error_exit_code(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SUGGEST_RUN_RNG_SEED", "not-a-number")
        config = str(render_config(tmp_path))
        assert run_command(["--config", config, "stats"]) == 2

    def test_data_error_exit_code(self, tmp_path, capsys):
        config = str(render_config(tmp_path))
        assert run_command(["--config", config, "synth"]) == 0
        corpus = tmp_path / "data" / "corpus.tsv"
        corpus.write_text("d1\talpha beta\nd1\tduplicate\n", encoding="utf-8")
        assert run_command(["--config", config, "ingest"]) == 4

    def test_evaluate_rejects_leaky_artifacts(self, tmp_path):
        from intrasuggest.pipeline import run as stages
        from intrasuggest.pipeline.config import load_config as load

        config_path = render_config(tmp_path)
        for command in ("synth", "train-lda", "build-hierarchy"):
            assert run_command(["--config", str(config_path), command]) == 0
        # Pretend the topic model saw the final week of the logs.
        model_file = tmp_path / "models" / "topic_model.txt"
        text = model_file.read_text(encoding="utf-8")
        model_file.write_text(
            text.replace("trained_through 2012-W01", "trained_through 2012-W04"),
            encoding="utf-8",
        )
        with pytest.raises(RuntimeError, match="overlaps the first test week"):
            stages.stage_evaluate(load(config_path))

    def test_feature_dump(self, tmp_path):
        config = str(render_config(tmp_path))
        for command in ("synth", "train-lda", "build-hierarchy"):
            assert run_command(["--config", config, command]) == 0
        dump = tmp_path / "features.csv"
        assert run_command(
            ["--config", config, "train-ranker", "--dump-features", str(dump)]
        ) == 0
        header = dump.read_text(encoding="utf-8").splitlines()[0]
        assert header == "impression_id,label," + ",".join(FEATURE_NAMES)
