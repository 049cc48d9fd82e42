"""Flat key=value experiment configuration with [section] headers.

Values can be overridden through environment variables named
``SUGGEST_<SECTION>_<KEY>`` (for example ``SUGGEST_RANKER_NUM_TREES=50``).
Every run echoes its effective configuration into the report directory so
results stay reproducible.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from ..ranker import TrainConfig
from ..topic_model import LdaHyperparams
from .synth import SynthConfig

ENV_PREFIX = "SUGGEST"


class ConfigError(ValueError):
    """Bad configuration file, key, or value."""


@dataclass(frozen=True)
class PathsConfig:
    logs: Path = Path("data/logs.tsv")
    corpus: Path = Path("data/corpus.tsv")
    truth: Optional[Path] = None  # defaults to <logs>.truth.tsv
    model_dir: Path = Path("models")
    report_dir: Path = Path("reports")

    def truth_path(self) -> Path:
        if self.truth is not None:
            return self.truth
        return self.logs.with_name(self.logs.name + ".truth.tsv")


@dataclass(frozen=True)
class TopicsConfig:
    """Topic model settings; num_topics = 50 is the desk-scale default
    (production logs in the reference setup used 300)."""

    num_topics: int = 50
    candidates: tuple[int, ...] = ()  # non-empty: select by held-out perplexity
    dirichlet_alpha: Optional[float] = None
    dirichlet_beta: float = 0.01
    gibbs_iterations: int = 500
    burn_in: int = 100
    sample_lag: int = 10
    infer_iterations: int = 100
    infer_burn_in: int = 50
    validation_fraction: float = 0.10

    def hyperparams(self, rng_seed: int) -> LdaHyperparams:
        return LdaHyperparams(
            num_topics=self.num_topics,
            dirichlet_alpha=self.dirichlet_alpha,
            dirichlet_beta=self.dirichlet_beta,
            gibbs_iterations=self.gibbs_iterations,
            burn_in=self.burn_in,
            sample_lag=self.sample_lag,
            infer_iterations=self.infer_iterations,
            infer_burn_in=self.infer_burn_in,
            rng_seed=rng_seed,
        )


@dataclass(frozen=True)
class SuggesterConfig:
    list_size: int = 10
    min_freq: int = 5
    subsume_threshold: float = 0.8
    max_phrase_len: int = 3
    union_refinement: bool = True


@dataclass(frozen=True)
class EvalConfig:
    history_weeks: int = 1  # initial ISO weeks used for topic model + hierarchy


@dataclass(frozen=True)
class ExperimentConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    decay_alpha: float = 0.95
    topics: TopicsConfig = field(default_factory=TopicsConfig)
    suggester: SuggesterConfig = field(default_factory=SuggesterConfig)
    ranker: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    rng_seed: int = 42
    synth: SynthConfig = field(default_factory=SynthConfig)


_BOOL_VALUES = {"true": True, "false": False, "1": True, "0": False,
                "yes": True, "no": False}


def _parse_bool(text: str) -> bool:
    try:
        return _BOOL_VALUES[text.strip().lower()]
    except KeyError:
        raise ConfigError(f"expected a boolean, got {text!r}") from None


def _parse_int_list(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(int(part) for part in text.split(","))


def _parse_dist(text: str) -> tuple[tuple[int, float], ...]:
    """`2:0.35,3:0.30` -> ((2, 0.35), (3, 0.30))."""
    pairs = []
    for part in text.split(","):
        key, _, value = part.partition(":")
        pairs.append((int(key), float(value)))
    return tuple(pairs)


def _parse_optional_float(text: str) -> Optional[float]:
    return None if text.strip().lower() in ("", "none") else float(text)


def _parse_optional_path(text: str) -> Optional[Path]:
    return None if text.strip().lower() in ("", "none") else Path(text)


# section -> key -> caster. The section dataclass field name equals the key.
_SCHEMA: dict[str, dict[str, object]] = {
    "paths": {
        "logs": Path,
        "corpus": Path,
        "truth": _parse_optional_path,
        "model_dir": Path,
        "report_dir": Path,
    },
    "profiles": {"decay_alpha": float},
    "topics": {
        "num_topics": int,
        "candidates": _parse_int_list,
        "dirichlet_alpha": _parse_optional_float,
        "dirichlet_beta": float,
        "gibbs_iterations": int,
        "burn_in": int,
        "sample_lag": int,
        "infer_iterations": int,
        "infer_burn_in": int,
        "validation_fraction": float,
    },
    "suggester": {
        "list_size": int,
        "min_freq": int,
        "subsume_threshold": float,
        "max_phrase_len": int,
        "union_refinement": _parse_bool,
    },
    "ranker": {
        "num_trees": int,
        "num_leaves": int,
        "min_instances_per_leaf": int,
        "learning_rate": float,
        "ndcg_truncation": int,
    },
    "eval": {"history_weeks": int},
    "run": {"rng_seed": int},
    "synth": {
        "n_topics": int,
        "n_sessions": int,
        "n_docs": int,
        "stem_vocab": int,
        "topic_vocab": int,
        "doc_length": int,
        "chains_per_doc": int,
        "noise_word_rate": float,
        "session_acts": _parse_dist,
        "click_prob": float,
        "click_noise": float,
        "clicks_extra_prob": float,
        "specific_start_prob": float,
        "trigram_refine_prob": float,
        "weeks": int,
        "start_date": str,
        "rng_seed": int,
    },
}


def _read_pairs(path: Path) -> dict[tuple[str, str], str]:
    pairs: dict[tuple[str, str], str] = {}
    section = ""
    for line_no, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SCHEMA:
                raise ConfigError(f"{path}:{line_no}: unknown section [{section}]")
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{line_no}: expected key = value")
        key = key.strip()
        if not section:
            raise ConfigError(f"{path}:{line_no}: key {key!r} outside any [section]")
        if key not in _SCHEMA[section]:
            raise ConfigError(f"{path}:{line_no}: unknown key {section}.{key}")
        pairs[(section, key)] = value.strip()
    return pairs


def _apply_env_overrides(pairs: dict[tuple[str, str], str]) -> None:
    for section, keys in _SCHEMA.items():
        for key in keys:
            env_name = f"{ENV_PREFIX}_{section.upper()}_{key.upper()}"
            if env_name in os.environ:
                pairs[(section, key)] = os.environ[env_name]


def load_config(path: str | Path, apply_env: bool = True) -> ExperimentConfig:
    pairs = _read_pairs(Path(path))
    if apply_env:
        _apply_env_overrides(pairs)

    values: dict[str, dict[str, object]] = {section: {} for section in _SCHEMA}
    for (section, key), text in pairs.items():
        caster = _SCHEMA[section][key]
        try:
            values[section][key] = caster(text)  # type: ignore[operator]
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {section}.{key}: {text!r} ({exc})") from None

    try:
        config = ExperimentConfig(
            paths=PathsConfig(**values["paths"]),
            decay_alpha=values["profiles"].get("decay_alpha", 0.95),
            topics=TopicsConfig(**values["topics"]),
            suggester=SuggesterConfig(**values["suggester"]),
            ranker=TrainConfig(
                rng_seed=values["run"].get("rng_seed", 42), **values["ranker"]
            ),
            eval=EvalConfig(**values["eval"]),
            rng_seed=values["run"].get("rng_seed", 42),
            synth=SynthConfig(**values["synth"]),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    return config


def _render_value(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ",".join(f"{k}:{v}" for k, v in value)  # distribution
        return ",".join(str(v) for v in value)
    return str(value)


def effective_lines(config: ExperimentConfig) -> list[str]:
    """The whole configuration as sorted `section.key = value` lines."""
    sections: dict[str, object] = {
        "paths": config.paths,
        "profiles": None,
        "topics": config.topics,
        "suggester": config.suggester,
        "ranker": config.ranker,
        "eval": config.eval,
        "run": None,
        "synth": config.synth,
    }
    lines = []
    for section in sorted(sections):
        obj = sections[section]
        if section == "profiles":
            lines.append(f"profiles.decay_alpha = {_render_value(config.decay_alpha)}")
            continue
        if section == "run":
            lines.append(f"run.rng_seed = {config.rng_seed}")
            continue
        for f in sorted(fields(obj), key=lambda f: f.name):  # type: ignore[arg-type]
            if f.name.startswith("_"):
                continue
            if section == "ranker" and f.name == "rng_seed":
                continue
            lines.append(f"{section}.{f.name} = {_render_value(getattr(obj, f.name))}")
    return lines


def write_effective_config(config: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text("\n".join(effective_lines(config)) + "\n", encoding="utf-8")
