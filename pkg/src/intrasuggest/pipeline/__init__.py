"""Experiment orchestration: configuration, synthetic benchmark generation,
impression preparation, the three evaluated methods, and the CLI."""

from .config import ConfigError, ExperimentConfig, load_config  # noqa: F401
from .synth import SynthConfig, synth_generate  # noqa: F401
