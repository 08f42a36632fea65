"""Experiment configuration, running, metric emission and the invariant suite."""

from .config import METHODS, PRESETS, ConfigError, ExperimentConfig, apply_preset, load_config
from .runner import build_experiment, emit_metrics, run_cell, run_id

__all__ = [
    "METHODS", "PRESETS", "ConfigError", "ExperimentConfig", "apply_preset", "load_config",
    "build_experiment", "emit_metrics", "run_cell", "run_id",
]
