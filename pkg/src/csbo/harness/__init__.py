"""Experiment configuration, seeded trials, grid search and result files."""

from .config import ConfigError, ExperimentConfig, config_from_dict, load_config, parse_text
from .experiment import (ExperimentReport, GridReport, GridSearchError, TrialMetrics, TrialOutcome,
                         emit_results, run_experiment, run_grid_search, run_trial, summarize)

__all__ = [
    "ConfigError", "ExperimentConfig", "config_from_dict", "load_config", "parse_text",
    "ExperimentReport", "GridReport", "GridSearchError", "TrialMetrics", "TrialOutcome",
    "emit_results", "run_experiment", "run_grid_search", "run_trial", "summarize",
]
