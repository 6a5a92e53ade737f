"""Experiment configuration, drivers and command-line entry point."""
from .config import ConfigError, ExperimentConfig, default_config, load_config
from .experiments import (TrialRecord, run_ensemble_compare, run_experiment, run_injectivity,
                          run_param_sweep, run_phase_transition, write_tables)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "default_config",
    "load_config",
    "TrialRecord",
    "run_param_sweep",
    "run_ensemble_compare",
    "run_phase_transition",
    "run_injectivity",
    "run_experiment",
    "write_tables",
]
