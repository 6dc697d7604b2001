"""Monte-Carlo harness, statistics, configuration and command line."""

from .config import ExperimentConfig, load_config
from .harness import FilterRun, TrialRecord, run_monte_carlo, run_trial, run_trials
from .stats import mass_transition_ratio, mse, sign_test

__all__ = [
    "ExperimentConfig",
    "FilterRun",
    "TrialRecord",
    "load_config",
    "mass_transition_ratio",
    "mse",
    "run_monte_carlo",
    "run_trial",
    "run_trials",
    "sign_test",
]
