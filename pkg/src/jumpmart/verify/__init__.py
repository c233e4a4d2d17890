"""Experiment harness: config, artifacts, checks and the command line."""
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .experiments import (
    RatioTable,
    verify_corollary,
    verify_hessian_bound,
    verify_lemma_difference_bound,
    verify_lemma_quadratic_bound,
    verify_theorem_ratio,
)
from .localization import build_localization_times

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "RatioTable",
    "verify_corollary",
    "verify_hessian_bound",
    "verify_lemma_difference_bound",
    "verify_lemma_quadratic_bound",
    "verify_theorem_ratio",
    "build_localization_times",
]
