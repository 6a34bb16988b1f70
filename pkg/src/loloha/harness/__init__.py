"""Datasets, experiment driver and evaluation metrics."""

from .data import UserSequences, gen_permuted, gen_syn, load_sequences, write_sequences
from .experiment import (
    ExperimentConfig,
    ExperimentResult,
    Metrics,
    PermutedSpec,
    SynSpec,
    run_experiment,
)
from .metrics import change_detection, change_detection_attack, eps_avg, mse_avg

__all__ = [
    "ExperimentConfig",
    "ExperimentResult",
    "Metrics",
    "PermutedSpec",
    "SynSpec",
    "UserSequences",
    "change_detection",
    "change_detection_attack",
    "eps_avg",
    "gen_permuted",
    "gen_syn",
    "load_sequences",
    "mse_avg",
    "run_experiment",
    "write_sequences",
]
