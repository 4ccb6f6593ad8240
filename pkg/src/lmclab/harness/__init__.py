"""Configuration, persistence, metrics and the experiment/sweep runner."""

from .config import ExperimentConfig, load_config, parse_flat, save_config
from .io import load_checkpoint, load_dataset, save_checkpoint, save_dataset
from .metrics import harmonic_mean
from .runner import RunReport, run_experiment, run_sweep

__all__ = [
    "ExperimentConfig",
    "RunReport",
    "harmonic_mean",
    "load_checkpoint",
    "load_config",
    "load_dataset",
    "parse_flat",
    "run_experiment",
    "run_sweep",
    "save_checkpoint",
    "save_config",
    "save_dataset",
]
