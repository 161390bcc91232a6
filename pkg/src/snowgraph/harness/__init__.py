"""Experiment driver: declarative configs, seeded runs, checkpoints,
zero-shot transfer evaluation, sweeps and reporting."""

from .config import ExperimentConfig, config_hash, load_config, parse_config_text
from .records import RunRecord, UpdateRow
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .experiment import run_experiment, transfer_eval, run_sweep
from .report import export_report, final_window_mean, sliding_window_mean

__all__ = [
    "ExperimentConfig",
    "config_hash",
    "load_config",
    "parse_config_text",
    "RunRecord",
    "UpdateRow",
    "Checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "run_experiment",
    "transfer_eval",
    "run_sweep",
    "export_report",
    "final_window_mean",
    "sliding_window_mean",
]
