"""Experiment harness: configuration, sweeps, reports, figures and the CLI."""

from .config import MNIST_TWO_STAGE, SYNTH_ONE_STAGE, SYNTH_TWO_STAGE, ConfigError, ExperimentConfig
from .report import BoundReport, assemble_report, read_csv, write_csv
from .sweep import run_one_stage_sweep, run_sweep, run_two_stage_sweep

__all__ = [
    "BoundReport", "ConfigError", "ExperimentConfig", "MNIST_TWO_STAGE", "SYNTH_ONE_STAGE",
    "SYNTH_TWO_STAGE", "assemble_report", "read_csv", "run_one_stage_sweep", "run_sweep",
    "run_two_stage_sweep", "write_csv",
]
