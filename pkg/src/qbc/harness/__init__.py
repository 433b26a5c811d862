"""Experiment runner, socket transport and command-line interface."""

from .experiments import CSV_COLUMNS, ExperimentConfig, ExperimentResult, run_experiment, sweep

__all__ = ["CSV_COLUMNS", "ExperimentConfig", "ExperimentResult", "run_experiment", "sweep"]
