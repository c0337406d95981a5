"""Experiment harness: configuration, the 90-bank network, sweeps and the CLI."""

from .config import ConfigError, ExperimentConfig, build_config
from .eu import EuCalibration, build_eu_network, build_eu_skeleton
from .experiments import run_experiment

__all__ = ["ConfigError", "EuCalibration", "ExperimentConfig", "build_config", "build_eu_network", "build_eu_skeleton", "run_experiment"]
