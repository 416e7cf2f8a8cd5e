"""Benchmark harness: synthetic sweeps, rating datasets and the command line."""

from .datasets import (
    DataError,
    RatingsDataset,
    eval_real,
    load_jester,
    load_movielens,
    random_prediction_nmae,
    spectrum_dump,
)
from .sweep import ConfigError, SweepConfig, SweepRecord, load_config, run_sweep, write_csv

__all__ = [
    "ConfigError",
    "DataError",
    "RatingsDataset",
    "SweepConfig",
    "SweepRecord",
    "eval_real",
    "load_config",
    "load_jester",
    "load_movielens",
    "random_prediction_nmae",
    "run_sweep",
    "spectrum_dump",
    "write_csv",
]
