"""MLP-Mixer style forecasting for irregularly sampled multivariate time series.

The package is self-contained: a small reverse-mode autodiff engine over
float64 numpy arrays, the channel encoders, mixer stack and query decoders,
a trainer with early stopping, an ODE-based dataset generator and a CLI.
"""
from .config import ConfigError, TrainConfig, load_config, parse_config
from .data import (BatchedImts, ImtsInstance, NormStats, SchemaError, apply_normalize,
                   fit_normalize, invert_normalize, load_jsonl, make_batch, save_jsonl,
                   split_dataset, validate)
from .model import ImtsMixer, count_parameters
from .training import baseline_carry_forward, baseline_mean, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "BatchedImts", "ConfigError", "ImtsInstance", "ImtsMixer", "NormStats", "SchemaError",
    "TrainConfig", "apply_normalize", "baseline_carry_forward", "baseline_mean",
    "count_parameters", "evaluate", "fit_normalize", "invert_normalize", "load_config",
    "load_jsonl", "make_batch", "parse_config", "save_jsonl", "split_dataset", "train",
    "validate", "__version__",
]
