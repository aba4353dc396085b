"""Decoupled feature augmentation for compositional zero-shot learning."""

from ._defa import (
    ConfigError,
    DefaError,
    EvaluationError,
    FormatError,
    TrainingError,
    calibration_sweep,
    evaluate,
    factor_weights,
    preset,
    preset_names,
    read_embeddings,
    synthesize,
    train,
    write_embeddings,
)

__all__ = [
    "ConfigError",
    "DefaError",
    "EvaluationError",
    "FormatError",
    "TrainingError",
    "calibration_sweep",
    "evaluate",
    "factor_weights",
    "preset",
    "preset_names",
    "read_embeddings",
    "synthesize",
    "train",
    "write_embeddings",
]
