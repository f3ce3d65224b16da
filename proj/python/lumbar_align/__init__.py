"""Soft-label contrastive image-report pretraining with linear-probe evaluation."""

from ._core import (
    ExperimentConfig,
    InputError,
    NumericError,
    config_keys,
    metrics,
    pretrain,
    probe,
    report,
    soft_clip_loss,
    soft_targets,
    synth_data,
)

__all__ = [
    "ExperimentConfig",
    "InputError",
    "NumericError",
    "config_keys",
    "metrics",
    "pretrain",
    "probe",
    "report",
    "soft_clip_loss",
    "soft_targets",
    "synth_data",
]

__version__ = "0.1.0"
