"""Anchor-free one-stage detector with toggleable attention, fusion-calibration
and adaptive-focal-loss improvements, plus a desk-scale synthetic harness."""

from .config import (
    ATFConfig,
    AssignerConfig,
    ConfigError,
    LossWeights,
    LskaConfig,
    ModelConfig,
    OptimConfig,
    RunConfig,
    SceneSpec,
)
from .model import DetectorModel, RawPredictions, build_model, decode_predictions

__all__ = [
    "ATFConfig", "AssignerConfig", "ConfigError", "LossWeights", "LskaConfig",
    "ModelConfig", "OptimConfig", "RunConfig", "SceneSpec",
    "DetectorModel", "RawPredictions", "build_model", "decode_predictions",
]

__version__ = "0.1.0"
