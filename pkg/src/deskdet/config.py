"""Dataclass configs for the detector, losses, data synthesis and runs.

Every field has a default so a minimal run config is ``{}``; configs
round-trip through JSON for provenance.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field


class ConfigError(ValueError):
    """Raised when a config violates its invariants."""


@dataclass
class ModelConfig:
    num_classes: int = 7
    width_multiple: float = 0.25
    depth_multiple: float = 0.33
    input_size: int = 256
    enable_A: bool = False  # SPPF augmented with large-kernel attention
    enable_B: bool = False  # context calibration + spatial fusion in the neck
    enable_C: bool = False  # adaptive-threshold focal classification loss
    dfl_bins: int = 16
    seed: int = 0

    def validate(self) -> "ModelConfig":
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be >= 1, got {self.num_classes}")
        if not (0.0 < self.width_multiple <= 1.0):
            raise ConfigError(f"width_multiple must be in (0, 1], got {self.width_multiple}")
        if not (0.0 < self.depth_multiple <= 1.0):
            raise ConfigError(f"depth_multiple must be in (0, 1], got {self.depth_multiple}")
        if self.input_size < 64:
            raise ConfigError(f"input_size must be >= 64, got {self.input_size}")
        if self.input_size % 32 != 0:
            raise ConfigError(f"input_size must be divisible by 32, got {self.input_size}")
        if self.dfl_bins < 2:
            raise ConfigError(f"dfl_bins must be >= 2, got {self.dfl_bins}")
        return self


def reference_shape_config(**overrides) -> ModelConfig:
    """Preset with the reference small-model multipliers (0.50 width /
    0.33 depth at 640 input), sized for parameter-count comparisons rather
    than desk-scale training."""
    base = dict(width_multiple=0.50, depth_multiple=0.33, input_size=640)
    base.update(overrides)
    return ModelConfig(**base).validate()


@dataclass
class LskaConfig:
    base_kernel: int = 5
    dilated_kernel: int = 7
    dilation: int = 3

    @property
    def effective_field(self) -> int:
        return self.base_kernel + (self.dilated_kernel - 1) * self.dilation

    def validate(self) -> "LskaConfig":
        if self.base_kernel % 2 == 0 or self.dilated_kernel % 2 == 0:
            raise ConfigError("LSKA kernel lengths must be odd")
        if self.dilation < 1:
            raise ConfigError(f"dilation must be >= 1, got {self.dilation}")
        if self.effective_field < 11:
            raise ConfigError(
                f"effective receptive field {self.effective_field} < 11; "
                "increase base_kernel/dilated_kernel/dilation"
            )
        return self


@dataclass
class ATFConfig:
    gamma: float = 2.0
    tau: float = 0.25
    tau_mode: str = "batch-adaptive"  # or "fixed"
    tau_momentum: float = 0.9

    def validate(self) -> "ATFConfig":
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if not (0.0 <= self.tau < 1.0):
            raise ConfigError(f"tau must be in [0, 1), got {self.tau}")
        if self.tau_mode not in ("fixed", "batch-adaptive"):
            raise ConfigError(f"unknown tau_mode {self.tau_mode!r}")
        if not (0.0 <= self.tau_momentum < 1.0):
            raise ConfigError(f"tau_momentum must be in [0, 1), got {self.tau_momentum}")
        return self


@dataclass
class AssignerConfig:
    topk: int = 10
    alpha: float = 0.5
    beta: float = 6.0


@dataclass
class LossWeights:
    cls: float = 0.5
    box: float = 7.5
    dfl: float = 1.5


@dataclass
class SceneSpec:
    rows: int = 3
    cols: int = 4
    occupancy: float = 0.9
    class_frequencies: tuple = (0.30, 0.20, 0.14, 0.12, 0.10, 0.08, 0.06)
    occlusion_prob: float = 0.15
    scale_jitter: tuple = (0.85, 1.15)
    image_size: int = 256
    seed: int = 0

    def validate(self) -> "SceneSpec":
        if self.rows < 1 or self.cols < 1:
            raise ConfigError("grid must have at least one row and one column")
        if not (0.0 <= self.occupancy <= 1.0):
            raise ConfigError(f"occupancy must be in [0, 1], got {self.occupancy}")
        freqs = tuple(self.class_frequencies)
        if len(freqs) != 7:
            raise ConfigError(f"class_frequencies must have 7 entries, got {len(freqs)}")
        if any(f < 0 for f in freqs):
            raise ConfigError("class_frequencies must be nonnegative")
        if abs(sum(freqs) - 1.0) > 1e-9:
            raise ConfigError(
                f"class_frequencies must sum to 1 within 1e-9, got {sum(freqs)!r}"
            )
        if not (0.0 <= self.occlusion_prob <= 1.0):
            raise ConfigError(f"occlusion_prob must be in [0, 1], got {self.occlusion_prob}")
        lo, hi = self.scale_jitter
        if not (0.0 < lo <= hi):
            raise ConfigError(f"scale_jitter must satisfy 0 < lo <= hi, got {self.scale_jitter}")
        return self


@dataclass
class OptimConfig:
    learning_rate: float = 0.02
    momentum: float = 0.937
    weight_decay: float = 5e-4
    iterations: int = 500
    batch_size: int = 8
    warmup_steps: int = 50

    def validate(self) -> "OptimConfig":
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        return self


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    atf: ATFConfig = field(default_factory=ATFConfig)
    assigner: AssignerConfig = field(default_factory=AssignerConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    optimizer: OptimConfig = field(default_factory=OptimConfig)
    scene: SceneSpec = field(default_factory=SceneSpec)
    train_images: int = 64
    val_images: int = 16
    dataset_dir: str = "dataset"
    output_dir: str = "runs"
    conf_threshold: float = 0.25
    nms_threshold: float = 0.60

    def validate(self) -> "RunConfig":
        self.model.validate()
        self.atf.validate()
        self.optimizer.validate()
        self.scene.validate()
        return self


def _from_dict(cls, data):
    if isinstance(data, cls):
        return data
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"unknown field {key!r} for {cls.__name__}")
        ftype = fields[key].type
        nested = {
            "ModelConfig": ModelConfig, "ATFConfig": ATFConfig,
            "AssignerConfig": AssignerConfig, "LossWeights": LossWeights,
            "OptimConfig": OptimConfig, "SceneSpec": SceneSpec,
        }.get(ftype if isinstance(ftype, str) else getattr(ftype, "__name__", ""))
        if nested is not None and isinstance(value, dict):
            value = _from_dict(nested, value)
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def run_config_from_dict(data: dict) -> RunConfig:
    return _from_dict(RunConfig, data).validate()


def load_run_config(path: str) -> RunConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top-level config must be a JSON object")
    return run_config_from_dict(data)


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def dump_run_config(cfg: RunConfig, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
