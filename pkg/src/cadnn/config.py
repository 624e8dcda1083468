"""Experiment configuration: a flat JSON object with a fixed key set."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .dataset import AUGMENTATIONS, CLASS_MODES

MODELS = ("proposed", "vgg_style", "residual_style")
OPTIMIZERS = ("adam", "sgd")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    seed: int = 0
    data_root: str = "data"
    class_mode: str = "four"
    class_mapping: str | None = None  # JSON file {old: new | "DROP"}; used when class_mode == "custom"
    model: str = "proposed"
    model_options: dict = field(default_factory=dict)
    freeze_boundary: str | None = None
    pretrained_weights: str | None = None
    input_size: int = 224
    epochs: int = 70
    batch_size: int = 128
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    val: dict = field(default_factory=lambda: {"fraction": 0.2})
    augment: dict = field(default_factory=lambda: {name: False for name in AUGMENTATIONS})
    out_dir: str = "runs/latest"
    parallel: int = 0
    record_timing: bool = True

    def validate(self) -> ExperimentConfig:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(isinstance(self.seed, int) and 0 <= self.seed < 2**64, "seed must be an unsigned 64-bit integer")
        need(self.class_mode in (*CLASS_MODES, "custom"), f"class_mode must be one of {[*CLASS_MODES, 'custom']}")
        need(self.class_mode != "custom" or self.class_mapping, "class_mode 'custom' needs class_mapping")
        need(self.model in MODELS, f"model must be one of {MODELS}")
        need(isinstance(self.model_options, dict), "model_options must be an object")
        need(isinstance(self.input_size, int) and self.input_size >= 1, "input_size must be a positive integer")
        need(isinstance(self.epochs, int) and self.epochs >= 0, "epochs must be an integer >= 0")
        need(isinstance(self.batch_size, int) and self.batch_size >= 1, "batch_size must be an integer >= 1")
        need(isinstance(self.learning_rate, (int, float)) and self.learning_rate > 0, "learning_rate must be > 0")
        need(self.optimizer in OPTIMIZERS, f"optimizer must be one of {OPTIMIZERS}")
        need(isinstance(self.parallel, int) and self.parallel >= 0, "parallel must be an integer >= 0")
        need(isinstance(self.val, dict) and len(self.val) == 1, "val must be {fraction: f} or {fixed_per_class: n}")
        (mode, value), = self.val.items()
        if mode == "fraction":
            need(isinstance(value, (int, float)) and 0 < value < 1, "val.fraction must be in (0, 1)")
        elif mode == "fixed_per_class":
            need(isinstance(value, int) and value >= 0, "val.fixed_per_class must be an integer >= 0")
        else:
            raise ConfigError(f"unknown val mode {mode!r}")
        need(isinstance(self.augment, dict), "augment must be an object")
        unknown = set(self.augment) - set(AUGMENTATIONS)
        need(not unknown, f"unknown augment flags {sorted(unknown)}")
        self.augment = {name: bool(self.augment.get(name, False)) for name in AUGMENTATIONS}
        return self

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        return cls(**data).validate()

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(data)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"
