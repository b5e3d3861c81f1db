"""Training configuration with hard validation of the tuning ranges.

Every hyperparameter must sit inside its validated tuning range; an
out-of-range value is rejected at load with an error naming the field.
The one relaxation: epoch caps below the range minimum are allowed with
a warning, since patience-based early stopping can end training at any
epoch anyway (this is what makes short smoke runs possible).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

logger = logging.getLogger(__name__)

ALLOWED_IMAGE_SIZES = (320, 512, 640, 896, 1024, 1216)
ALLOWED_OPTIMIZERS = ("Adam", "SGD", "AdamW", "RMSProp", "Momentum")

#: Inclusive tuning ranges for the scalar hyperparameters.
RANGES = {
    "batch_size": (4, 32),
    "epochs": (200, 1500),
    "momentum": (0.9, 0.99),
    "weight_decay": (1e-5, 1e-3),
    "iou": (0.2, 0.7),
    "lr0": (0.00126, 0.1),
}


class ConfigRangeError(ValueError):
    """A hyperparameter violated its tuning range; names the field."""

    def __init__(self, name: str, value, allowed):
        super().__init__(f"{name}={value!r} outside allowed {allowed}")
        self.field = name


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 4
    epochs: int = 600
    image_size: int = 320
    optimizer: str = "SGD"
    momentum: float = 0.937
    weight_decay: float = 0.0005
    iou: float = 0.7
    lr0: float = 0.01
    patience: int = 100
    seed: int = 0
    confidence_threshold: float = 0.25
    channels: tuple[int, ...] = (8, 16, 32, 32)

    def __post_init__(self) -> None:
        for name in ("batch_size", "momentum", "weight_decay", "iou", "lr0"):
            low, high = RANGES[name]
            value = getattr(self, name)
            if not (low <= value <= high):
                raise ConfigRangeError(name, value, RANGES[name])
        low, high = RANGES["epochs"]
        if self.epochs > high or self.epochs < 1:
            raise ConfigRangeError("epochs", self.epochs, RANGES["epochs"])
        if self.epochs < low:
            logger.warning(
                "epochs=%d below the tuning range %s; allowed as a smoke-scale "
                "truncation (early stopping may end training sooner anyway)",
                self.epochs,
                RANGES["epochs"],
            )
        if self.image_size not in ALLOWED_IMAGE_SIZES:
            raise ConfigRangeError("image_size", self.image_size, ALLOWED_IMAGE_SIZES)
        if self.optimizer not in ALLOWED_OPTIMIZERS:
            raise ConfigRangeError("optimizer", self.optimizer, ALLOWED_OPTIMIZERS)
        if self.patience < 1:
            raise ConfigRangeError("patience", self.patience, ">= 1")
        if not (0 < self.confidence_threshold < 1):
            raise ConfigRangeError(
                "confidence_threshold", self.confidence_threshold, "(0, 1)"
            )

    @classmethod
    def from_dict(cls, data: dict) -> "TrainingConfig":
        known = {f for f in cls.__dataclass_fields__}  # noqa: C416
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        if "channels" in data:
            data = dict(data, channels=tuple(data["channels"]))
        return cls(**data)
