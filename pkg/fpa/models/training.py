"""
Training Models - SGD recipe and per-epoch history
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import List

from pydantic import BaseModel, Field, field_validator

from .augment import AugmentConfig, RectangleConfig
from .layers import ModelParams


class Arm(str, Enum):
    """Augmentation arm of an experiment."""

    NONE = "none"
    FPA = "fpa"
    RECTANGLE = "rectangle"


class TrainConfig(BaseModel):
    epochs: int = Field(default=15, ge=0)
    lr: float = Field(default=0.05, gt=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    weight_decay: float = Field(default=5e-4, ge=0)
    lr_drop_epochs: List[int] = Field(default_factory=lambda: [10])
    lr_drop_factor: float = Field(default=10.0, gt=0)
    batch_size: int = Field(default=64, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    augmentation: Arm = Arm.NONE
    fpa: AugmentConfig = Field(default_factory=AugmentConfig)
    rectangle: RectangleConfig = Field(default_factory=RectangleConfig)

    @field_validator("lr_drop_epochs")
    @classmethod
    def _sorted_epochs(cls, value: List[int]) -> List[int]:
        if any(epoch < 0 for epoch in value):
            raise ValueError("lr_drop_epochs must be non-negative")
        return sorted(value)

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a zero-based epoch index."""
        drops = sum(1 for drop in self.lr_drop_epochs if epoch >= drop)
        return self.lr / (self.lr_drop_factor**drops)


class EpochMetrics(BaseModel):
    epoch: int
    lr: float
    train_loss: float
    train_accuracy: float
    val_accuracy: float


@dataclass
class TrainResult:
    model: ModelParams
    history: List[EpochMetrics] = field(default_factory=list)
