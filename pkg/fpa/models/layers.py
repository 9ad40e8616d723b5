"""
Layer Models - Classifier architecture and parameters

A classifier is an ordered list of LayerSpec entries applied to NHWC batches.
Parameters live in ModelParams, keyed "<layer index>.weight" / "<layer index>.bias".
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator


class LayerKind(str, Enum):
    CONV = "conv"
    RELU = "relu"
    POOL = "pool"
    FLATTEN = "flatten"
    DENSE = "dense"


class LayerSpec(BaseModel):
    """
    One layer of a feedforward classifier.

    Only the fields relevant to `kind` are read:
    - conv: kernel_size, channels, stride, padding
    - pool: pool_size, pool_mode
    - dense: units
    """

    kind: LayerKind
    kernel_size: int = Field(default=3, ge=1)
    channels: Optional[int] = Field(default=None, ge=1)
    stride: int = Field(default=1, ge=1)
    padding: int = Field(default=0, ge=0)
    units: Optional[int] = Field(default=None, ge=1)
    pool_size: int = Field(default=2, ge=1)
    pool_mode: str = Field(default="avg", pattern="^(avg|max)$")

    @model_validator(mode="after")
    def _check_kind_fields(self):
        if self.kind == LayerKind.CONV and self.channels is None:
            raise ValueError("conv layer needs 'channels'")
        if self.kind == LayerKind.DENSE and self.units is None:
            raise ValueError("dense layer needs 'units'")
        return self

    @property
    def has_params(self) -> bool:
        return self.kind in (LayerKind.CONV, LayerKind.DENSE)


@dataclass
class ModelParams:
    """
    A built classifier.

    Attributes:
        layers: Architecture, in application order
        input_shape: H x W x C of a single input
        num_classes: Width of the logit layer
        params: Ordered parameter map, float32 arrays
    """

    layers: List[LayerSpec]
    input_shape: Tuple[int, int, int]
    num_classes: int
    params: Dict[str, np.ndarray] = field(default_factory=dict)

    def parameter_names(self) -> List[str]:
        return list(self.params.keys())

    def with_params(self, params: Dict[str, np.ndarray]) -> "ModelParams":
        return ModelParams(
            layers=self.layers,
            input_shape=self.input_shape,
            num_classes=self.num_classes,
            params=params,
        )

    def is_finite(self) -> bool:
        return all(np.isfinite(value).all() for value in self.params.values())


def desk_cnn_layers(num_classes: int = 10, channels: Tuple[int, int] = (8, 16)) -> List[LayerSpec]:
    """conv3x3 -> relu -> avgpool, twice, then a dense head."""
    first, second = channels
    return [
        LayerSpec(kind=LayerKind.CONV, kernel_size=3, channels=first, padding=1),
        LayerSpec(kind=LayerKind.RELU),
        LayerSpec(kind=LayerKind.POOL, pool_size=2),
        LayerSpec(kind=LayerKind.CONV, kernel_size=3, channels=second, padding=1),
        LayerSpec(kind=LayerKind.RELU),
        LayerSpec(kind=LayerKind.POOL, pool_size=2),
        LayerSpec(kind=LayerKind.FLATTEN),
        LayerSpec(kind=LayerKind.DENSE, units=num_classes),
    ]


def mlp_layers(hidden: List[int], num_classes: int) -> List[LayerSpec]:
    layers = [LayerSpec(kind=LayerKind.FLATTEN)]
    for units in hidden:
        layers.append(LayerSpec(kind=LayerKind.DENSE, units=units))
        layers.append(LayerSpec(kind=LayerKind.RELU))
    layers.append(LayerSpec(kind=LayerKind.DENSE, units=num_classes))
    return layers
