"""
Dataset Models - Labeled images, splits and normalization metadata

Images are stored as one float32 array of shape N x H x W x C. Datasets are never
mutated in place; every transformation returns a new Dataset.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field


class Split(str, Enum):
    TRAIN = "train"
    TEST = "test"


class NormalizationMode(str, Enum):
    RANGE = "range"
    ZSCORE = "zscore"


class Normalization(BaseModel):
    """
    How raw pixels map to model inputs.

    Attributes:
        mode: range ([-1, 1]) or zscore (per-channel train statistics)
        raw_max: 255 for byte images, 1 for [0, 1] images
        mean: Per-channel mean of raw pixels (zscore only)
        std: Per-channel std of raw pixels (zscore only)
    """

    mode: NormalizationMode = NormalizationMode.RANGE
    raw_max: float = Field(default=255.0, gt=0)
    mean: Optional[List[float]] = None
    std: Optional[List[float]] = None

    def apply(self, raw: np.ndarray) -> np.ndarray:
        raw = raw.astype(np.float64)
        if self.mode == NormalizationMode.RANGE:
            return 2.0 * raw / self.raw_max - 1.0
        return (raw - np.asarray(self.mean)) / np.asarray(self.std)

    def invert(self, normalized: np.ndarray) -> np.ndarray:
        normalized = normalized.astype(np.float64)
        if self.mode == NormalizationMode.RANGE:
            return (normalized + 1.0) * self.raw_max / 2.0
        return normalized * np.asarray(self.std) + np.asarray(self.mean)

    def black_image(self, shape: Tuple[int, int, int]) -> np.ndarray:
        """Raw value 0 in normalized space (the integrated gradients baseline)."""
        return self.apply(np.zeros(shape)).astype(np.float32)


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Attributes:
        split: train or test
        images: N x H x W x C float32
        labels: N int64 class indices
        ids: N stable sample identifiers
        num_classes: Number of classes
        normalization: Set once the pixels are normalized, None for raw data
        raw_normalization: Normalization the raw pixels are meant for
        class_names: Optional display names
    """

    split: Split
    images: np.ndarray
    labels: np.ndarray
    ids: np.ndarray
    num_classes: int
    normalization: Optional[Normalization] = None
    raw_normalization: Normalization = field(default_factory=Normalization)
    class_names: Optional[List[str]] = None

    def __post_init__(self):
        images = np.array(self.images, dtype=np.float32)
        images.flags.writeable = False
        labels = np.array(self.labels, dtype=np.int64)
        labels.flags.writeable = False
        ids = np.array(self.ids, dtype=np.int64)
        ids.flags.writeable = False
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return int(self.images.shape[0])

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return tuple(int(v) for v in self.images.shape[1:])

    @property
    def is_normalized(self) -> bool:
        return self.normalization is not None

    def evolve(self, **changes) -> "Dataset":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class Batch:
    images: np.ndarray
    labels: np.ndarray
    ids: np.ndarray

    def __len__(self) -> int:
        return int(self.images.shape[0])


class IdxManifest(BaseModel):
    """
    Dataset manifest for IDX corpora. Paths are relative to the manifest file.
    """

    train_images: str
    train_labels: str
    test_images: str
    test_labels: str
    normalization: Optional[NormalizationMode] = None
    class_names: Optional[List[str]] = None
