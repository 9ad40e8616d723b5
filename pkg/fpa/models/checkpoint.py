"""
Checkpoint Model - A trained classifier with the metadata needed to reuse it
"""

from dataclasses import dataclass
from typing import Optional

from .dataset import Normalization
from .layers import ModelParams

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    """
    Attributes:
        model: Architecture and trained parameters
        normalization: How raw pixels were mapped to model inputs
        seed: Training seed
        arm: Augmentation arm the model was trained with
        config_hash: Hash of the experiment config that produced it
        test_accuracy: Clean test accuracy measured after training
    """

    model: ModelParams
    normalization: Normalization
    seed: int
    arm: str
    config_hash: str = ""
    test_accuracy: Optional[float] = None
