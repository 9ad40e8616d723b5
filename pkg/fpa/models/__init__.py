"""
Domain Models - Typed records shared by the services

This package contains the parameter schemas (pydantic) and the array-carrying
records (dataclasses) that flow between training, saliency and evaluation.
"""

from .augment import AugmentConfig, RectangleConfig
from .checkpoint import CHECKPOINT_FORMAT_VERSION, Checkpoint
from .dataset import (
    Batch,
    Dataset,
    IdxManifest,
    Normalization,
    NormalizationMode,
    Split,
)
from .evaluation import (
    Direction,
    EstimatorEvaluation,
    FidelityResult,
    PerturbationCurve,
    PixelRanking,
    SampleCurve,
)
from .layers import LayerKind, LayerSpec, ModelParams, desk_cnn_layers, mlp_layers
from .saliency import (
    DEFAULT_ESTIMATORS,
    ESTIMATORS,
    BaseEstimator,
    EstimatorConfig,
    EstimatorSpec,
    Reduction,
    SaliencyMap2D,
    SaliencyMap3D,
    Signedness,
)
from .training import Arm, EpochMetrics, TrainConfig, TrainResult

__all__ = [
    "Arm",
    "AugmentConfig",
    "BaseEstimator",
    "Batch",
    "CHECKPOINT_FORMAT_VERSION",
    "Checkpoint",
    "DEFAULT_ESTIMATORS",
    "Dataset",
    "Direction",
    "ESTIMATORS",
    "EpochMetrics",
    "EstimatorConfig",
    "EstimatorEvaluation",
    "EstimatorSpec",
    "FidelityResult",
    "IdxManifest",
    "LayerKind",
    "LayerSpec",
    "ModelParams",
    "Normalization",
    "NormalizationMode",
    "PerturbationCurve",
    "PixelRanking",
    "RectangleConfig",
    "Reduction",
    "SaliencyMap2D",
    "SaliencyMap3D",
    "SampleCurve",
    "Signedness",
    "Split",
    "TrainConfig",
    "TrainResult",
    "desk_cnn_layers",
    "mlp_layers",
]
