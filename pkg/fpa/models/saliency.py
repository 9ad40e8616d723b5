"""
Saliency Models - Estimators, reductions and importance maps
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field


class BaseEstimator(str, Enum):
    VG = "vg"
    IG = "ig"
    SG = "sg"
    SQ_SG = "sq-sg"
    RANDOM = "random"


class Reduction(str, Enum):
    ABS_SUM = "abs-sum"
    INPUT_PRODUCT_SUM = "input-product-sum"
    INPUT_PRODUCT_ABS_SUM = "input-product-abs-sum"
    PLAIN_SUM = "plain-sum"

    @property
    def uses_input(self) -> bool:
        return self in (Reduction.INPUT_PRODUCT_SUM, Reduction.INPUT_PRODUCT_ABS_SUM)


class Signedness(str, Enum):
    SIGNED = "signed"
    UNSIGNED = "unsigned"


class EstimatorConfig(BaseModel):
    """
    Attributes:
        ig_steps: Right-Riemann steps m of integrated gradients
        sg_samples: Noise draws n of SmoothGrad
        sg_sigma: Noise standard deviation, in normalized units
    """

    ig_steps: int = Field(default=200, ge=1)
    sg_samples: int = Field(default=15, ge=1)
    sg_sigma: float = Field(default=0.2, ge=0)


@dataclass(frozen=True)
class EstimatorSpec:
    """A named estimator/reduction combination."""

    id: str
    base: BaseEstimator
    reduction: Optional[Reduction]
    label: str


ESTIMATORS: Dict[str, EstimatorSpec] = {
    spec.id: spec
    for spec in [
        EstimatorSpec("ig_sum", BaseEstimator.IG, Reduction.PLAIN_SUM, "IG_sum"),
        EstimatorSpec("ig_abs", BaseEstimator.IG, Reduction.ABS_SUM, "IG_abs"),
        EstimatorSpec("vg_abs", BaseEstimator.VG, Reduction.ABS_SUM, "VG_abs"),
        EstimatorSpec("vgx_sum", BaseEstimator.VG, Reduction.INPUT_PRODUCT_SUM, "VG′_sum"),
        EstimatorSpec("vgx_abs", BaseEstimator.VG, Reduction.INPUT_PRODUCT_ABS_SUM, "VG′_abs"),
        EstimatorSpec("sg_abs", BaseEstimator.SG, Reduction.ABS_SUM, "SG_abs"),
        EstimatorSpec("sgx_sum", BaseEstimator.SG, Reduction.INPUT_PRODUCT_SUM, "SG′_sum"),
        EstimatorSpec("sgx_abs", BaseEstimator.SG, Reduction.INPUT_PRODUCT_ABS_SUM, "SG′_abs"),
        EstimatorSpec("sq-sg_sum", BaseEstimator.SQ_SG, Reduction.PLAIN_SUM, "SQ-SG_sum"),
        EstimatorSpec("random", BaseEstimator.RANDOM, None, "Random"),
    ]
}

DEFAULT_ESTIMATORS: List[str] = list(ESTIMATORS.keys())


def reduction_signedness(base: BaseEstimator, reduction: Reduction) -> Signedness:
    if reduction == Reduction.INPUT_PRODUCT_SUM:
        return Signedness.SIGNED
    if reduction == Reduction.PLAIN_SUM and base not in (BaseEstimator.SQ_SG,):
        return Signedness.SIGNED
    return Signedness.UNSIGNED


@dataclass(eq=False)
class SaliencyMap3D:
    scores: np.ndarray
    estimator: BaseEstimator
    class_index: int
    sample_id: int


@dataclass(eq=False)
class SaliencyMap2D:
    scores: np.ndarray
    signedness: Signedness
    reduction: Optional[Reduction]
    estimator: str
    class_index: int = -1
    sample_id: int = -1
