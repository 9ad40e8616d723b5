"""
Evaluation Models - Pixel rankings, perturbation curves and fidelity results
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator

from .saliency import Signedness

MIN_ABS_LOGIT = 1e-6


class Direction(str, Enum):
    MIF = "MIF"
    LIF = "LIF"


@dataclass(frozen=True, eq=False)
class PixelRanking:
    """
    Attributes:
        order: Row-major pixel indices, most important first for MIF
        direction: MIF or LIF
        signedness: Inherited from the ranked map
    """

    order: np.ndarray
    direction: Direction
    signedness: Signedness

    def reversed(self) -> "PixelRanking":
        flipped = Direction.LIF if self.direction == Direction.MIF else Direction.MIF
        return PixelRanking(self.order[::-1].copy(), flipped, self.signedness)


@dataclass(eq=False)
class SampleCurve:
    """Normalized logits of one sample along the fraction grid."""

    fractions: np.ndarray
    values: np.ndarray
    raw_logits: np.ndarray
    class_index: int
    sample_id: int = -1

    @property
    def unperturbed_logit(self) -> float:
        return float(self.raw_logits[0])

    @property
    def excluded(self) -> bool:
        """Unperturbed logit too close to zero to normalize by."""
        return abs(self.unperturbed_logit) < MIN_ABS_LOGIT


@dataclass(eq=False)
class PerturbationCurve:
    """
    Mean normalized logit per masking fraction.

    Attributes:
        fractions: Strictly increasing grid starting at 0
        mean_normalized_logits: One value per fraction
        per_sample: samples x fractions matrix kept for bootstrapping
        sample_ids: Row labels of per_sample
        metadata: estimator, direction, model, augmentation, exclusions
    """

    fractions: np.ndarray
    mean_normalized_logits: np.ndarray
    per_sample: Optional[np.ndarray] = None
    sample_ids: Optional[np.ndarray] = None
    metadata: Dict = field(default_factory=dict)

    @property
    def num_samples(self) -> int:
        return 0 if self.per_sample is None else int(self.per_sample.shape[0])


class FidelityResult(BaseModel):
    """
    Area between the LIF and MIF curves, in percentage points.
    """

    estimator: str = ""
    augmentation: str = ""
    A: float
    ci_low: float
    ci_high: float
    num_samples: int = Field(ge=0)
    bootstrap_resamples: int = Field(ge=0)
    seed: int = 0
    excluded_samples: int = 0
    negative_logit_samples: int = 0
    config_hash: str = ""

    @model_validator(mode="after")
    def _ordered_interval(self):
        if not (self.ci_low <= self.A <= self.ci_high):
            raise ValueError(
                f"confidence interval [{self.ci_low}, {self.ci_high}] excludes A={self.A}"
            )
        return self

    @property
    def excludes_zero(self) -> bool:
        return self.ci_low > 0 or self.ci_high < 0


@dataclass
class EstimatorEvaluation:
    """Paired curves and the fidelity of one estimator on one model."""

    estimator: str
    mif: PerturbationCurve
    lif: PerturbationCurve
    fidelity: FidelityResult
    excluded_ids: List[int] = field(default_factory=list)
