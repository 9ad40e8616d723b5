"""
Augmentation Models - Parameters of the masking augmentations
"""

from typing import Tuple

from pydantic import BaseModel, Field, model_validator


class AugmentConfig(BaseModel):
    """
    Feature perturbation parameters.

    Attributes:
        p: Probability that a mini-batch is perturbed at all
        p1_max: Upper bound of the per-batch pixel masking probability
        p2: Per-pixel probability of anchoring a masked square
        s_max: Largest square side, in pixels
        mask_value: Fill value in normalized space
    """

    p: float = Field(default=0.5, ge=0, le=1)
    p1_max: float = Field(default=0.25, ge=0, le=1)
    p2: float = Field(default=0.1, ge=0, le=1)
    s_max: int = Field(default=3, ge=1)
    mask_value: float = 0.0

    def check_image(self, height: int, width: int) -> None:
        if self.s_max >= min(height, width):
            raise ValueError(
                f"s_max={self.s_max} must be smaller than min(H, W)={min(height, width)}"
            )


class RectangleConfig(BaseModel):
    """Random erasing: one rectangle per selected sample."""

    prob: float = Field(default=0.5, ge=0, le=1)
    area_range: Tuple[float, float] = (0.02, 0.33)
    aspect_range: Tuple[float, float] = (0.3, 3.3)
    mask_value: float = 0.0

    @model_validator(mode="after")
    def _check_ranges(self):
        low, high = self.area_range
        if not (0 < low <= high < 1):
            raise ValueError(f"area_range must lie inside (0, 1), got {self.area_range}")
        low, high = self.aspect_range
        if not (0 < low <= high):
            raise ValueError(f"aspect_range must be positive, got {self.aspect_range}")
        return self
