"""
Augment Service - Feature perturbation and rectangle erasing

Both augmentations only ever write `mask_value`, always across all channels of a
pixel, and never modify the batch they are given.
"""

import math
from typing import Optional, Tuple

import numpy as np
from exceptions import ConfigError
from models import Arm, AugmentConfig, TrainConfig

from services.data_service import flip_batch

MAX_ERASE_ATTEMPTS = 10


def _dilate_squares(anchors: np.ndarray, side: int) -> np.ndarray:
    """Cover [r, r + side) x [c, c + side) for every anchor (r, c), clipped at borders."""
    k, h, w = anchors.shape
    padded = np.zeros((k, h + side - 1, w + side - 1), dtype=bool)
    for dr in range(side):
        for dc in range(side):
            padded[:, dr : dr + h, dc : dc + w] |= anchors
    return padded[:, :h, :w]


def fpa_mask(
    shape: Tuple[int, int, int], cfg: AugmentConfig, rng: np.random.Generator
) -> np.ndarray:
    """
    Boolean K x H x W mask of the pixels one FPA call sets to mask_value.

    The batch is selected with probability p. A selected batch draws
    p1 ~ U(0, p1_max) once; then every pixel is masked with probability p1 and,
    independently, anchors with probability p2 a square of side s ~ U{1..s_max}.
    """
    k, h, w = shape
    mask = np.zeros((k, h, w), dtype=bool)
    if rng.random() >= cfg.p:
        return mask

    p1 = rng.uniform(0.0, cfg.p1_max)
    mask |= rng.random((k, h, w)) < p1

    anchors = rng.random((k, h, w)) < cfg.p2
    sides = rng.integers(1, cfg.s_max + 1, size=(k, h, w))
    for side in range(1, cfg.s_max + 1):
        chosen = anchors & (sides == side)
        if chosen.any():
            mask |= _dilate_squares(chosen, side)
    return mask


def fpa_augment_batch(
    batch: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator
) -> np.ndarray:
    """
    Feature perturbation augmentation of a K x H x W x C batch.

    Raises:
        ConfigError: s_max does not fit the image
    """
    k, h, w = batch.shape[:3]
    try:
        cfg.check_image(h, w)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    mask = fpa_mask((k, h, w), cfg, rng)
    out = np.array(batch, copy=True)
    out[mask] = cfg.mask_value
    return out


def rectangle_erase_batch(
    batch: np.ndarray,
    area_range: Tuple[float, float] = (0.02, 0.33),
    aspect_range: Tuple[float, float] = (0.3, 3.3),
    prob: float = 0.5,
    rng: Optional[np.random.Generator] = None,
    mask_value: float = 0.0,
) -> np.ndarray:
    """
    Random erasing: per sample, with probability `prob`, fill one rectangle whose
    area fraction and aspect ratio are drawn from the given ranges.

    A sample whose rectangle does not fit after MAX_ERASE_ATTEMPTS draws is left
    unchanged.
    """
    if not (0 < area_range[0] <= area_range[1] < 1):
        raise ConfigError(f"area_range must lie inside (0, 1), got {area_range}")
    if not (0 < aspect_range[0] <= aspect_range[1]):
        raise ConfigError(f"aspect_range must be positive, got {aspect_range}")
    rng = rng if rng is not None else np.random.default_rng()

    out = np.array(batch, copy=True)
    k, h, w = batch.shape[:3]
    for i in range(k):
        if rng.random() >= prob:
            continue
        for _ in range(MAX_ERASE_ATTEMPTS):
            target = rng.uniform(*area_range) * h * w
            aspect = rng.uniform(*aspect_range)
            rect_h = int(round(math.sqrt(target * aspect)))
            rect_w = int(round(math.sqrt(target / aspect)))
            if 1 <= rect_h < h and 1 <= rect_w < w:
                top = int(rng.integers(0, h - rect_h + 1))
                left = int(rng.integers(0, w - rect_w + 1))
                out[i, top : top + rect_h, left : left + rect_w, :] = mask_value
                break
    return out


def augment_batch(
    batch: np.ndarray, config: TrainConfig, rng: np.random.Generator
) -> np.ndarray:
    """Training augmentation chain: horizontal flip, then the arm's masking."""
    out = flip_batch(batch, rng)
    if config.augmentation == Arm.FPA:
        return fpa_augment_batch(out, config.fpa, rng)
    if config.augmentation == Arm.RECTANGLE:
        rect = config.rectangle
        return rectangle_erase_batch(
            out, rect.area_range, rect.aspect_range, rect.prob, rng, rect.mask_value
        )
    return out
