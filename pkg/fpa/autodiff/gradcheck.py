"""
Gradient checks - Central finite differences against reverse-mode gradients
"""

from typing import Callable

import numpy as np


def numerical_gradient(
    fn: Callable[[np.ndarray], float], array: np.ndarray, h: float = 1e-3
) -> np.ndarray:
    """
    Central-difference gradient of a scalar function.

    Args:
        fn: Maps an array shaped like `array` to a float
        array: Evaluation point (not modified)
        h: Step size

    Returns:
        float64 array of (fn(x + h e_i) - fn(x - h e_i)) / 2h
    """
    point = np.array(array, dtype=np.float64)
    grad = np.zeros_like(point)
    flat_point = point.reshape(-1)
    flat_grad = grad.reshape(-1)
    for i in range(flat_point.size):
        original = flat_point[i]
        flat_point[i] = original + h
        upper = float(fn(point))
        flat_point[i] = original - h
        lower = float(fn(point))
        flat_point[i] = original
        flat_grad[i] = (upper - lower) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |analytic - numeric| / max(1, |analytic|) over all entries."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom))
