"""
Report Service - Diagnostics for a single saliency map

Truncated heatmaps keep only the extreme positive and negative scores; the LIF
score series lines scores up with the logit curve so a rising logit can be
matched to the negative scores masked at that point.
"""

from typing import Dict, List

import numpy as np
from models import PixelRanking, SaliencyMap2D

from services.perturbation_service import rank_pixels, ranked_score_series

QUANTILES = (0.1, 0.5, 0.9)


def check_percentile(percentile: float) -> float:
    if not (50.0 < percentile <= 100.0):
        raise ValueError(f"percentile must lie in (50, 100], got {percentile}")
    return float(percentile)


def truncate_heatmap(scores: np.ndarray, percentile: float) -> np.ndarray:
    """
    Zero every score that is not beyond the `percentile` (positive side) or the
    mirrored 100 - `percentile` (negative side), then clip the survivors at the
    percentile halfway to the extremes.
    """
    percentile = check_percentile(percentile)
    scores = np.asarray(scores, dtype=np.float64)
    high, low = np.percentile(scores, [percentile, 100.0 - percentile])
    clip_high, clip_low = np.percentile(
        scores, [(percentile + 100.0) / 2.0, (100.0 - percentile) / 2.0]
    )
    keep_positive = (scores > high) & (scores > 0)
    keep_negative = (scores < low) & (scores < 0)
    truncated = np.zeros_like(scores)
    truncated[keep_positive] = np.minimum(scores[keep_positive], clip_high)
    truncated[keep_negative] = np.maximum(scores[keep_negative], clip_low)
    return truncated


def _quantiles(values: np.ndarray) -> Dict[str, float]:
    if values.size == 0:
        return {f"q{int(q * 100)}": 0.0 for q in QUANTILES}
    return {f"q{int(q * 100)}": float(np.quantile(values, q)) for q in QUANTILES}


def score_statistics(scores: np.ndarray, truncated: np.ndarray) -> Dict:
    """Shares of positive/negative/zero scores and how many survive truncation."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    truncated = np.asarray(truncated).reshape(-1)
    positive, negative = scores > 0, scores < 0
    total = scores.size
    return {
        "num_pixels": int(total),
        "positive_fraction": float(positive.sum() / total),
        "negative_fraction": float(negative.sum() / total),
        "zero_fraction": float((scores == 0).sum() / total),
        "kept_positive_share": float((truncated > 0).sum() / max(1, positive.sum())),
        "kept_negative_share": float((truncated < 0).sum() / max(1, negative.sum())),
        "positive_quantiles": _quantiles(scores[positive]),
        "negative_quantiles": _quantiles(scores[negative]),
    }


def lif_series_rows(
    map2d: SaliencyMap2D, fractions: np.ndarray, lif_values: np.ndarray
) -> List[Dict]:
    """
    One row per pixel in LIF order: its score and the sample's normalized logit,
    interpolated at the fraction masked once that pixel is gone.
    """
    ranking: PixelRanking = rank_pixels(map2d).reversed()
    series = ranked_score_series(map2d, ranking)
    width = map2d.scores.shape[1]
    total = series.size
    masked_fraction = np.arange(1, total + 1, dtype=np.float64) / total
    logits = np.interp(masked_fraction, fractions, lif_values)
    rows, cols = np.divmod(ranking.order, width)
    return [
        {
            "rank": i,
            "row": int(rows[i]),
            "col": int(cols[i]),
            "score": float(series[i]),
            "masked_fraction": float(masked_fraction[i]),
            "normalized_logit": float(logits[i]),
        }
        for i in range(total)
    ]
