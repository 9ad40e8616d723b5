"""
Perturbation Service - MIF/LIF curves, the fidelity area and its bootstrap CI

Pixels are masked cumulatively in ranking order: the pixels masked at fraction
f1 are a subset of those masked at any f2 > f1. The fidelity area A is the
trapezoidal area between the mean LIF and MIF curves with the fraction axis in
percentage points.
"""

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
from config.settings import settings
from exceptions import DataError, GridMismatchError
from models import (
    Direction,
    EstimatorEvaluation,
    FidelityResult,
    ModelParams,
    PerturbationCurve,
    PixelRanking,
    SaliencyMap2D,
    SampleCurve,
)
from tqdm import tqdm

from services.model_service import logits_array

logger = logging.getLogger(__name__)

DEFAULT_FRACTION_STEPS = 50
DEFAULT_RESAMPLES = 1000


# =============================================================================
# Rankings and masking
# =============================================================================


def fraction_grid(steps: int = DEFAULT_FRACTION_STEPS) -> np.ndarray:
    """steps + 1 fractions from 0 to 1; 50 steps gives 0%, 2%, ..., 100%."""
    if steps < 1:
        raise ValueError(f"fraction grid needs at least one step, got {steps}")
    return np.arange(steps + 1, dtype=np.float64) / steps


def check_fraction_grid(fractions: np.ndarray) -> np.ndarray:
    fractions = np.asarray(fractions, dtype=np.float64)
    if fractions.ndim != 1 or fractions.size < 2:
        raise GridMismatchError("fraction grid must be 1-D with at least two points")
    if fractions[0] != 0.0:
        raise GridMismatchError(f"fraction grid must start at 0, starts at {fractions[0]}")
    if np.any(np.diff(fractions) <= 0) or fractions[-1] > 1.0:
        raise GridMismatchError("fraction grid must be strictly increasing within [0, 1]")
    return fractions


def masked_counts(fractions: np.ndarray, num_pixels: int) -> np.ndarray:
    """floor(f * H * W) pixels masked at each fraction."""
    return np.floor(np.asarray(fractions) * num_pixels + 1e-9).astype(np.int64)


def rank_pixels(map2d: SaliencyMap2D) -> PixelRanking:
    """
    MIF ranking: descending score, ties by ascending row-major index.

    The LIF ranking is `rank_pixels(map).reversed()`.
    """
    flat = np.asarray(map2d.scores, dtype=np.float64).reshape(-1)
    order = np.argsort(-flat, kind="stable")
    return PixelRanking(order=order, direction=Direction.MIF, signedness=map2d.signedness)


def ranked_score_series(map2d: SaliencyMap2D, ranking: PixelRanking) -> np.ndarray:
    """Map scores emitted in ranking order."""
    return np.asarray(map2d.scores).reshape(-1)[ranking.order]


def masked_copies(
    x: np.ndarray, ranking: PixelRanking, fractions: np.ndarray, mask_value: float
) -> np.ndarray:
    """One image per fraction, built by extending a single working copy."""
    height, width = x.shape[:2]
    counts = masked_counts(fractions, height * width)
    work = np.array(x, copy=True)
    copies = np.empty((len(fractions),) + x.shape, dtype=x.dtype)
    done = 0
    for i, count in enumerate(counts):
        pixels = ranking.order[done:count]
        rows, cols = np.divmod(pixels, width)
        work[rows, cols, :] = mask_value
        copies[i] = work
        done = max(done, count)
    return copies


# =============================================================================
# Curves
# =============================================================================


def perturbation_curve(
    model: ModelParams,
    x: np.ndarray,
    ranking: PixelRanking,
    fractions: np.ndarray,
    mask_value: float,
    c: int,
    sample_id: int = -1,
) -> SampleCurve:
    """
    Logit S_c after masking the first floor(f * H * W) ranked pixels, divided by
    the unperturbed S_c. The value at fraction 0 is exactly 1.
    """
    return perturbation_curves(
        model, x[None], [ranking], fractions, mask_value, [c], [sample_id]
    )[0]


def perturbation_curves(
    model: ModelParams,
    images: np.ndarray,
    rankings: Sequence[PixelRanking],
    fractions: np.ndarray,
    mask_value: float,
    classes: Sequence[int],
    sample_ids: Optional[Sequence[int]] = None,
    desc: Optional[str] = None,
) -> List[SampleCurve]:
    """perturbation_curve for many samples, packing forward passes together."""
    fractions = check_fraction_grid(fractions)
    if sample_ids is None:
        sample_ids = list(range(len(images)))
    per_pass = max(1, settings.eval_batch_size // len(fractions))

    curves: List[SampleCurve] = []
    starts = range(0, len(images), per_pass)
    for start in tqdm(starts, desc=desc, leave=False, disable=not settings.show_progress or desc is None):
        stop = min(start + per_pass, len(images))
        stacked = np.concatenate(
            [masked_copies(images[i], rankings[i], fractions, mask_value) for i in range(start, stop)]
        )
        logits = logits_array(model, stacked, batch_size=len(stacked)).astype(np.float64)
        for offset, i in enumerate(range(start, stop)):
            rows = logits[offset * len(fractions) : (offset + 1) * len(fractions), classes[i]]
            unperturbed = rows[0]
            with np.errstate(divide="ignore", invalid="ignore"):
                values = rows / unperturbed
            curves.append(
                SampleCurve(
                    fractions=fractions,
                    values=values,
                    raw_logits=rows,
                    class_index=int(classes[i]),
                    sample_id=int(sample_ids[i]),
                )
            )
    return curves


def aggregate_curves(
    curves: Sequence[SampleCurve], metadata: Optional[Dict] = None
) -> PerturbationCurve:
    """
    Mean normalized logit per fraction over the usable samples.

    Samples whose unperturbed logit is within 1e-6 of zero are left out and
    counted in metadata["excluded_samples"]; negative unperturbed logits are kept
    and counted in metadata["negative_logit_samples"].
    """
    if not curves:
        raise ValueError("cannot aggregate an empty set of curves")
    fractions = curves[0].fractions
    for curve in curves[1:]:
        if not np.array_equal(curve.fractions, fractions):
            raise GridMismatchError("curves were computed on different fraction grids")

    usable = [curve for curve in curves if not curve.excluded]
    if not usable:
        raise DataError("every sample has a near-zero unperturbed logit")

    per_sample = np.stack([curve.values for curve in usable]).astype(np.float64)
    metadata = dict(metadata or {})
    metadata["excluded_samples"] = len(curves) - len(usable)
    metadata["excluded_ids"] = [curve.sample_id for curve in curves if curve.excluded]
    metadata["negative_logit_samples"] = sum(1 for c in usable if c.unperturbed_logit < 0)
    return PerturbationCurve(
        fractions=fractions,
        mean_normalized_logits=per_sample.mean(axis=0),
        per_sample=per_sample,
        sample_ids=np.array([curve.sample_id for curve in usable], dtype=np.int64),
        metadata=metadata,
    )


def curve_value_at(curve: PerturbationCurve, fraction: float) -> float:
    """Mean curve linearly interpolated at `fraction`."""
    return float(np.interp(fraction, curve.fractions, curve.mean_normalized_logits))


# =============================================================================
# Fidelity
# =============================================================================


def _check_same_grid(lif: PerturbationCurve, mif: PerturbationCurve) -> None:
    if not np.array_equal(lif.fractions, mif.fractions):
        raise GridMismatchError("LIF and MIF curves use different fraction grids")


def fidelity_area(lif: PerturbationCurve, mif: PerturbationCurve) -> float:
    """Trapezoidal area of (LIF - MIF) over the fraction axis in [0, 100]."""
    _check_same_grid(lif, mif)
    gap = np.asarray(lif.mean_normalized_logits, dtype=np.float64) - np.asarray(
        mif.mean_normalized_logits, dtype=np.float64
    )
    return float(np.trapezoid(gap, x=np.asarray(lif.fractions) * 100.0))


def bootstrap_ci(
    lif: PerturbationCurve,
    mif: PerturbationCurve,
    resamples: int = DEFAULT_RESAMPLES,
    seed: int = 0,
) -> FidelityResult:
    """
    Percentile bootstrap (2.5 / 97.5) of A.

    Each resample draws sample indices with replacement from its own child of
    SeedSequence(seed), rebuilds both mean curves and recomputes A.
    """
    _check_same_grid(lif, mif)
    if lif.per_sample is None or mif.per_sample is None:
        raise ValueError("bootstrap needs per-sample curves")
    if lif.per_sample.shape != mif.per_sample.shape or (
        lif.sample_ids is not None
        and mif.sample_ids is not None
        and not np.array_equal(lif.sample_ids, mif.sample_ids)
    ):
        raise GridMismatchError("LIF and MIF per-sample curves are not paired")
    n = lif.per_sample.shape[0]
    if n < 2:
        raise DataError(f"bootstrap needs at least 2 usable samples, got {n}")
    if resamples < 1:
        raise ValueError(f"resamples must be >= 1, got {resamples}")

    area = fidelity_area(lif, mif)
    gaps = lif.per_sample.astype(np.float64) - mif.per_sample.astype(np.float64)
    axis = np.asarray(lif.fractions) * 100.0

    weights = np.empty((resamples, n), dtype=np.float64)
    for r, child in enumerate(np.random.SeedSequence(seed).spawn(resamples)):
        picks = np.random.default_rng(child).integers(0, n, size=n)
        weights[r] = np.bincount(picks, minlength=n)
    mean_gaps = weights @ gaps / n
    areas = np.trapezoid(mean_gaps, x=axis, axis=1)

    low, high = np.percentile(areas, [2.5, 97.5])
    return FidelityResult(
        estimator=str(lif.metadata.get("estimator", "")),
        augmentation=str(lif.metadata.get("augmentation", "")),
        A=area,
        ci_low=float(min(low, area)),
        ci_high=float(max(high, area)),
        num_samples=n,
        bootstrap_resamples=resamples,
        seed=seed,
        excluded_samples=int(lif.metadata.get("excluded_samples", 0)),
        negative_logit_samples=int(lif.metadata.get("negative_logit_samples", 0)),
    )


def evaluate_estimator(
    model: ModelParams,
    images: np.ndarray,
    maps: Sequence[SaliencyMap2D],
    fractions: np.ndarray,
    mask_value: float,
    resamples: int = DEFAULT_RESAMPLES,
    seed: int = 0,
    metadata: Optional[Dict] = None,
) -> EstimatorEvaluation:
    """
    Paired MIF / LIF curves and the fidelity of one estimator over a sample set.

    maps[k] must belong to images[k]; its class_index is the class whose logit is
    tracked.
    """
    if len(maps) != len(images):
        raise ValueError(f"{len(maps)} maps for {len(images)} images")
    metadata = dict(metadata or {})
    estimator = metadata.setdefault("estimator", maps[0].estimator if maps else "")

    mif_rankings = [rank_pixels(m) for m in maps]
    lif_rankings = [ranking.reversed() for ranking in mif_rankings]
    classes = [m.class_index for m in maps]
    ids = [m.sample_id for m in maps]

    mif_curves = perturbation_curves(
        model, images, mif_rankings, fractions, mask_value, classes, ids, desc=f"{estimator} MIF"
    )
    lif_curves = perturbation_curves(
        model, images, lif_rankings, fractions, mask_value, classes, ids, desc=f"{estimator} LIF"
    )
    mif = aggregate_curves(mif_curves, {**metadata, "direction": Direction.MIF.value})
    lif = aggregate_curves(lif_curves, {**metadata, "direction": Direction.LIF.value})
    fidelity = bootstrap_ci(lif, mif, resamples, seed)
    logger.info(
        f"  {estimator:<10} A={fidelity.A:7.2f}  "
        f"CI=[{fidelity.ci_low:7.2f}, {fidelity.ci_high:7.2f}]  "
        f"n={fidelity.num_samples} excluded={fidelity.excluded_samples}"
    )
    return EstimatorEvaluation(
        estimator=estimator,
        mif=mif,
        lif=lif,
        fidelity=fidelity,
        excluded_ids=list(mif.metadata["excluded_ids"]),
    )
