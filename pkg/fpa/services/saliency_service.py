"""
Saliency Service - Gradient importance estimators and channel reductions

Every estimator differentiates the pre-softmax logit S_c of a fixed class c,
normally the argmax of the unperturbed input.
"""

from typing import Dict, Iterable, Optional, Sequence

import numpy as np
from autodiff import Tensor, backward, gather_logit
from config.settings import settings
from exceptions import DoubleMultiplicationError
from models import (
    ESTIMATORS,
    BaseEstimator,
    EstimatorConfig,
    ModelParams,
    Reduction,
    SaliencyMap2D,
    SaliencyMap3D,
    Signedness,
)
from models.saliency import reduction_signedness

from services.model_service import forward, forward_logits

SG_STREAM = 0
RANDOM_STREAM = 1


def sample_rng(seed: int, sample_id: int, stream: int) -> np.random.Generator:
    """Independent generator per (master seed, sample, purpose)."""
    return np.random.default_rng([seed, int(sample_id), stream])


def predicted_class(model: ModelParams, x: np.ndarray) -> int:
    """Argmax of the unperturbed logits of one H x W x C image."""
    logits = forward_logits(model, x[None]).numpy()[0]
    return int(np.argmax(logits))


def input_gradients(
    model: ModelParams, images: np.ndarray, classes: Sequence[int]
) -> np.ndarray:
    """
    dS_{c_k}/dx_k for every row of a K x H x W x C batch, in one backward pass.

    Rows do not interact, so the gradient of the summed selected logits with
    respect to row k is the gradient of that row's own logit.
    """
    inputs = Tensor(images, requires_grad=True)
    logits = forward(model, inputs)
    result = backward(gather_logit(logits, classes), inputs=inputs)
    return result.wrt_input


def vanilla_gradient(
    model: ModelParams, x: np.ndarray, c: int, sample_id: int = -1
) -> SaliencyMap3D:
    grad = input_gradients(model, x[None], [c])[0]
    return SaliencyMap3D(scores=grad, estimator=BaseEstimator.VG, class_index=c, sample_id=sample_id)


def integrated_gradients(
    model: ModelParams,
    x: np.ndarray,
    c: int,
    cfg: EstimatorConfig,
    baseline: np.ndarray,
    sample_id: int = -1,
) -> SaliencyMap3D:
    """
    e = (x - x0) * (1/m) sum_{k=1..m} dS_c(x0 + (k/m)(x - x0))/dx

    Right Riemann sum; the baseline itself is never evaluated.
    """
    m = cfg.ig_steps
    if m < 1:
        raise ValueError(f"integrated gradients needs ig_steps >= 1, got {m}")
    if baseline.shape != x.shape:
        raise ValueError(f"baseline shape {baseline.shape} != input shape {x.shape}")

    x64 = x.astype(np.float64)
    x0 = baseline.astype(np.float64)
    delta = x64 - x0
    alphas = np.arange(1, m + 1, dtype=np.float64) / m
    total = np.zeros(x.shape, dtype=np.float64)
    chunk = max(1, settings.ig_batch_size)
    for start in range(0, m, chunk):
        steps = alphas[start : start + chunk]
        path = x0[None] + steps[:, None, None, None] * delta[None]
        grads = input_gradients(model, path, [c] * len(steps))
        total += grads.astype(np.float64).sum(axis=0)
    scores = (delta * total / m).astype(np.float32)
    return SaliencyMap3D(scores=scores, estimator=BaseEstimator.IG, class_index=c, sample_id=sample_id)


def smoothgrad_draws(
    model: ModelParams,
    x: np.ndarray,
    c: int,
    cfg: EstimatorConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """n x H x W x C vanilla gradients at x + xi_i, xi_i ~ N(0, sigma^2)."""
    noise = rng.normal(0.0, cfg.sg_sigma, size=(cfg.sg_samples,) + x.shape)
    draws = np.empty((cfg.sg_samples,) + x.shape, dtype=np.float32)
    for i in range(cfg.sg_samples):
        noisy = (x.astype(np.float64) + noise[i]).astype(np.float32)
        draws[i] = vanilla_gradient(model, noisy, c).scores
    return draws


def _average(draws: np.ndarray) -> np.ndarray:
    return draws.astype(np.float64).mean(axis=0).astype(np.float32)


def smoothgrad(
    model: ModelParams,
    x: np.ndarray,
    c: int,
    cfg: EstimatorConfig,
    rng: np.random.Generator,
    sample_id: int = -1,
) -> SaliencyMap3D:
    scores = _average(smoothgrad_draws(model, x, c, cfg, rng))
    return SaliencyMap3D(scores=scores, estimator=BaseEstimator.SG, class_index=c, sample_id=sample_id)


def squared_smoothgrad(
    model: ModelParams,
    x: np.ndarray,
    c: int,
    cfg: EstimatorConfig,
    rng: np.random.Generator,
    sample_id: int = -1,
) -> SaliencyMap3D:
    draws = smoothgrad_draws(model, x, c, cfg, rng).astype(np.float64)
    scores = _average(draws**2)
    return SaliencyMap3D(scores=scores, estimator=BaseEstimator.SQ_SG, class_index=c, sample_id=sample_id)


def reduce(
    map3d: SaliencyMap3D,
    mode: Reduction,
    x: Optional[np.ndarray] = None,
    estimator_id: Optional[str] = None,
) -> SaliencyMap2D:
    """
    Collapse the channel axis of a saliency map.

    abs-sum:               sum_c |e|
    input-product-sum:     sum_c e * x
    input-product-abs-sum: sum_c |e * x|
    plain-sum:             sum_c e

    Raises:
        ValueError: an input-product mode without x
        DoubleMultiplicationError: input-product mode on integrated gradients
    """
    mode = Reduction(mode)
    if mode.uses_input:
        if map3d.estimator == BaseEstimator.IG:
            raise DoubleMultiplicationError(
                "integrated gradients already include the input; use plain-sum or abs-sum"
            )
        if x is None:
            raise ValueError(f"{mode.value} reduction needs the input image")
        if x.shape != map3d.scores.shape:
            raise ValueError(f"input shape {x.shape} != map shape {map3d.scores.shape}")

    e = map3d.scores.astype(np.float64)
    if mode == Reduction.ABS_SUM:
        scores = np.abs(e).sum(axis=-1)
    elif mode == Reduction.INPUT_PRODUCT_SUM:
        scores = (e * x).sum(axis=-1)
    elif mode == Reduction.INPUT_PRODUCT_ABS_SUM:
        scores = np.abs(e * x).sum(axis=-1)
    else:
        scores = e.sum(axis=-1)

    return SaliencyMap2D(
        scores=scores.astype(np.float32),
        signedness=reduction_signedness(map3d.estimator, mode),
        reduction=mode,
        estimator=estimator_id or map3d.estimator.value,
        class_index=map3d.class_index,
        sample_id=map3d.sample_id,
    )


def random_saliency(height: int, width: int, rng: np.random.Generator) -> SaliencyMap2D:
    """Baseline map of i.i.d. U(-1, 1) scores."""
    scores = rng.uniform(-1.0, 1.0, size=(height, width)).astype(np.float32)
    return SaliencyMap2D(
        scores=scores, signedness=Signedness.SIGNED, reduction=None, estimator="random"
    )


def compute_saliency(
    model: ModelParams,
    x: np.ndarray,
    estimator_ids: Iterable[str],
    cfg: EstimatorConfig,
    baseline: np.ndarray,
    seed: int,
    sample_id: int,
    c: Optional[int] = None,
) -> Dict[str, SaliencyMap2D]:
    """
    All requested estimator/reduction combinations for one sample.

    Each base estimator runs at most once; SG and SQ-SG entries share one set of
    noise draws from the sample's SmoothGrad stream.
    """
    estimator_ids = list(estimator_ids)
    unknown = [name for name in estimator_ids if name not in ESTIMATORS]
    if unknown:
        raise KeyError(f"unknown estimator id(s): {unknown}")
    if c is None:
        c = predicted_class(model, x)

    bases = {ESTIMATORS[name].base for name in estimator_ids}
    raw: Dict[BaseEstimator, SaliencyMap3D] = {}
    if BaseEstimator.VG in bases:
        raw[BaseEstimator.VG] = vanilla_gradient(model, x, c, sample_id)
    if BaseEstimator.IG in bases:
        raw[BaseEstimator.IG] = integrated_gradients(model, x, c, cfg, baseline, sample_id)
    if bases & {BaseEstimator.SG, BaseEstimator.SQ_SG}:
        draws = smoothgrad_draws(model, x, c, cfg, sample_rng(seed, sample_id, SG_STREAM))
        raw[BaseEstimator.SG] = SaliencyMap3D(_average(draws), BaseEstimator.SG, c, sample_id)
        squared = _average(draws.astype(np.float64) ** 2)
        raw[BaseEstimator.SQ_SG] = SaliencyMap3D(squared, BaseEstimator.SQ_SG, c, sample_id)

    maps: Dict[str, SaliencyMap2D] = {}
    for name in estimator_ids:
        spec = ESTIMATORS[name]
        if spec.base == BaseEstimator.RANDOM:
            rng = sample_rng(seed, sample_id, RANDOM_STREAM)
            random_map = random_saliency(x.shape[0], x.shape[1], rng)
            random_map.class_index, random_map.sample_id = c, sample_id
            maps[name] = random_map
        else:
            maps[name] = reduce(raw[spec.base], spec.reduction, x, estimator_id=name)
    return maps
