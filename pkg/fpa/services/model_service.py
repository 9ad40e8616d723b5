"""
Model Service - Build, run and train the desk-scale classifiers

Covers He initialization, the logit forward pass, SGD with momentum and coupled
weight decay, the seeded training loop and accuracy evaluation.
"""

import logging
import math
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from autodiff import (
    Tensor,
    add_bias,
    backward,
    conv2d,
    flatten,
    matmul,
    no_grad,
    pool,
    relu,
    softmax_cross_entropy,
)
from config.settings import settings
from exceptions import DataError, DivergenceError, IncompatibleLayersError
from models import (
    Dataset,
    EpochMetrics,
    LayerKind,
    LayerSpec,
    ModelParams,
    TrainConfig,
    TrainResult,
)
from tqdm import tqdm

from services.augment_service import augment_batch
from services.data_service import batch_iter

logger = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1e4

ImageShape = Tuple[int, int, int]


# =============================================================================
# Architecture
# =============================================================================


def infer_shapes(layers: Sequence[LayerSpec], input_shape: ImageShape) -> List[Tuple[int, ...]]:
    """
    Per-sample output shape of every layer.

    Raises:
        IncompatibleLayersError: a layer does not accept its input, or the chain
            does not end in a dense layer
    """
    if not layers:
        raise IncompatibleLayersError("empty layer list")
    shape: Tuple[int, ...] = tuple(input_shape)
    shapes = []
    for index, layer in enumerate(layers):
        where = f"layer {index} ({layer.kind.value})"
        if layer.kind == LayerKind.CONV:
            if len(shape) != 3:
                raise IncompatibleLayersError(f"{where}: needs H x W x C input, got {shape}")
            h, w, _ = shape
            k, s, p = layer.kernel_size, layer.stride, layer.padding
            out_h, out_w = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
            if h + 2 * p < k or w + 2 * p < k or out_h < 1 or out_w < 1:
                raise IncompatibleLayersError(f"{where}: kernel {k} does not fit {h}x{w}")
            shape = (out_h, out_w, layer.channels)
        elif layer.kind == LayerKind.POOL:
            if len(shape) != 3 or shape[0] < layer.pool_size or shape[1] < layer.pool_size:
                raise IncompatibleLayersError(f"{where}: window {layer.pool_size} on {shape}")
            shape = (shape[0] // layer.pool_size, shape[1] // layer.pool_size, shape[2])
        elif layer.kind == LayerKind.FLATTEN:
            shape = (int(np.prod(shape)),)
        elif layer.kind == LayerKind.DENSE:
            if len(shape) != 1:
                raise IncompatibleLayersError(f"{where}: needs a flat input, got {shape}")
            shape = (layer.units,)
        shapes.append(shape)
    if layers[-1].kind != LayerKind.DENSE:
        raise IncompatibleLayersError("the last layer must be dense (the logit layer)")
    return shapes


def build_model(
    layers: Sequence[LayerSpec], input_shape: ImageShape, init_seed: int
) -> ModelParams:
    """
    He-initialized weights (std sqrt(2 / fan_in)) and zero biases.

    Conv kernels are k x k x C_in x C_out, dense weights fan_in x units.
    """
    shapes = infer_shapes(layers, input_shape)
    rng = np.random.default_rng(init_seed)
    params: Dict[str, np.ndarray] = {}
    previous: Tuple[int, ...] = tuple(input_shape)
    for index, (layer, out_shape) in enumerate(zip(layers, shapes)):
        if layer.kind == LayerKind.CONV:
            weight_shape = (layer.kernel_size, layer.kernel_size, previous[2], layer.channels)
            fan_in = layer.kernel_size * layer.kernel_size * previous[2]
        elif layer.kind == LayerKind.DENSE:
            weight_shape = (previous[0], layer.units)
            fan_in = previous[0]
        else:
            previous = out_shape
            continue
        weight = rng.standard_normal(weight_shape) * math.sqrt(2.0 / fan_in)
        params[f"{index}.weight"] = weight.astype(np.float32)
        params[f"{index}.bias"] = np.zeros(weight_shape[-1], dtype=np.float32)
        previous = out_shape
    return ModelParams(
        layers=list(layers),
        input_shape=tuple(input_shape),
        num_classes=int(shapes[-1][0]),
        params=params,
    )


def param_tensors(model: ModelParams, requires_grad: bool = False) -> Dict[str, Tensor]:
    return {
        name: Tensor(value, requires_grad=requires_grad, name=name)
        for name, value in model.params.items()
    }


def _apply_layer(index: int, layer: LayerSpec, h: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    if layer.kind == LayerKind.CONV:
        h = conv2d(h, params[f"{index}.weight"], layer.stride, layer.padding)
        return add_bias(h, params[f"{index}.bias"])
    if layer.kind == LayerKind.RELU:
        return relu(h)
    if layer.kind == LayerKind.POOL:
        return pool(h, layer.pool_size, layer.pool_mode)
    if layer.kind == LayerKind.FLATTEN:
        return flatten(h)
    return add_bias(matmul(h, params[f"{index}.weight"]), params[f"{index}.bias"])


def forward(
    model: ModelParams, inputs: Tensor, params: Optional[Mapping[str, Tensor]] = None
) -> Tensor:
    """Run the layer chain on a K x H x W x C tensor, recording the graph."""
    if params is None:
        params = param_tensors(model)
    h = inputs
    for index, layer in enumerate(model.layers):
        h = _apply_layer(index, layer, h, params)
    return h


def forward_logits(model: ModelParams, batch) -> Tensor:
    """K x num_classes pre-softmax activations, no graph recorded."""
    with no_grad():
        return forward(model, batch if isinstance(batch, Tensor) else Tensor(batch))


def logits_array(
    model: ModelParams, images: np.ndarray, batch_size: Optional[int] = None
) -> np.ndarray:
    """forward_logits over arbitrarily many images, in chunks."""
    batch_size = batch_size or settings.eval_batch_size
    chunks = [
        forward_logits(model, images[start : start + batch_size]).numpy()
        for start in range(0, images.shape[0], batch_size)
    ]
    if not chunks:
        return np.zeros((0, model.num_classes), dtype=np.float32)
    return np.concatenate(chunks, axis=0)


def predict(model: ModelParams, images: np.ndarray) -> np.ndarray:
    """Argmax class per image; ties go to the smallest class index."""
    return np.argmax(logits_array(model, images), axis=1)


def layer_outputs(model: ModelParams, batch: np.ndarray) -> List[np.ndarray]:
    """Activation after every layer, for diagnostics."""
    outputs = []
    params = param_tensors(model)
    with no_grad():
        h = Tensor(batch)
        for index, layer in enumerate(model.layers):
            h = _apply_layer(index, layer, h, params)
            outputs.append(h.numpy())
    return outputs


def evaluate_accuracy(model: ModelParams, dataset: Dataset) -> float:
    """Fraction of samples whose argmax logit equals the label."""
    if len(dataset) == 0:
        raise DataError("cannot evaluate accuracy on an empty dataset")
    predictions = predict(model, dataset.images)
    return float(np.mean(predictions == dataset.labels))


# =============================================================================
# Optimization
# =============================================================================


def sgd_momentum_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    velocity: Mapping[str, np.ndarray],
    lr: float,
    momentum: float,
    weight_decay: float,
) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
    """
    v <- momentum * v + grad + weight_decay * param
    param <- param - lr * v

    Returns new params (float32) and velocity (float64); inputs are untouched.
    """
    new_params, new_velocity = {}, {}
    for name, param in params.items():
        grad = np.asarray(grads[name], dtype=np.float64)
        if grad.shape != param.shape:
            raise ValueError(f"gradient for {name} has shape {grad.shape}, expected {param.shape}")
        value = np.asarray(param, dtype=np.float64)
        v = momentum * np.asarray(velocity[name], dtype=np.float64) + grad + weight_decay * value
        new_velocity[name] = v
        new_params[name] = (value - lr * v).astype(np.float32)
    return new_params, new_velocity


def loss_and_gradients(
    model: ModelParams, images: np.ndarray, labels: np.ndarray
) -> Tuple[float, Dict[str, np.ndarray], np.ndarray]:
    """Mean cross-entropy, its parameter gradients and the batch logits."""
    params = param_tensors(model, requires_grad=True)
    logits = forward(model, Tensor(images), params)
    loss = softmax_cross_entropy(logits, labels)
    result = backward(loss, params=params)
    return loss.item(), result.wrt_params, logits.numpy()


def train(
    layers: Sequence[LayerSpec],
    config: TrainConfig,
    dataset: Dataset,
    val_dataset: Optional[Dataset] = None,
) -> TrainResult:
    """
    Mini-batch SGD over a normalized training split.

    Batch order is drawn from (seed, epoch, 0) and augmentation from
    (seed, epoch, 1), so a run is fully determined by config.seed.

    Raises:
        DataError: empty dataset
        DivergenceError: loss non-finite or above DIVERGENCE_THRESHOLD
    """
    if len(dataset) == 0:
        raise DataError("cannot train on an empty dataset")

    model = build_model(layers, dataset.image_shape, config.seed)
    velocity = {name: np.zeros(value.shape) for name, value in model.params.items()}
    history: List[EpochMetrics] = []

    logger.info(
        f"Training {len(model.params)} tensors on {len(dataset)} samples "
        f"(arm={config.augmentation.value}, epochs={config.epochs}, seed={config.seed})"
    )

    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        augment_rng = np.random.default_rng([config.seed, epoch, 1])
        total_loss, correct, seen = 0.0, 0, 0

        batches = batch_iter(dataset, config.batch_size, [config.seed, epoch, 0])
        for step, batch in enumerate(
            tqdm(batches, desc=f"epoch {epoch}", leave=False, disable=not settings.show_progress)
        ):
            images = augment_batch(batch.images, config, augment_rng)
            loss, grads, logits = loss_and_gradients(model, images, batch.labels)
            if not math.isfinite(loss) or loss > DIVERGENCE_THRESHOLD:
                raise DivergenceError(
                    f"loss {loss} at epoch {epoch}, batch {step} (lr={lr}); "
                    f"threshold {DIVERGENCE_THRESHOLD}"
                )
            new_params, velocity = sgd_momentum_step(
                model.params, grads, velocity, lr, config.momentum, config.weight_decay
            )
            model = model.with_params(new_params)
            total_loss += loss * len(batch)
            correct += int(np.sum(np.argmax(logits, axis=1) == batch.labels))
            seen += len(batch)

        val_accuracy = (
            evaluate_accuracy(model, val_dataset)
            if val_dataset is not None and len(val_dataset)
            else float("nan")
        )
        metrics = EpochMetrics(
            epoch=epoch,
            lr=lr,
            train_loss=total_loss / seen,
            train_accuracy=correct / seen,
            val_accuracy=val_accuracy,
        )
        history.append(metrics)
        logger.info(
            f"  epoch {epoch:3d}  lr={lr:.4g}  loss={metrics.train_loss:.4f}  "
            f"train_acc={metrics.train_accuracy:.3f}  val_acc={metrics.val_accuracy:.3f}"
        )

    return TrainResult(model=model, history=history)
