"""
Primitive operations for the autodiff engine

Each primitive is a Node subclass with a float64 forward and an exact backward.
Images use NHWC layout: batch x height x width x channels. Convolution kernels
are k x k x C_in x C_out.
"""

from typing import Dict, Optional, Sequence, Tuple, Type, Union

import numpy as np
from exceptions import ShapeMismatchError

from .tensor import Node, OpKind, Tensor


def _mismatch(op: OpKind, detail: str) -> ShapeMismatchError:
    return ShapeMismatchError(f"{op.value}: {detail}")


# =============================================================================
# Linear algebra
# =============================================================================


class MatMul(Node):
    kind = OpKind.MATMUL

    def check_shapes(self, a, b):
        if len(a) != 2 or len(b) != 2:
            raise _mismatch(self.kind, f"expected 2-D operands, got {a} and {b}")
        if a[1] != b[0]:
            raise _mismatch(self.kind, f"inner dimensions differ: {a[1]} vs {b[0]}")

    def forward(self, a, b):
        self.saved = {"a": a, "b": b}
        return a @ b

    def backward(self, grad):
        a, b = self.saved["a"], self.saved["b"]
        return grad @ b.T, a.T @ grad


class Conv2D(Node):
    kind = OpKind.CONV2D

    def check_shapes(self, x, w):
        stride, padding = self.meta.get("stride", 1), self.meta.get("padding", 0)
        if len(x) != 4:
            raise _mismatch(self.kind, f"input must be K x H x W x C_in, got {x}")
        if len(w) != 4 or w[0] != w[1]:
            raise _mismatch(self.kind, f"kernel must be k x k x C_in x C_out, got {w}")
        if x[3] != w[2]:
            raise _mismatch(self.kind, f"input channels {x[3]} != kernel C_in {w[2]}")
        if stride < 1 or padding < 0:
            raise _mismatch(self.kind, f"invalid stride {stride} / padding {padding}")
        if x[1] + 2 * padding < w[0] or x[2] + 2 * padding < w[0]:
            raise _mismatch(
                self.kind,
                f"kernel {w[0]} larger than padded input {x[1]}x{x[2]} (+{padding})",
            )

    def _geometry(self, x_shape, k):
        stride, padding = self.meta.get("stride", 1), self.meta.get("padding", 0)
        out_h = (x_shape[1] + 2 * padding - k) // stride + 1
        out_w = (x_shape[2] + 2 * padding - k) // stride + 1
        return stride, padding, out_h, out_w

    def forward(self, x, w):
        k = w.shape[0]
        stride, padding, out_h, out_w = self._geometry(x.shape, k)
        padded = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
        out = np.zeros((x.shape[0], out_h, out_w, w.shape[3]))
        for i in range(k):
            for j in range(k):
                window = padded[
                    :,
                    i : i + stride * (out_h - 1) + 1 : stride,
                    j : j + stride * (out_w - 1) + 1 : stride,
                    :,
                ]
                out += window @ w[i, j]
        self.saved = {"padded": padded, "w": w}
        return out

    def backward(self, grad):
        padded, w = self.saved["padded"], self.saved["w"]
        k = w.shape[0]
        x_shape = (
            padded.shape[0],
            padded.shape[1] - 2 * self.meta.get("padding", 0),
            padded.shape[2] - 2 * self.meta.get("padding", 0),
            padded.shape[3],
        )
        stride, padding, out_h, out_w = self._geometry(x_shape, k)
        grad_padded = np.zeros_like(padded)
        grad_w = np.zeros_like(w)
        for i in range(k):
            rows = slice(i, i + stride * (out_h - 1) + 1, stride)
            for j in range(k):
                cols = slice(j, j + stride * (out_w - 1) + 1, stride)
                window = padded[:, rows, cols, :]
                grad_w[i, j] = np.tensordot(window, grad, axes=([0, 1, 2], [0, 1, 2]))
                grad_padded[:, rows, cols, :] += grad @ w[i, j].T
        grad_x = grad_padded[
            :, padding : padding + x_shape[1], padding : padding + x_shape[2], :
        ]
        return grad_x, grad_w


# =============================================================================
# Elementwise and shape operations
# =============================================================================


class ReLU(Node):
    kind = OpKind.RELU

    def forward(self, x):
        self.saved = {"active": x > 0}
        return np.where(x > 0, x, 0.0)

    def backward(self, grad):
        return (grad * self.saved["active"],)


class AddBias(Node):
    kind = OpKind.ADD_BIAS

    def check_shapes(self, x, b):
        if len(b) != 1 or not x or x[-1] != b[0]:
            raise _mismatch(self.kind, f"bias {b} does not match last axis of {x}")

    def forward(self, x, b):
        return x + b

    def backward(self, grad):
        return grad, grad.reshape(-1, grad.shape[-1]).sum(axis=0)


class Flatten(Node):
    kind = OpKind.FLATTEN

    def check_shapes(self, x):
        if len(x) < 2:
            raise _mismatch(self.kind, f"need a batch axis, got {x}")

    def forward(self, x):
        self.saved = {"shape": np.array(x.shape)}
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return (grad.reshape(tuple(self.saved["shape"])),)


class Pool(Node):
    """Non-overlapping size x size pooling; trailing rows/columns are dropped."""

    kind = OpKind.POOL

    def check_shapes(self, x):
        size = self.meta.get("size", 2)
        if len(x) != 4:
            raise _mismatch(self.kind, f"input must be K x H x W x C, got {x}")
        if x[1] < size or x[2] < size:
            raise _mismatch(self.kind, f"input {x[1]}x{x[2]} smaller than window {size}")
        if self.meta.get("mode", "avg") not in ("avg", "max"):
            raise _mismatch(self.kind, f"unknown mode {self.meta.get('mode')}")

    def _windows(self, x):
        size = self.meta.get("size", 2)
        k, h, w, c = x.shape
        out_h, out_w = h // size, w // size
        cropped = x[:, : out_h * size, : out_w * size, :]
        blocks = cropped.reshape(k, out_h, size, out_w, size, c)
        return blocks.transpose(0, 1, 3, 5, 2, 4).reshape(k, out_h, out_w, c, size * size)

    def forward(self, x):
        windows = self._windows(x)
        self.saved = {"shape": np.array(x.shape)}
        if self.meta.get("mode", "avg") == "max":
            winner = windows.argmax(axis=-1)
            self.saved["winner"] = winner
            return np.take_along_axis(windows, winner[..., None], axis=-1)[..., 0]
        return windows.mean(axis=-1)

    def backward(self, grad):
        size = self.meta.get("size", 2)
        k, h, w, c = (int(v) for v in self.saved["shape"])
        out_h, out_w = h // size, w // size
        if self.meta.get("mode", "avg") == "max":
            onehot = np.arange(size * size) == self.saved["winner"][..., None]
            spread = onehot * grad[..., None]
        else:
            spread = np.repeat(grad[..., None], size * size, axis=-1) / (size * size)
        blocks = spread.reshape(k, out_h, out_w, c, size, size).transpose(0, 1, 4, 2, 5, 3)
        grad_x = np.zeros((k, h, w, c))
        grad_x[:, : out_h * size, : out_w * size, :] = blocks.reshape(
            k, out_h * size, out_w * size, c
        )
        return (grad_x,)


class Scale(Node):
    kind = OpKind.SCALE

    def forward(self, x):
        return x * self.meta["factor"]

    def backward(self, grad):
        return (grad * self.meta["factor"],)


class Add(Node):
    kind = OpKind.ADD

    def check_shapes(self, a, b):
        if a != b:
            raise _mismatch(self.kind, f"operand shapes differ: {a} vs {b}")

    def forward(self, a, b):
        return a + b

    def backward(self, grad):
        return grad, grad


class Mul(Node):
    kind = OpKind.MUL

    def check_shapes(self, a, b):
        if a != b:
            raise _mismatch(self.kind, f"operand shapes differ: {a} vs {b}")

    def forward(self, a, b):
        self.saved = {"a": a, "b": b}
        return a * b

    def backward(self, grad):
        return grad * self.saved["b"], grad * self.saved["a"]


# =============================================================================
# Heads
# =============================================================================


def _as_rows(shape: Tuple[int, ...], op: OpKind) -> Tuple[int, int]:
    if len(shape) == 1:
        return 1, shape[0]
    if len(shape) == 2:
        return shape
    raise _mismatch(op, f"expected logits of shape (N,) or (K, N), got {shape}")


def _check_classes(classes: np.ndarray, rows: int, num_classes: int, op: OpKind):
    if classes.shape != (rows,):
        raise _mismatch(op, f"need {rows} class indices, got shape {classes.shape}")
    bad = (classes < 0) | (classes >= num_classes)
    if bad.any():
        raise IndexError(
            f"{op.value}: class index {int(classes[bad][0])} out of range "
            f"for {num_classes} classes"
        )


class SoftmaxCrossEntropy(Node):
    """Mean of -log softmax(logits)[label] over the rows, max-subtracted."""

    kind = OpKind.SOFTMAX_XENT

    def check_shapes(self, logits):
        rows, num_classes = _as_rows(logits, self.kind)
        _check_classes(self.meta["labels"], rows, num_classes, self.kind)

    def forward(self, logits):
        rows, num_classes = _as_rows(logits.shape, self.kind)
        z = logits.reshape(rows, num_classes)
        shifted = z - z.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1))
        labels = self.meta["labels"]
        losses = log_norm - shifted[np.arange(rows), labels]
        self.saved = {"probs": np.exp(shifted - log_norm[:, None]), "shape": np.array(logits.shape)}
        return np.array(losses.mean())

    def backward(self, grad):
        probs = self.saved["probs"].copy()
        rows = probs.shape[0]
        probs[np.arange(rows), self.meta["labels"]] -= 1.0
        return ((probs * (grad / rows)).reshape(tuple(self.saved["shape"])),)


class GatherLogit(Node):
    """Sum over rows of logits[k, c_k]; a single row gives the scalar S_c."""

    kind = OpKind.GATHER_LOGIT

    def check_shapes(self, logits):
        rows, num_classes = _as_rows(logits, self.kind)
        _check_classes(self.meta["classes"], rows, num_classes, self.kind)

    def forward(self, logits):
        rows, num_classes = _as_rows(logits.shape, self.kind)
        z = logits.reshape(rows, num_classes)
        self.saved = {"shape": np.array(logits.shape)}
        return np.array(z[np.arange(rows), self.meta["classes"]].sum())

    def backward(self, grad):
        shape = tuple(self.saved["shape"])
        rows, num_classes = _as_rows(shape, self.kind)
        out = np.zeros((rows, num_classes))
        out[np.arange(rows), self.meta["classes"]] = grad
        return (out.reshape(shape),)


# =============================================================================
# Functional API
# =============================================================================

PRIMITIVES: Dict[OpKind, Type[Node]] = {
    OpKind.MATMUL: MatMul,
    OpKind.CONV2D: Conv2D,
    OpKind.RELU: ReLU,
    OpKind.ADD_BIAS: AddBias,
    OpKind.FLATTEN: Flatten,
    OpKind.POOL: Pool,
    OpKind.SOFTMAX_XENT: SoftmaxCrossEntropy,
    OpKind.SCALE: Scale,
    OpKind.ADD: Add,
    OpKind.MUL: Mul,
    OpKind.GATHER_LOGIT: GatherLogit,
}


def forward_primitive(
    kind: Union[OpKind, str], inputs: Sequence[Tensor], meta: Optional[Dict] = None
) -> Tensor:
    """Apply the primitive `kind` to `inputs` with operation metadata `meta`."""
    return PRIMITIVES[OpKind(kind)].apply(*inputs, **(meta or {}))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(a, b)


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    return Conv2D.apply(x, kernel, stride=stride, padding=padding)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    return AddBias.apply(x, bias)


def flatten(x: Tensor) -> Tensor:
    return Flatten.apply(x)


def pool(x: Tensor, size: int = 2, mode: str = "avg") -> Tensor:
    return Pool.apply(x, size=size, mode=mode)


def scale(x: Tensor, factor: float) -> Tensor:
    return Scale.apply(x, factor=float(factor))


def add(a: Tensor, b: Tensor) -> Tensor:
    return Add.apply(a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return Mul.apply(a, b)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy; `labels` is an int for a single logit vector."""
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    return SoftmaxCrossEntropy.apply(logits, labels=labels)


def gather_logit(logits: Tensor, classes) -> Tensor:
    """Scalar sum of the selected logit of every row."""
    classes = np.atleast_1d(np.asarray(classes, dtype=np.int64))
    return GatherLogit.apply(logits, classes=classes)


def logit(model_output: Tensor, class_index: int) -> Tensor:
    """Scalar pre-softmax activation S_c of a single-sample output."""
    return gather_logit(model_output, [int(class_index)])
