"""
Tensor - Dense arrays that record the operations applied to them

A Tensor wraps an immutable numpy array. When gradient recording is enabled and
any operand requires a gradient, the operation that produced the tensor is kept
as a Node so that backward() can replay the graph in reverse.

Storage precision is float32 by default; every operation accumulates in float64
and casts the result back to the storage dtype.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from exceptions import ShapeMismatchError

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def get_default_dtype() -> np.dtype:
    """Storage dtype used for new tensors in the current thread."""
    return getattr(_state, "dtype", np.dtype(np.float32))


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"Unsupported storage dtype: {dtype}")
    _state.dtype = dtype


@contextmanager
def using_dtype(dtype) -> Iterator[None]:
    """Temporarily switch the storage dtype (float64 for gradient checks)."""
    previous = get_default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = previous


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording, e.g. for evaluation-only forward passes."""
    previous = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class OpKind(str, Enum):
    MATMUL = "matmul"
    CONV2D = "conv2d"
    RELU = "relu"
    ADD_BIAS = "add-bias"
    FLATTEN = "flatten"
    POOL = "pool"
    SOFTMAX_XENT = "softmax-xent"
    SCALE = "scale"
    ADD = "add"
    MUL = "mul"
    GATHER_LOGIT = "gather-logit"


class Node:
    """
    One recorded operation in the graph.

    Subclasses set `kind` and implement forward() on float64 arrays and
    backward() returning one gradient (or None) per input.

    Attributes:
        inputs: Parent tensors, in argument order
        meta: Operation metadata (stride, padding, class indices, ...)
        saved: Whatever forward() needs to keep for backward()
    """

    kind: OpKind

    def __init__(self, inputs: Tuple["Tensor", ...], meta: Dict):
        self.inputs = inputs
        self.meta = meta
        self.saved: Dict[str, np.ndarray] = {}

    @classmethod
    def apply(cls, *inputs: "Tensor", **meta) -> "Tensor":
        node = cls(inputs, meta)
        node.check_shapes(*(t.shape for t in inputs))
        output = node.forward(*(t.data.astype(np.float64) for t in inputs))
        track = _grad_enabled() and any(t.requires_grad for t in inputs)
        return Tensor(output, requires_grad=track, _node=node if track else None)

    def check_shapes(self, *shapes: Tuple[int, ...]) -> None:
        """Raise ShapeMismatchError when operand shapes are incompatible."""

    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError

    def __repr__(self):
        return f"<Node(kind={self.kind.value}, inputs={len(self.inputs)})>"


class Tensor:
    """
    Dense n-dimensional real array with an optional gradient.

    Attributes:
        data: Read-only numpy array in the storage dtype
        requires_grad: Whether gradients should flow to this tensor
        name: Optional identifier (parameter name) used in GradientResult
        grad: float64 gradient filled in by backward(), None until then
        node: The Node that produced this tensor, None for leaves
    """

    __array_priority__ = 100

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: Optional[str] = None,
        _node: Optional[Node] = None,
    ):
        array = np.array(data, dtype=get_default_dtype(), copy=True)
        array.flags.writeable = False
        self.data = array
        self.requires_grad = requires_grad
        self.name = name
        self.grad: Optional[np.ndarray] = None
        self.node = _node

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return np.array(self.data)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float("nan")

    def backward(self) -> "GradientResult":
        return backward(self)

    def __add__(self, other: "Tensor") -> "Tensor":
        from autodiff import ops

        return ops.add(self, other)

    def __mul__(self, other) -> "Tensor":
        from autodiff import ops

        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from autodiff import ops

        return ops.matmul(self, other)

    def __repr__(self):
        label = f", name={self.name}" if self.name else ""
        op = f", op={self.node.kind.value}" if self.node else ""
        return f"<Tensor(shape={self.shape}{label}{op})>"


@dataclass
class GradientResult:
    """
    Gradients collected by one backward pass.

    Attributes:
        wrt_input: Gradient for the input tensor (same shape), zeros when the
            root does not depend on it
        wrt_params: Parameter name -> gradient (same shape as the parameter)
    """

    wrt_input: Optional[np.ndarray] = None
    wrt_params: Dict[str, np.ndarray] = field(default_factory=dict)


def topological_order(root: Tensor) -> List[Tensor]:
    """Parents-before-children order of every tensor reachable from root."""
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        tensor, expanded = stack.pop()
        if expanded:
            order.append(tensor)
            continue
        if id(tensor) in visited:
            continue
        visited.add(id(tensor))
        stack.append((tensor, True))
        if tensor.node is not None:
            for parent in reversed(tensor.node.inputs):
                if id(parent) not in visited:
                    stack.append((parent, False))
    return order


def backward(
    root: Tensor,
    inputs: Optional[Tensor] = None,
    params: Optional[Mapping[str, Tensor]] = None,
) -> GradientResult:
    """
    Reverse-mode pass from a scalar root.

    Args:
        root: Scalar tensor produced with gradient recording enabled
        inputs: Input tensor whose gradient should be reported
        params: Named parameter tensors whose gradients should be reported

    Returns:
        GradientResult in the storage dtype
    """
    if root.size != 1:
        raise ShapeMismatchError(
            f"backward: root must be scalar, got shape {root.shape}"
        )

    order = topological_order(root)
    for tensor in order:
        tensor.grad = None
    root.grad = np.ones(root.shape, dtype=np.float64)

    for tensor in reversed(order):
        node = tensor.node
        if node is None or tensor.grad is None:
            continue
        parent_grads = node.backward(tensor.grad)
        for parent, grad in zip(node.inputs, parent_grads):
            if grad is None or not parent.requires_grad:
                continue
            parent.grad = grad if parent.grad is None else parent.grad + grad
        # intermediate gradients are not needed once propagated
        if tensor is not root:
            tensor.grad = None

    dtype = get_default_dtype()

    def _collect(tensor: Tensor) -> np.ndarray:
        if tensor.grad is None:
            return np.zeros(tensor.shape, dtype=dtype)
        return tensor.grad.astype(dtype)

    result = GradientResult()
    if inputs is not None:
        result.wrt_input = _collect(inputs)
    for name, tensor in (params or {}).items():
        result.wrt_params[name] = _collect(tensor)
    return result
