"""
Autodiff - Minimal reverse-mode differentiation over numpy arrays

Tensors record the primitive that produced them; backward() replays the graph
from a scalar root and returns gradients for the input and named parameters.
"""

from .ops import (
    add,
    add_bias,
    conv2d,
    flatten,
    forward_primitive,
    gather_logit,
    logit,
    matmul,
    mul,
    pool,
    relu,
    scale,
    softmax_cross_entropy,
)
from .tensor import (
    GradientResult,
    OpKind,
    Tensor,
    backward,
    get_default_dtype,
    no_grad,
    set_default_dtype,
    using_dtype,
)

__all__ = [
    "GradientResult",
    "OpKind",
    "Tensor",
    "add",
    "add_bias",
    "backward",
    "conv2d",
    "flatten",
    "forward_primitive",
    "gather_logit",
    "get_default_dtype",
    "logit",
    "matmul",
    "mul",
    "no_grad",
    "pool",
    "relu",
    "scale",
    "set_default_dtype",
    "softmax_cross_entropy",
    "using_dtype",
]
