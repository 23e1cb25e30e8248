"""Minimal float64 reverse-mode autodiff: tensors, layers, Adam, checks."""

from .gradcheck import grad_check, grad_check_fn
from .nn import DenseNet, GruCell, Linear, Module, frozen_graph
from .optim import Adam
from .tensor import (
    Parameter,
    Tensor,
    as_tensor,
    backward,
    clip,
    concat,
    elu,
    exp,
    is_grad_enabled,
    log,
    log_softmax,
    matmul,
    maximum,
    no_grad,
    sigmoid,
    softmax,
    softplus,
    sqrt,
    square,
    stack,
    stop_gradient,
    straight_through_onehot,
    tanh,
    where,
)

__all__ = [
    "Adam",
    "DenseNet",
    "GruCell",
    "Linear",
    "Module",
    "Parameter",
    "Tensor",
    "as_tensor",
    "backward",
    "clip",
    "concat",
    "elu",
    "exp",
    "frozen_graph",
    "grad_check",
    "grad_check_fn",
    "is_grad_enabled",
    "log",
    "log_softmax",
    "matmul",
    "maximum",
    "no_grad",
    "sigmoid",
    "softmax",
    "softplus",
    "sqrt",
    "square",
    "stack",
    "stop_gradient",
    "straight_through_onehot",
    "tanh",
    "where",
]
