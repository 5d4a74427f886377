"""Scalar reverse-mode autodiff with second-order support."""
from ._backend import BACKEND, CTapeCore, PyTapeCore
from .tape import (
    GraphTape,
    ScalarNode,
    TapeBuildError,
    apply,
    cos,
    exp,
    grad,
    grad_nodes,
    grad_values,
    input_gradient,
    log,
    power,
    record,
    relu,
    sin,
    sqrt,
    tanh,
)

__all__ = [
    "BACKEND", "CTapeCore", "PyTapeCore", "GraphTape", "ScalarNode", "TapeBuildError",
    "apply", "cos", "exp", "grad", "grad_nodes", "grad_values", "input_gradient", "log",
    "power", "record", "relu", "sin", "sqrt", "tanh",
]
