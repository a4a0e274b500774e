"""Minimal float64 neural-network kernel: layers, losses, Adam, gradient checks."""

from .layers import (
    Dense,
    DilatedConv1d,
    GatedRecurrentCell,
    ReLU,
    dropout_mask,
    sigmoid,
    softplus,
)
from .losses import (
    PROB_FLOOR,
    expected_cross_entropy,
    softmax,
    softmax_cross_entropy,
    squared_log_error,
)
from .optim import Adam
from .gradcheck import grad_check
from .checkpoint import load_params, save_params

__all__ = [
    "Adam",
    "Dense",
    "DilatedConv1d",
    "GatedRecurrentCell",
    "PROB_FLOOR",
    "ReLU",
    "dropout_mask",
    "expected_cross_entropy",
    "grad_check",
    "load_params",
    "save_params",
    "sigmoid",
    "softmax",
    "softmax_cross_entropy",
    "softplus",
    "squared_log_error",
]
