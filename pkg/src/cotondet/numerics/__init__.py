"""Deterministic rank-4 tensor core (no autodiff)."""
from . import backend
from .core import (
    ACTIVATIONS,
    DEFAULT_BN_EPS,
    BNParams,
    ConvParams,
    ShapeError,
    as_feature_map,
    batchnorm,
    carafe_reassemble,
    conv2d,
    global_avg_pool,
    global_max_pool,
    hard_swish,
    max_pool2d,
    pixel_shuffle,
    relu,
    sigmoid,
    silu,
    softmax,
)

__all__ = [
    "ACTIVATIONS",
    "DEFAULT_BN_EPS",
    "BNParams",
    "ConvParams",
    "ShapeError",
    "as_feature_map",
    "backend",
    "batchnorm",
    "carafe_reassemble",
    "conv2d",
    "global_avg_pool",
    "global_max_pool",
    "hard_swish",
    "max_pool2d",
    "pixel_shuffle",
    "relu",
    "sigmoid",
    "silu",
    "softmax",
]
