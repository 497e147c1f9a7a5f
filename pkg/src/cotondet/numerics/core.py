"""Rank-4 tensor primitives over (N, C, H, W) float64 arrays.

A feature map is a plain C-contiguous ``numpy.ndarray`` of dtype float64
with four axes. The functions here validate shapes, then delegate the
heavy loops to the active kernel backend.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import backend

DEFAULT_BN_EPS = 1e-3


class ShapeError(ValueError):
    """Raised when an input's shape violates an operation's contract."""


def as_feature_map(x, name: str = "x") -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 4:
        raise ShapeError(f"{name}: expected rank-4 (N, C, H, W) array, got shape {arr.shape}")
    return arr


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


@dataclass(frozen=True, eq=False)
class ConvParams:
    """Weights and geometry of one 2-D convolution.

    ``weight`` has shape ``(out_channels, in_channels // groups, k_h, k_w)``.
    """

    in_channels: int
    out_channels: int
    kernel: tuple[int, int]
    weight: np.ndarray
    bias: Optional[np.ndarray] = None
    stride: int = 1
    padding: tuple[int, int] = (0, 0)
    groups: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kernel", _pair(self.kernel))
        object.__setattr__(self, "padding", _pair(self.padding))
        if self.in_channels <= 0 or self.out_channels <= 0:
            raise ShapeError("channel counts must be positive")
        if self.groups <= 0 or self.in_channels % self.groups or self.out_channels % self.groups:
            raise ShapeError(
                f"groups={self.groups} must divide in_channels={self.in_channels} "
                f"and out_channels={self.out_channels}"
            )
        if self.stride <= 0:
            raise ShapeError("stride must be positive")
        w = np.ascontiguousarray(self.weight, dtype=np.float64)
        expected = (self.out_channels, self.in_channels // self.groups, *self.kernel)
        if w.shape != expected:
            raise ShapeError(f"weight shape {w.shape} != expected {expected}")
        object.__setattr__(self, "weight", w)
        if self.bias is not None:
            b = np.ascontiguousarray(self.bias, dtype=np.float64)
            if b.shape != (self.out_channels,):
                raise ShapeError(f"bias shape {b.shape} != ({self.out_channels},)")
            object.__setattr__(self, "bias", b)

    @property
    def has_bias(self) -> bool:
        return self.bias is not None

    def num_params(self) -> int:
        return self.weight.size + (0 if self.bias is None else self.bias.size)

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel
        ph, pw = self.padding
        if h + 2 * ph < kh or w + 2 * pw < kw:
            raise ShapeError(f"kernel {self.kernel} does not fit input {h}x{w} with padding {self.padding}")
        return (h + 2 * ph - kh) // self.stride + 1, (w + 2 * pw - kw) // self.stride + 1

    @classmethod
    def random(cls, rng, c_in, c_out, k=1, stride=1, padding=None, groups=1, bias=False):
        """Seeded uniform [-0.1, 0.1] initialisation; padding defaults to 'same' (k // 2)."""
        kh, kw = _pair(k)
        if padding is None:
            padding = (kh // 2, kw // 2)
        w = rng.uniform(-0.1, 0.1, size=(c_out, c_in // groups, kh, kw))
        b = rng.uniform(-0.1, 0.1, size=c_out) if bias else None
        return cls(c_in, c_out, (kh, kw), w, b, stride, padding, groups)


@dataclass(frozen=True, eq=False)
class BNParams:
    """Inference-mode batch normalisation: stored statistics plus affine terms."""

    scale: np.ndarray
    shift: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = DEFAULT_BN_EPS

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"batchnorm eps must be positive, got {self.eps}")
        arrays = [np.asarray(a, dtype=np.float64).reshape(-1) for a in (self.scale, self.shift, self.mean, self.var)]
        if len({a.size for a in arrays}) != 1:
            raise ShapeError("batchnorm scale/shift/mean/var lengths differ")
        if np.any(arrays[3] < 0):
            raise ValueError("batchnorm variance must be non-negative")
        for field, a in zip(("scale", "shift", "mean", "var"), arrays):
            object.__setattr__(self, field, a)

    @property
    def channels(self) -> int:
        return self.scale.size

    def num_params(self) -> int:
        # running mean/var are buffers, not learnable parameters
        return 2 * self.channels

    @classmethod
    def identity(cls, channels, eps=DEFAULT_BN_EPS):
        return cls(np.ones(channels), np.zeros(channels), np.zeros(channels), np.ones(channels) - eps, eps)

    @classmethod
    def random(cls, rng, channels, eps=DEFAULT_BN_EPS):
        u = lambda: rng.uniform(-0.1, 0.1, size=channels)  # noqa: E731
        return cls(1.0 + u(), u(), u(), 1.0 + np.abs(u()), eps)


def conv2d(x, p: ConvParams) -> np.ndarray:
    x = as_feature_map(x)
    if x.shape[1] != p.in_channels:
        raise ShapeError(f"conv2d: input channel dimension C={x.shape[1]} != in_channels={p.in_channels}")
    p.output_hw(x.shape[2], x.shape[3])
    ph, pw = p.padding
    return backend.kernels().conv2d(x, p.weight, p.bias, p.stride, ph, pw, p.groups)


def max_pool2d(x, k: int, stride: int = 1, padding: int = 0) -> np.ndarray:
    x = as_feature_map(x)
    if padding > k // 2:
        raise ShapeError(f"max_pool2d: padding {padding} exceeds half the window {k}")
    return backend.kernels().max_pool2d(x, k, stride, padding)


def carafe_reassemble(x, kernels, k_up: int, scale: int) -> np.ndarray:
    """Weighted sum of each low-res ``k_up x k_up`` neighbourhood with per-output-pixel kernels.

    Kernels must sum to 1 at every output pixel (softmax output). The sum is
    taken relative to the source pixel, so a constant neighbourhood is
    reproduced bit-exactly.
    """
    x = as_feature_map(x)
    kernels = as_feature_map(kernels, "kernels")
    n, _, h, w = x.shape
    if kernels.shape != (n, k_up * k_up, h * scale, w * scale):
        raise ShapeError(f"kernels shape {kernels.shape} != {(n, k_up * k_up, h * scale, w * scale)}")
    return backend.kernels().carafe_reassemble(x, kernels, k_up, scale)


def global_avg_pool(x) -> np.ndarray:
    """Per-(batch, channel) mean over the spatial extent, shape (N, C)."""
    x = as_feature_map(x)
    if x.shape[2] * x.shape[3] == 0:
        raise ShapeError("global_avg_pool: empty spatial extent")
    return x.sum(axis=(2, 3)) / (x.shape[2] * x.shape[3])


def global_max_pool(x) -> np.ndarray:
    x = as_feature_map(x)
    if x.shape[2] * x.shape[3] == 0:
        raise ShapeError("global_max_pool: empty spatial extent")
    return x.max(axis=(2, 3))


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def silu(x):
    return x * sigmoid(x)


def hard_swish(x):
    return x * np.clip(x + 3.0, 0.0, 6.0) / 6.0


def softmax(x, axis: int = 1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def batchnorm(x, p: BNParams) -> np.ndarray:
    x = as_feature_map(x)
    if x.shape[1] != p.channels:
        raise ShapeError(f"batchnorm: input channel dimension C={x.shape[1]} != {p.channels}")
    inv = p.scale / np.sqrt(p.var + p.eps)
    return (x - p.mean[None, :, None, None]) * inv[None, :, None, None] + p.shift[None, :, None, None]


def pixel_shuffle(x, scale: int) -> np.ndarray:
    """(N, C*s*s, H, W) -> (N, C, H*s, W*s); channel c*s*s + i*s + j lands at (h*s + i, w*s + j)."""
    x = as_feature_map(x)
    n, cs, h, w = x.shape
    if cs % (scale * scale):
        raise ShapeError(f"pixel_shuffle: {cs} channels not divisible by {scale * scale}")
    c = cs // (scale * scale)
    y = x.reshape(n, c, scale, scale, h, w).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(y.reshape(n, c, h * scale, w * scale))


ACTIVATIONS = {
    "relu": relu,
    "silu": silu,
    "sigmoid": sigmoid,
    "hard_swish": hard_swish,
}
