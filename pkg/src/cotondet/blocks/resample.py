"""Learned resampling: CARAFE upsampling and SCDown downsampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import numerics as nx
from ..costs import ElementwiseGeom
from ..numerics import ShapeError
from .conv import ConvBlockParams, convblock_forward


@dataclass(frozen=True, eq=False)
class CarafeParams:
    """Kernel prediction (compressor + content encoder) for content-aware 2x upsampling.

    The compressor is a 1x1 ConvBlock C -> C_m; the encoder is a
    ``k_up - 2`` ConvBlock without activation emitting ``scale^2 * k_up^2``
    channels, one reassembly kernel per output sub-pixel.
    """

    compressor: ConvBlockParams
    encoder: ConvBlockParams
    k_up: int = 5
    scale: int = 2

    def __post_init__(self):
        if self.scale != 2:
            raise ShapeError(f"CARAFE upsampling factor is fixed to 2, got {self.scale}")
        if self.k_up < 3 or self.k_up % 2 == 0:
            raise ShapeError(f"k_up must be odd and >= 3, got {self.k_up}")
        if self.encoder.conv.kernel != (self.k_up - 2, self.k_up - 2):
            raise ShapeError(f"encoder kernel must be k_up - 2 = {self.k_up - 2}, got {self.encoder.conv.kernel}")
        if self.encoder.c_in != self.compressor.c_out:
            raise ShapeError("encoder input must equal the compressed channel count C_m")
        if self.encoder.c_out != self.scale ** 2 * self.k_up ** 2:
            raise ShapeError(f"encoder must emit scale^2 * k_up^2 = {self.scale ** 2 * self.k_up ** 2} channels")

    @property
    def channels(self) -> int:
        return self.compressor.c_in

    @property
    def c_mid(self) -> int:
        return self.compressor.c_out

    @classmethod
    def random(cls, rng, channels, c_mid=64, k_up=5, scale=2):
        if scale != 2:
            raise ShapeError(f"CARAFE upsampling factor is fixed to 2, got {scale}")
        if k_up < 3 or k_up % 2 == 0:
            raise ShapeError(f"k_up must be odd and >= 3, got {k_up}")
        return cls(
            ConvBlockParams.random(rng, channels, c_mid, 1),
            ConvBlockParams.random(rng, c_mid, scale * scale * k_up * k_up, k_up - 2, act=None),
            k_up,
            scale,
        )

    def num_params(self) -> int:
        return self.compressor.num_params() + self.encoder.num_params()

    def forward(self, x):
        return carafe_forward(x, self)

    def out_shape(self, shape):
        n, c, h, w = shape
        if c != self.channels:
            raise ShapeError(f"CARAFE expects {self.channels} input channels, got {c}")
        return (n, c, h * self.scale, w * self.scale)

    def costs(self, shape, tag="carafe"):
        n, c, h, w = shape
        mid = self.compressor.out_shape(shape)
        k2 = self.k_up * self.k_up
        out_px = n * h * w * self.scale * self.scale
        return (
            self.compressor.costs(shape, tag)
            + self.encoder.costs(mid, tag)
            + [
                ElementwiseGeom("softmax", out_px * k2, 3, tag),
                ElementwiseGeom("reassemble", out_px * c * k2, 2, tag),
            ]
        )


def carafe_kernels(x, p: CarafeParams) -> np.ndarray:
    """Softmax-normalised reassembly kernels, shape (N, k_up^2, 2H, 2W)."""
    x = nx.as_feature_map(x)
    if x.shape[1] != p.channels:
        raise ShapeError(f"CARAFE expects {p.channels} input channels, got {x.shape[1]}")
    enc = convblock_forward(convblock_forward(x, p.compressor), p.encoder)
    return nx.softmax(nx.pixel_shuffle(enc, p.scale), axis=1)


def carafe_forward(x, p: CarafeParams) -> np.ndarray:
    x = nx.as_feature_map(x)
    return nx.carafe_reassemble(x, carafe_kernels(x, p), p.k_up, p.scale)


@dataclass(frozen=True, eq=False)
class SCDownParams:
    """Point-wise c1 -> c2 ConvBlock followed by a depth-wise strided conv + BN (no activation)."""

    pw: ConvBlockParams
    dw: ConvBlockParams

    def __post_init__(self):
        if self.pw.conv.kernel != (1, 1):
            raise ShapeError("SCDown point-wise stage must be 1x1")
        if self.dw.c_in != self.pw.c_out or self.dw.c_out != self.pw.c_out:
            raise ShapeError("SCDown depth-wise stage must keep c2 channels")
        if self.dw.conv.groups != self.dw.c_out:
            raise ShapeError(f"SCDown depth-wise stage needs groups == c2 ({self.dw.c_out}), got {self.dw.conv.groups}")
        if self.dw.act is not None:
            raise ShapeError("SCDown depth-wise stage has no activation")

    @property
    def c1(self):
        return self.pw.c_in

    @property
    def c2(self):
        return self.pw.c_out

    @property
    def stride(self):
        return self.dw.conv.stride

    @classmethod
    def random(cls, rng, c1, c2, k=3, s=2):
        return cls(ConvBlockParams.random(rng, c1, c2, 1), ConvBlockParams.random(rng, c2, c2, k, s, g=c2, act=None))

    def num_params(self):
        return self.pw.num_params() + self.dw.num_params()

    def forward(self, x):
        return scdown_forward(x, self)

    def out_shape(self, shape):
        n, c, h, w = shape
        if c != self.c1:
            raise ShapeError(f"SCDown expects {self.c1} input channels, got {c}")
        if h % self.stride or w % self.stride:
            raise ShapeError(f"SCDown: spatial extent {h}x{w} not divisible by stride {self.stride}")
        return self.dw.out_shape(self.pw.out_shape(shape))

    def costs(self, shape, tag="scdown"):
        return self.pw.costs(shape, tag) + self.dw.costs(self.pw.out_shape(shape), tag)


def scdown_forward(x, p: SCDownParams) -> np.ndarray:
    x = nx.as_feature_map(x)
    p.out_shape(x.shape)
    return convblock_forward(convblock_forward(x, p.pw), p.dw)
