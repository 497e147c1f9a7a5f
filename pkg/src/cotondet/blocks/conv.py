"""Convolutional composites: ConvBlock, SEConvBlock, C3k2, SPPF and the raw detect head.

C3k2, C3k, Bottleneck and SPPF follow the public YOLO11 reference layout
(hidden ratio 0.5, 'same' padding, SiLU activations). Structural knobs such
as bottleneck count are constructor arguments, not constants.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import numerics as nx
from ..costs import ConvGeom, ElementwiseGeom, NormGeom
from ..numerics import BNParams, ConvParams, ShapeError
from .attention import SEParams, se_forward


@dataclass(frozen=True, eq=False)
class ConvBlockParams:
    """conv (no bias) -> batchnorm -> activation ("silu" or None)."""

    conv: ConvParams
    bn: BNParams
    act: Optional[str] = "silu"

    def __post_init__(self):
        if self.bn.channels != self.conv.out_channels:
            raise ShapeError(
                f"ConvBlock: batchnorm has {self.bn.channels} channels, conv emits {self.conv.out_channels}"
            )
        if self.act is not None and self.act not in nx.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.act!r}")

    @property
    def c_in(self):
        return self.conv.in_channels

    @property
    def c_out(self):
        return self.conv.out_channels

    def num_params(self) -> int:
        return self.conv.num_params() + self.bn.num_params()

    @classmethod
    def random(cls, rng, c1, c2, k=1, s=1, g=1, act="silu"):
        return cls(ConvParams.random(rng, c1, c2, k=k, stride=s, groups=g), BNParams.random(rng, c2), act)

    def forward(self, x):
        return convblock_forward(x, self)

    def out_shape(self, shape):
        n, c, h, w = shape
        if c != self.c_in:
            raise ShapeError(f"ConvBlock expects {self.c_in} input channels, got {c}")
        ho, wo = self.conv.output_hw(h, w)
        return (n, self.c_out, ho, wo)

    def costs(self, shape, tag=""):
        n, _, ho, wo = self.out_shape(shape)
        kh, kw = self.conv.kernel
        out = [
            ConvGeom(self.c_in, self.c_out, kh, kw, ho, wo, self.conv.groups, self.conv.has_bias, tag=tag),
            NormGeom(self.c_out, n * self.c_out * ho * wo, tag),
        ]
        if self.act is not None:
            out.append(ElementwiseGeom(self.act, n * self.c_out * ho * wo, 4 if self.act != "relu" else 1, tag))
        return out


def convblock_forward(x, p: ConvBlockParams) -> np.ndarray:
    y = nx.batchnorm(nx.conv2d(x, p.conv), p.bn)
    return nx.ACTIVATIONS[p.act](y) if p.act else y


@dataclass(frozen=True, eq=False)
class SEConvBlockParams:
    """ConvBlock followed by squeeze-and-excitation on its output."""

    block: ConvBlockParams
    se: SEParams

    def __post_init__(self):
        if self.se.channels != self.block.c_out:
            raise ShapeError(
                f"SEConvBlock stage 'se': expects {self.se.channels} channels, conv stage emits {self.block.c_out}"
            )

    @classmethod
    def from_parts(cls, conv: ConvParams, bn: BNParams, se: SEParams, act="silu"):
        if bn.channels != conv.out_channels:
            raise ShapeError(
                f"SEConvBlock stage 'bn': has {bn.channels} channels, stage 'conv' emits {conv.out_channels}"
            )
        return cls(ConvBlockParams(conv, bn, act), se)

    @classmethod
    def random(cls, rng, c1, c2, k=1, s=1, reduction=16):
        return cls(ConvBlockParams.random(rng, c1, c2, k, s), SEParams.random(rng, c2, reduction))

    def num_params(self) -> int:
        return self.block.num_params() + self.se.num_params()

    def forward(self, x):
        return seconvblock_forward(x, self)

    def out_shape(self, shape):
        return self.block.out_shape(shape)

    def costs(self, shape, tag=""):
        out_shape = self.block.out_shape(shape)
        return self.block.costs(shape, tag) + self.se.costs(out_shape, tag="se")


def seconvblock_forward(x, p: SEConvBlockParams) -> np.ndarray:
    x = nx.as_feature_map(x)
    if x.shape[1] != p.block.c_in:
        raise ShapeError(f"SEConvBlock stage 'conv': input has C={x.shape[1]}, expects {p.block.c_in}")
    return se_forward(convblock_forward(x, p.block), p.se)


# --------------------------------------------------------------------------
# CSP composites


@dataclass(frozen=True, eq=False)
class BottleneckParams:
    cv1: ConvBlockParams
    cv2: ConvBlockParams
    add: bool

    @classmethod
    def random(cls, rng, c1, c2, shortcut=True, k=(3, 3), e=0.5):
        hidden = int(c2 * e)
        return cls(
            ConvBlockParams.random(rng, c1, hidden, k[0]),
            ConvBlockParams.random(rng, hidden, c2, k[1]),
            shortcut and c1 == c2,
        )

    def num_params(self):
        return self.cv1.num_params() + self.cv2.num_params()

    def forward(self, x):
        y = convblock_forward(convblock_forward(x, self.cv1), self.cv2)
        return x + y if self.add else y

    def out_shape(self, shape):
        return self.cv2.out_shape(self.cv1.out_shape(shape))

    def costs(self, shape, tag=""):
        mid = self.cv1.out_shape(shape)
        out = self.cv1.costs(shape, tag) + self.cv2.costs(mid, tag)
        if self.add:
            n, c, h, w = self.out_shape(shape)
            out.append(ElementwiseGeom("add", n * c * h * w, 1, tag))
        return out


@dataclass(frozen=True, eq=False)
class C3kParams:
    """CSP block with two parallel 1x1 stems and a bottleneck chain on one of them."""

    cv1: ConvBlockParams
    cv2: ConvBlockParams
    cv3: ConvBlockParams
    m: tuple

    @classmethod
    def random(cls, rng, c1, c2, n=2, shortcut=True, e=0.5, k=3):
        hidden = int(c2 * e)
        return cls(
            ConvBlockParams.random(rng, c1, hidden, 1),
            ConvBlockParams.random(rng, c1, hidden, 1),
            ConvBlockParams.random(rng, 2 * hidden, c2, 1),
            tuple(BottleneckParams.random(rng, hidden, hidden, shortcut, (k, k), 1.0) for _ in range(n)),
        )

    def num_params(self):
        return self.cv1.num_params() + self.cv2.num_params() + self.cv3.num_params() + sum(b.num_params() for b in self.m)

    def forward(self, x):
        a = convblock_forward(x, self.cv1)
        for b in self.m:
            a = b.forward(a)
        return convblock_forward(np.concatenate([a, convblock_forward(x, self.cv2)], axis=1), self.cv3)

    def out_shape(self, shape):
        n, _, h, w = shape
        return (n, self.cv3.c_out, h, w)

    def costs(self, shape, tag=""):
        s1 = self.cv1.out_shape(shape)
        out = self.cv1.costs(shape, tag) + self.cv2.costs(shape, tag)
        for b in self.m:
            out += b.costs(s1, tag)
        n, _, h, w = shape
        out += self.cv3.costs((n, self.cv3.c_in, h, w), tag)
        return out


@dataclass(frozen=True, eq=False)
class C3k2Params:
    """Split-transform-merge block: cv1 splits into two halves, ``n`` inner blocks extend the last."""

    cv1: ConvBlockParams
    cv2: ConvBlockParams
    m: tuple

    def __post_init__(self):
        if self.cv1.c_out % 2:
            raise ShapeError("C3k2 cv1 must emit an even channel count")
        hidden = self.cv1.c_out // 2
        if self.cv2.c_in != (2 + len(self.m)) * hidden:
            raise ShapeError(f"C3k2 cv2 expects {(2 + len(self.m)) * hidden} channels, has {self.cv2.c_in}")

    @property
    def c_in(self):
        return self.cv1.c_in

    @property
    def c_out(self):
        return self.cv2.c_out

    @classmethod
    def random(cls, rng, c1, c2, n=1, c3k=False, e=0.5, shortcut=True):
        hidden = int(c2 * e)
        inner = tuple(
            C3kParams.random(rng, hidden, hidden, 2, shortcut) if c3k
            else BottleneckParams.random(rng, hidden, hidden, shortcut)
            for _ in range(n)
        )
        return cls(ConvBlockParams.random(rng, c1, 2 * hidden, 1), ConvBlockParams.random(rng, (2 + n) * hidden, c2, 1), inner)

    def num_params(self):
        return self.cv1.num_params() + self.cv2.num_params() + sum(b.num_params() for b in self.m)

    def forward(self, x):
        return c3k2_forward(x, self)

    def out_shape(self, shape):
        n, c, h, w = shape
        if c != self.c_in:
            raise ShapeError(f"C3k2 expects {self.c_in} input channels, got {c}")
        return (n, self.c_out, h, w)

    def costs(self, shape, tag=""):
        n, _, h, w = shape
        hidden = self.cv1.c_out // 2
        out = self.cv1.costs(shape, tag)
        for b in self.m:
            out += b.costs((n, hidden, h, w), tag)
        out += self.cv2.costs((n, self.cv2.c_in, h, w), tag)
        return out


def c3k2_forward(x, p: C3k2Params) -> np.ndarray:
    y = convblock_forward(x, p.cv1)
    half = p.cv1.c_out // 2
    parts = [y[:, :half], y[:, half:]]
    for b in p.m:
        parts.append(b.forward(parts[-1]))
    return convblock_forward(np.concatenate(parts, axis=1), p.cv2)


@dataclass(frozen=True, eq=False)
class SPPFParams:
    cv1: ConvBlockParams
    cv2: ConvBlockParams
    k: int = 5

    def __post_init__(self):
        if self.cv2.c_in != 4 * self.cv1.c_out:
            raise ShapeError("SPPF cv2 must take 4x the hidden channels")

    @property
    def c_in(self):
        return self.cv1.c_in

    @property
    def c_out(self):
        return self.cv2.c_out

    @classmethod
    def random(cls, rng, c1, c2, k=5):
        hidden = c1 // 2
        return cls(ConvBlockParams.random(rng, c1, hidden, 1), ConvBlockParams.random(rng, 4 * hidden, c2, 1), k)

    def num_params(self):
        return self.cv1.num_params() + self.cv2.num_params()

    def forward(self, x):
        return sppf_forward(x, self)

    def out_shape(self, shape):
        n, c, h, w = shape
        if c != self.c_in:
            raise ShapeError(f"SPPF expects {self.c_in} input channels, got {c}")
        return (n, self.c_out, h, w)

    def costs(self, shape, tag=""):
        n, _, h, w = shape
        hidden = self.cv1.c_out
        return (
            self.cv1.costs(shape, tag)
            + [ElementwiseGeom("max_pool", 3 * n * hidden * h * w, self.k * self.k - 1, tag)]
            + self.cv2.costs((n, 4 * hidden, h, w), tag)
        )


def sppf_forward(x, p: SPPFParams) -> np.ndarray:
    y = [convblock_forward(x, p.cv1)]
    for _ in range(3):
        y.append(nx.max_pool2d(y[-1], p.k, 1, p.k // 2))
    return convblock_forward(np.concatenate(y, axis=1), p.cv2)


# --------------------------------------------------------------------------
# Detect head (raw, per scale)


@dataclass(frozen=True, eq=False)
class DetectHeadParams:
    """One scale of the YOLO11 head: box-regression and classification conv stacks.

    Output channels: ``4 * reg_max`` distribution logits followed by
    ``num_classes`` class logits. No decoding.
    """

    reg: tuple
    cls: tuple
    num_classes: int
    reg_max: int = 16

    @classmethod
    def random(cls, rng, c_in, num_classes=6, reg_max=16, c2=64, c3=128):
        reg = (
            ConvBlockParams.random(rng, c_in, c2, 3),
            ConvBlockParams.random(rng, c2, c2, 3),
            ConvParams.random(rng, c2, 4 * reg_max, k=1, bias=True),
        )
        cls_ = (
            ConvBlockParams.random(rng, c_in, c_in, 3, g=c_in),
            ConvBlockParams.random(rng, c_in, c3, 1),
            ConvBlockParams.random(rng, c3, c3, 3, g=c3),
            ConvBlockParams.random(rng, c3, c3, 1),
            ConvParams.random(rng, c3, num_classes, k=1, bias=True),
        )
        return cls(reg, cls_, num_classes, reg_max)

    @property
    def c_in(self):
        return self.reg[0].c_in

    @property
    def c_out(self):
        return 4 * self.reg_max + self.num_classes

    def num_params(self):
        return sum(s.num_params() for s in self.reg + self.cls)

    @staticmethod
    def _run(stack, x):
        for stage in stack:
            x = nx.conv2d(x, stage) if isinstance(stage, ConvParams) else convblock_forward(x, stage)
        return x

    def forward(self, x):
        x = nx.as_feature_map(x)
        if x.shape[1] != self.c_in:
            raise ShapeError(f"DetectHead expects {self.c_in} input channels, got {x.shape[1]}")
        return np.concatenate([self._run(self.reg, x), self._run(self.cls, x)], axis=1)

    def out_shape(self, shape):
        n, c, h, w = shape
        if c != self.c_in:
            raise ShapeError(f"DetectHead expects {self.c_in} input channels, got {c}")
        return (n, self.c_out, h, w)

    def costs(self, shape, tag=""):
        n, _, h, w = shape
        out = []
        for stack in (self.reg, self.cls):
            s = shape
            for stage in stack:
                if isinstance(stage, ConvParams):
                    kh, kw = stage.kernel
                    out.append(ConvGeom(stage.in_channels, stage.out_channels, kh, kw, h, w, stage.groups, stage.has_bias, tag=tag))
                    s = (n, stage.out_channels, h, w)
                else:
                    out += stage.costs(s, tag)
                    s = stage.out_shape(s)
        return out


# --------------------------------------------------------------------------
# Parameter-free plumbing


def concat(*maps) -> np.ndarray:
    maps = [nx.as_feature_map(m) for m in maps]
    ref = maps[0].shape
    for m in maps[1:]:
        if m.shape[0] != ref[0] or m.shape[2:] != ref[2:]:
            raise ShapeError(f"concat: shapes {ref} and {m.shape} disagree outside the channel axis")
    return np.concatenate(maps, axis=1)


def nearest_upsample(x, scale: int = 2) -> np.ndarray:
    x = nx.as_feature_map(x)
    return np.ascontiguousarray(x.repeat(scale, axis=2).repeat(scale, axis=3))


@dataclass(frozen=True)
class ConcatParams:
    def num_params(self):
        return 0

    def forward(self, *maps):
        return concat(*maps)

    def out_shape(self, *shapes):
        ref = shapes[0]
        for s in shapes[1:]:
            if s[0] != ref[0] or s[2:] != ref[2:]:
                raise ShapeError(f"concat: shapes {ref} and {s} disagree outside the channel axis")
        return (ref[0], sum(s[1] for s in shapes), ref[2], ref[3])

    def costs(self, *shapes, tag=""):
        return []


@dataclass(frozen=True)
class NearestUpsampleParams:
    scale: int = 2

    def num_params(self):
        return 0

    def forward(self, x):
        return nearest_upsample(x, self.scale)

    def out_shape(self, shape):
        n, c, h, w = shape
        return (n, c, h * self.scale, w * self.scale)

    def costs(self, shape, tag=""):
        return []
