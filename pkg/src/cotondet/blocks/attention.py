"""Attention blocks: squeeze-and-excitation, ECA, SimAM and PHAM.

All blocks preserve the input shape. Parameter dataclasses are immutable;
forward functions are pure.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import numerics as nx
from ..costs import ConvGeom, ElementwiseGeom, NormGeom
from ..numerics import BNParams, ConvParams, ShapeError


def _check_channels(x, channels, block):
    x = nx.as_feature_map(x)
    if x.shape[1] != channels:
        raise ShapeError(f"{block}: input has C={x.shape[1]} channels, block expects {channels}")
    return x


# --------------------------------------------------------------------------
# Squeeze and excitation


@dataclass(frozen=True, eq=False)
class SEParams:
    """Bias-free two-layer bottleneck: ``w1`` is (C/r, C), ``w2`` is (C, C/r)."""

    w1: np.ndarray
    w2: np.ndarray

    def __post_init__(self):
        w1 = np.asarray(self.w1, dtype=np.float64)
        w2 = np.asarray(self.w2, dtype=np.float64)
        if w1.ndim != 2 or w2.shape != (w1.shape[1], w1.shape[0]):
            raise ShapeError(f"SE weights must be (C/r, C) and (C, C/r); got {w1.shape}, {w2.shape}")
        if w1.shape[1] % w1.shape[0]:
            raise ShapeError(f"SE reduction must divide C: C={w1.shape[1]}, C/r={w1.shape[0]}")
        object.__setattr__(self, "w1", w1)
        object.__setattr__(self, "w2", w2)

    @property
    def channels(self) -> int:
        return self.w1.shape[1]

    @property
    def reduction(self) -> int:
        return self.channels // self.w1.shape[0]

    def num_params(self) -> int:
        return self.w1.size + self.w2.size

    @classmethod
    def random(cls, rng, channels, reduction=16):
        if reduction < 1 or channels % reduction:
            raise ShapeError(f"reduction {reduction} must be a positive divisor of {channels}")
        hidden = channels // reduction
        return cls(rng.uniform(-0.1, 0.1, (hidden, channels)), rng.uniform(-0.1, 0.1, (channels, hidden)))

    def forward(self, x):
        return se_forward(x, self)

    def out_shape(self, shape):
        return shape

    def costs(self, shape, tag="se"):
        n, c, h, w = shape
        hidden = self.w1.shape[0]
        return [
            ElementwiseGeom("avg_pool", n * c * h * w, 1, tag),
            ConvGeom(c, hidden, 1, 1, 1, 1, tag=tag),
            ElementwiseGeom("relu", n * hidden, 1, tag),
            ConvGeom(hidden, c, 1, 1, 1, 1, tag=tag),
            ElementwiseGeom("sigmoid", n * c, 4, tag),
            ElementwiseGeom("scale", n * c * h * w, 1, tag),
        ]


def se_gates(x, p: SEParams) -> np.ndarray:
    """Per-(batch, channel) excitation ``s = sigmoid(W2 relu(W1 z))``, shape (N, C)."""
    x = _check_channels(x, p.channels, "SE")
    z = nx.global_avg_pool(x)
    return nx.sigmoid(nx.relu(z @ p.w1.T) @ p.w2.T)


def se_forward(x, p: SEParams) -> np.ndarray:
    x = _check_channels(x, p.channels, "SE")
    return x * se_gates(x, p)[:, :, None, None]


# --------------------------------------------------------------------------
# Efficient channel attention


@dataclass(frozen=True, eq=False)
class ECAParams:
    weight: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64).reshape(-1)
        if w.size % 2 == 0:
            raise ShapeError(f"ECA kernel size must be odd, got {w.size}")
        object.__setattr__(self, "weight", w)

    @property
    def k(self) -> int:
        return self.weight.size

    def num_params(self) -> int:
        return self.weight.size

    @classmethod
    def random(cls, rng, k=3):
        if k % 2 == 0:
            raise ShapeError(f"ECA kernel size must be odd, got {k}")
        return cls(rng.uniform(-0.1, 0.1, k))

    def forward(self, x):
        return eca_forward(x, self)

    def out_shape(self, shape):
        return shape

    def costs(self, shape, tag="eca"):
        n, c, h, w = shape
        return [
            ElementwiseGeom("avg_pool", n * c * h * w, 1, tag),
            ConvGeom(1, 1, 1, self.k, 1, c, tag=tag),
            ElementwiseGeom("sigmoid", n * c, 4, tag),
            ElementwiseGeom("scale", n * c * h * w, 1, tag),
        ]


def eca_gates(x, p: ECAParams) -> np.ndarray:
    x = nx.as_feature_map(x)
    z = nx.global_avg_pool(x)
    r = p.k // 2
    zp = np.pad(z, ((0, 0), (r, r)))
    c = z.shape[1]
    y = np.zeros_like(z)
    for j in range(p.k):
        y += p.weight[j] * zp[:, j:j + c]
    return nx.sigmoid(y)


def eca_forward(x, p: ECAParams) -> np.ndarray:
    x = nx.as_feature_map(x)
    return x * eca_gates(x, p)[:, :, None, None]


# --------------------------------------------------------------------------
# SimAM


@dataclass(frozen=True)
class SimAMParams:
    """``lam`` regularises the energy; ``gate`` is "sigmoid" (bounded) or "raw" (x / e*)."""

    lam: float = 1e-4
    gate: str = "sigmoid"

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"SimAM lambda must be positive, got {self.lam}")
        if self.gate not in ("sigmoid", "raw"):
            raise ValueError(f"SimAM gate must be 'sigmoid' or 'raw', got {self.gate!r}")

    def num_params(self) -> int:
        return 0

    def forward(self, x):
        return simam_forward(x, self)

    def out_shape(self, shape):
        return shape

    def costs(self, shape, tag="simam"):
        n, c, h, w = shape
        # mean, centre+square, variance sum, scale+offset, gate, multiply
        per = 6 + (4 if self.gate == "sigmoid" else 0)
        return [ElementwiseGeom("simam", n * c * h * w, per, tag)]


def simam_inverse_energy(x, lam: float) -> np.ndarray:
    """Neuron importance ``1 / e*`` for every entry.

    ``e* = 4 (var + lam) / ((t - mean)^2 + 2 var + 2 lam)`` with the channel
    mean over all M = H*W entries and the variance normalised by M - 1.
    """
    x = nx.as_feature_map(x)
    m = x.shape[2] * x.shape[3]
    if m < 2:
        raise ShapeError(f"SimAM needs at least 2 entries per channel, got H*W={m}")
    mu = x.mean(axis=(2, 3), keepdims=True)
    d = (x - mu) ** 2
    var = d.sum(axis=(2, 3), keepdims=True) / (m - 1)
    return d / (4.0 * (var + lam)) + 0.5


def simam_forward(x, p: SimAMParams = SimAMParams()) -> np.ndarray:
    x = nx.as_feature_map(x)
    inv = simam_inverse_energy(x, p.lam)
    gate = nx.sigmoid(inv) if p.gate == "sigmoid" else inv
    return x * gate


def simam_energy(w: float, b: float, values, t_index: int, lam: float) -> float:
    """Energy of neuron ``values[t_index]`` against the rest of its channel for a linear map (w, b)."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    t = values[t_index]
    others = np.delete(values, t_index)
    fit = (-1.0 - (w * others + b)) ** 2
    return float(fit.sum() / others.size + (1.0 - (w * t + b)) ** 2 + lam * w * w)


def simam_closed_form(values, t_index: int, lam: float) -> tuple[float, float, float]:
    """Minimiser (w_t, b_t) and minimum energy of :func:`simam_energy`.

    Statistics exclude the target neuron. Setting the partial derivatives to
    zero gives ``w_t = 2 (t - mu) / ((t - mu)^2 + 2 var + 2 lam)`` (positive
    sign: the target maps to +1, the rest to -1) and ``b_t = -(t + mu) w_t / 2``.
    """
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size < 2:
        raise ShapeError("SimAM needs at least 2 entries per channel")
    t = values[t_index]
    others = np.delete(values, t_index)
    mu = others.mean()
    var = ((others - mu) ** 2).sum() / others.size
    denom = (t - mu) ** 2 + 2.0 * var + 2.0 * lam
    w_t = 2.0 * (t - mu) / denom
    b_t = -0.5 * (t + mu) * w_t
    e_t = 4.0 * (var + lam) / denom
    return float(w_t), float(b_t), float(e_t)


# --------------------------------------------------------------------------
# Parallel hybrid attention


@dataclass(frozen=True, eq=False)
class PHAMParams:
    """Channel gate MLP (shared across pooling branches), 7x7 spatial conv and coordinate gate.

    ``w0`` is (C/r, C) and ``w1`` is (C, C/r). The spatial conv maps the
    2-channel [mean; max] descriptor to one attention map and must keep H x W.
    """

    w0: np.ndarray
    w1: np.ndarray
    spatial: ConvParams
    coord_reduce: ConvParams
    coord_bn: BNParams
    coord_h: ConvParams
    coord_w: ConvParams

    def __post_init__(self):
        w0 = np.asarray(self.w0, dtype=np.float64)
        w1 = np.asarray(self.w1, dtype=np.float64)
        if w0.ndim != 2 or w1.shape != (w0.shape[1], w0.shape[0]):
            raise ShapeError(f"PHAM MLP weights must be (C/r, C) and (C, C/r); got {w0.shape}, {w1.shape}")
        object.__setattr__(self, "w0", w0)
        object.__setattr__(self, "w1", w1)
        c = w0.shape[1]
        if c % w0.shape[0]:
            raise ShapeError(f"PHAM reduction must divide C={c}")
        if (self.spatial.in_channels, self.spatial.out_channels) != (2, 1):
            raise ShapeError("PHAM spatial conv must map 2 -> 1 channels")
        if self.spatial.kernel[0] % 2 == 0 or self.spatial.kernel[1] % 2 == 0:
            raise ShapeError("PHAM spatial kernel must be odd")
        mip = self.coord_reduce.out_channels
        if self.coord_reduce.in_channels != c or self.coord_bn.channels != mip:
            raise ShapeError("PHAM coordinate reduce conv / batchnorm channels inconsistent")
        for conv in (self.coord_h, self.coord_w):
            if (conv.in_channels, conv.out_channels) != (mip, c):
                raise ShapeError(f"PHAM coordinate expand convs must map {mip} -> {c}")

    @property
    def channels(self) -> int:
        return self.w0.shape[1]

    def num_params(self) -> int:
        return (
            self.w0.size + self.w1.size + self.spatial.num_params() + self.coord_reduce.num_params()
            + self.coord_bn.num_params() + self.coord_h.num_params() + self.coord_w.num_params()
        )

    @classmethod
    def random(cls, rng, channels, reduction=16, coord_reduction=16, spatial_kernel=7, spatial_stride=1):
        if reduction < 1 or channels % reduction:
            raise ShapeError(f"reduction {reduction} must be a positive divisor of {channels}")
        if spatial_kernel % 2 == 0:
            raise ShapeError("spatial kernel must be odd")
        hidden = channels // reduction
        mip = max(8, channels // coord_reduction)
        return cls(
            w0=rng.uniform(-0.1, 0.1, (hidden, channels)),
            w1=rng.uniform(-0.1, 0.1, (channels, hidden)),
            spatial=ConvParams.random(rng, 2, 1, k=spatial_kernel, stride=spatial_stride),
            coord_reduce=ConvParams.random(rng, channels, mip, k=1, bias=True),
            coord_bn=BNParams.random(rng, mip),
            coord_h=ConvParams.random(rng, mip, channels, k=1, bias=True),
            coord_w=ConvParams.random(rng, mip, channels, k=1, bias=True),
        )

    def forward(self, x):
        return pham_forward(x, self)

    def out_shape(self, shape):
        return shape

    def costs(self, shape, tag="pham"):
        n, c, h, w = shape
        hidden = self.w0.shape[0]
        mip = self.coord_reduce.out_channels
        kh, kw = self.spatial.kernel
        sh, sw = self.spatial.output_hw(h, w)
        elems = n * c * h * w
        return [
            # channel gate
            ElementwiseGeom("avg_max_pool", 2 * elems, 1, tag),
            ConvGeom(c, hidden, 1, 1, 1, 1, tag=tag),
            ConvGeom(hidden, c, 1, 1, 1, 1, tag=tag),
            ConvGeom(c, hidden, 1, 1, 1, 1, shared=True, tag=tag),
            ConvGeom(hidden, c, 1, 1, 1, 1, shared=True, tag=tag),
            ElementwiseGeom("channel_gate", n * (2 * hidden + 5 * c), 1, tag),
            ElementwiseGeom("scale", elems, 1, tag),
            # spatial gate
            ElementwiseGeom("channel_mean_max", 2 * elems, 1, tag),
            ConvGeom(2, 1, kh, kw, sh, sw, bias=self.spatial.has_bias, tag=tag),
            ElementwiseGeom("sigmoid", n * h * w, 4, tag),
            ElementwiseGeom("scale", elems, 1, tag),
            # coordinate gate
            ElementwiseGeom("axis_pool", 2 * elems, 1, tag),
            ConvGeom(c, mip, 1, 1, h + w, 1, bias=True, tag=tag),
            NormGeom(mip, n * mip * (h + w), tag),
            ElementwiseGeom("hard_swish", n * mip * (h + w), 4, tag),
            ConvGeom(mip, c, 1, 1, h, 1, bias=True, tag=tag),
            ConvGeom(mip, c, 1, 1, 1, w, bias=True, tag=tag),
            ElementwiseGeom("sigmoid", n * c * (h + w), 4, tag),
            ElementwiseGeom("scale", 2 * elems, 1, tag),
            # fusion
            ElementwiseGeom("add_relu", elems, 2, tag),
        ]


def pham_channel_gate(x, p: PHAMParams) -> np.ndarray:
    """``sigmoid(MLP(avg) + MLP(max)) * x`` with one MLP shared by both descriptors."""
    x = _check_channels(x, p.channels, "PHAM channel gate")

    def mlp(z):
        return nx.relu(z @ p.w0.T) @ p.w1.T

    gate = nx.sigmoid(mlp(nx.global_avg_pool(x)) + mlp(nx.global_max_pool(x)))
    return x * gate[:, :, None, None]


def pham_spatial_gate(x, p: PHAMParams) -> np.ndarray:
    """``sigmoid(conv7x7([mean_c; max_c])) * x``; the map must match x's H x W."""
    x = _check_channels(x, p.channels, "PHAM spatial gate")
    desc = np.concatenate([x.mean(axis=1, keepdims=True), x.max(axis=1, keepdims=True)], axis=1)
    att = nx.sigmoid(nx.conv2d(desc, p.spatial))
    if att.shape[2:] != x.shape[2:]:
        raise ShapeError(
            f"PHAM spatial gate: attention map {att.shape[2:]} does not match input {x.shape[2:]} "
            f"(stride {p.spatial.stride}, padding {p.spatial.padding}); only a size-preserving conv is valid"
        )
    return x * att


def pham_coordinate_gate(x, p: PHAMParams) -> np.ndarray:
    x = _check_channels(x, p.channels, "PHAM coordinate gate")
    n, c, h, w = x.shape
    along_h = x.mean(axis=3, keepdims=True)                       # (N, C, H, 1)
    along_w = x.mean(axis=2, keepdims=True).transpose(0, 1, 3, 2)  # (N, C, W, 1)
    y = np.concatenate([along_h, along_w], axis=2)
    y = nx.hard_swish(nx.batchnorm(nx.conv2d(y, p.coord_reduce), p.coord_bn))
    x_h = y[:, :, :h]
    x_w = y[:, :, h:].transpose(0, 1, 3, 2)                       # (N, mip, 1, W)
    a_h = nx.sigmoid(nx.conv2d(x_h, p.coord_h))
    a_w = nx.sigmoid(nx.conv2d(x_w, p.coord_w))
    return x * a_w * a_h


def pham_forward(x, p: PHAMParams) -> np.ndarray:
    """``relu(spatial(channel(x)) + coordinate(x))``."""
    x = _check_channels(x, p.channels, "PHAM")
    x_cs = pham_spatial_gate(pham_channel_gate(x, p), p)
    x_coord = pham_coordinate_gate(x, p)
    return nx.relu(x_cs + x_coord)
