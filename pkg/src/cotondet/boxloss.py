"""Box geometry and IoU-family regression losses with analytic gradients.

Every loss returns its value together with the gradient with respect to the
predicted box's (cx, cy, w, h); the ground-truth box is treated as constant.
Gradients are assembled by forward-mode chain rule over the corner
coordinates, so each intermediate carries a 4-vector of partials.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

SIGMA_EPS = 1e-9


@dataclass(frozen=True)
class BBox:
    """Normalised centre-format box."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"BBox.{name} must be finite, got {v}")
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise ValueError(f"BBox centre must lie in [0,1], got ({self.cx}, {self.cy})")
        if not (0.0 < self.w <= 1.0 and 0.0 < self.h <= 1.0):
            raise ValueError(f"BBox extents must lie in (0,1], got ({self.w}, {self.h})")

    @property
    def x1(self):
        return self.cx - self.w / 2

    @property
    def x2(self):
        return self.cx + self.w / 2

    @property
    def y1(self):
        return self.cy - self.h / 2

    @property
    def y2(self):
        return self.cy + self.h / 2

    @property
    def area(self):
        return self.w * self.h

    def as_tuple(self):
        return (self.cx, self.cy, self.w, self.h)

    @classmethod
    def from_corners(cls, x1, y1, x2, y2):
        return cls((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)


@dataclass(frozen=True)
class SIoUConfig:
    theta: float = 4.0

    def __post_init__(self):
        if not 2.0 <= self.theta <= 6.0:
            raise ValueError(f"SIoU theta must lie in [2, 6], got {self.theta}")


@dataclass(frozen=True)
class LossValueGrad:
    value: float
    grad: np.ndarray  # d value / d (cx, cy, w, h) of the predicted box


def _coords(b) -> tuple:
    if isinstance(b, BBox):
        return b.as_tuple()
    cx, cy, w, h = (float(v) for v in b)
    return cx, cy, w, h


# d(x1, x2, y1, y2) / d(cx, cy, w, h)
_DX1 = np.array([1.0, 0.0, -0.5, 0.0])
_DX2 = np.array([1.0, 0.0, 0.5, 0.0])
_DY1 = np.array([0.0, 1.0, 0.0, -0.5])
_DY2 = np.array([0.0, 1.0, 0.0, 0.5])
_ZERO = np.zeros(4)


def _dmin(a, da, b):
    """min(a, b) with b constant; ties take the two-sided average."""
    if a < b:
        return a, da
    if a > b:
        return b, _ZERO
    return a, 0.5 * da


def _dmax(a, da, b):
    if a > b:
        return a, da
    if a < b:
        return b, _ZERO
    return a, 0.5 * da


class _Geometry:
    """Shared intermediates (with partials) for one predicted/ground-truth pair."""

    def __init__(self, b, g):
        cx, cy, w, h = _coords(b)
        gx, gy, gw, gh = _coords(g)
        self.w, self.h, self.gw, self.gh = w, h, gw, gh
        x1, x2, y1, y2 = cx - w / 2, cx + w / 2, cy - h / 2, cy + h / 2
        gx1, gx2, gy1, gy2 = gx - gw / 2, gx + gw / 2, gy - gh / 2, gy + gh / 2

        ix2, dix2 = _dmin(x2, _DX2, gx2)
        ix1, dix1 = _dmax(x1, _DX1, gx1)
        iy2, diy2 = _dmin(y2, _DY2, gy2)
        iy1, diy1 = _dmax(y1, _DY1, gy1)
        iw, diw = ix2 - ix1, dix2 - dix1
        ih, dih = iy2 - iy1, diy2 - diy1
        if iw <= 0:
            iw, diw = 0.0, _ZERO
        if ih <= 0:
            ih, dih = 0.0, _ZERO
        inter = iw * ih
        dinter = ih * diw + iw * dih
        # areas from corners keep inter == union bit-exact for identical boxes
        area_b = (x2 - x1) * (y2 - y1)
        area_g = (gx2 - gx1) * (gy2 - gy1)
        union = area_b + area_g - inter
        dunion = np.array([0.0, 0.0, y2 - y1, x2 - x1]) - dinter
        self.inter, self.union = inter, union
        self.iou = min(1.0, inter / union)
        self.diou = (dinter * union - inter * dunion) / (union * union)
        self.dunion = dunion

        ex2, dex2 = _dmax(x2, _DX2, gx2)
        ex1, dex1 = _dmin(x1, _DX1, gx1)
        ey2, dey2 = _dmax(y2, _DY2, gy2)
        ey1, dey1 = _dmin(y1, _DY1, gy1)
        self.cw, self.dcw = ex2 - ex1, dex2 - dex1
        self.ch, self.dch = ey2 - ey1, dey2 - dey1

        self.dx, self.dy = cx - gx, cy - gy


def iou(b, g) -> float:
    """Intersection over union of two centre-format boxes."""
    return _Geometry(b, g).iou


def iou_loss(b, g) -> LossValueGrad:
    geo = _Geometry(b, g)
    return LossValueGrad(1.0 - geo.iou, -geo.diou)


def giou_loss(b, g) -> LossValueGrad:
    """1 - IoU + (C - U) / C with C the enclosing-box area."""
    geo = _Geometry(b, g)
    c = geo.cw * geo.ch
    dc = geo.ch * geo.dcw + geo.cw * geo.dch
    if c <= 0:
        return LossValueGrad(1.0 - geo.iou, -geo.diou)
    value = 1.0 - geo.iou + (c - geo.union) / c
    # d[(C - U)/C] = d[1 - U/C] = -(dU*C - U*dC)/C^2
    grad = -geo.diou - (geo.dunion * c - geo.union * dc) / (c * c)
    return LossValueGrad(value, grad)


def _center_penalty(geo):
    """rho^2 / c^2 with its partials; 0 when the enclosing diagonal vanishes."""
    c2 = geo.cw ** 2 + geo.ch ** 2
    if c2 <= 0:
        return 0.0, _ZERO
    rho2 = geo.dx ** 2 + geo.dy ** 2
    drho2 = np.array([2 * geo.dx, 2 * geo.dy, 0.0, 0.0])
    dc2 = 2 * geo.cw * geo.dcw + 2 * geo.ch * geo.dch
    return rho2 / c2, (drho2 * c2 - rho2 * dc2) / (c2 * c2)


def diou_loss(b, g) -> LossValueGrad:
    geo = _Geometry(b, g)
    pen, dpen = _center_penalty(geo)
    return LossValueGrad(1.0 - geo.iou + pen, -geo.diou + dpen)


def ciou_loss(b, g) -> LossValueGrad:
    """DIoU plus the aspect-consistency term alpha * v.

    The gradient differentiates through alpha as well, so it is the true
    derivative of the returned value.
    """
    geo = _Geometry(b, g)
    pen, dpen = _center_penalty(geo)
    k = 4.0 / math.pi ** 2
    a = math.atan(geo.gw / geo.gh) - math.atan(geo.w / geo.h)
    v = k * a * a
    r2 = geo.w ** 2 + geo.h ** 2
    dv = -2 * k * a * np.array([0.0, 0.0, geo.h / r2, -geo.w / r2])
    denom = 1.0 - geo.iou + v
    if denom <= 0:
        av, dav = 0.0, _ZERO
    else:
        av = v * v / denom
        dav = (2 * v * dv * denom - v * v * (dv - geo.diou)) / (denom * denom)
    return LossValueGrad(1.0 - geo.iou + pen + av, -geo.diou + dpen + dav)


def siou_angle(dx, dy) -> tuple:
    """Angle cost and its partials w.r.t. (dx, dy).

    1 - 2 sin^2(arcsin(|dy|/sigma) - pi/4) reduces to 2|dx||dy| / sigma^2,
    which is what is evaluated here.
    """
    s = dx * dx + dy * dy
    if math.sqrt(s) < SIGMA_EPS:
        return 0.0, 0.0, 0.0
    adx, ady = abs(dx), abs(dy)
    lam = 2 * adx * ady / s
    sx = math.copysign(1.0, dx) if dx != 0 else 0.0
    sy = math.copysign(1.0, dy) if dy != 0 else 0.0
    dldx = 2 * ady * sx / s - lam * 2 * dx / s
    dldy = 2 * adx * sy / s - lam * 2 * dy / s
    return lam, dldx, dldy


def siou_terms(b, g, cfg: SIoUConfig | None = None) -> dict:
    """IoU, angle, distance and shape costs of the SIoU loss (values only)."""
    cfg = cfg or SIoUConfig()
    geo = _Geometry(b, g)
    lam, _, _ = siou_angle(geo.dx, geo.dy)
    gamma = 2.0 - lam
    rx, ry = (geo.dx / geo.cw) ** 2, (geo.dy / geo.ch) ** 2
    dist = (1 - math.exp(-gamma * rx)) + (1 - math.exp(-gamma * ry))
    ow = abs(geo.w - geo.gw) / max(geo.w, geo.gw)
    oh = abs(geo.h - geo.gh) / max(geo.h, geo.gh)
    shape = (1 - math.exp(-ow)) ** cfg.theta + (1 - math.exp(-oh)) ** cfg.theta
    return {"iou": geo.iou, "angle": lam, "distance": dist, "shape": shape}


def _omega(p, q):
    """|p - q| / max(p, q) and its derivative in p (q constant)."""
    if p > q:
        return (p - q) / p, q / (p * p)
    if p < q:
        return (q - p) / q, -1.0 / q
    return 0.0, 0.0


def siou_loss(b, g, cfg: SIoUConfig | None = None) -> LossValueGrad:
    """1 - IoU + (distance + shape) / 2 with the angle-modulated distance cost."""
    cfg = cfg or SIoUConfig()
    geo = _Geometry(b, g)
    lam, dldx, dldy = siou_angle(geo.dx, geo.dy)
    dlam = np.array([dldx, dldy, 0.0, 0.0])
    gamma, dgamma = 2.0 - lam, -dlam

    dist, ddist = 0.0, np.zeros(4)
    for d, dd, c, dc in (
        (geo.dx, np.array([1.0, 0, 0, 0]), geo.cw, geo.dcw),
        (geo.dy, np.array([0, 1.0, 0, 0]), geo.ch, geo.dch),
    ):
        q = d / c
        dq = (dd * c - d * dc) / (c * c)
        rho, drho = q * q, 2 * q * dq
        e = math.exp(-gamma * rho)
        dist += 1 - e
        ddist += e * (dgamma * rho + gamma * drho)

    shape, dshape = 0.0, np.zeros(4)
    for idx, (p, q) in ((2, (geo.w, geo.gw)), (3, (geo.h, geo.gh))):
        om, dom = _omega(p, q)
        e = math.exp(-om)
        base = 1 - e
        shape += base ** cfg.theta
        if base > 0:
            dshape[idx] += cfg.theta * base ** (cfg.theta - 1) * e * dom

    value = 1.0 - geo.iou + (dist + shape) / 2
    grad = -geo.diou + (ddist + dshape) / 2
    return LossValueGrad(value, grad)


LOSSES: dict = {
    "iou": iou_loss,
    "giou": giou_loss,
    "diou": diou_loss,
    "ciou": ciou_loss,
    "siou": siou_loss,
}


def finite_difference_grad(fn: Callable, b, g, step=1e-5) -> np.ndarray:
    """Central differences of ``fn(b, g).value`` in the predicted box's parameters."""
    base = np.array(_coords(b), dtype=float)
    out = np.empty(4)
    for i in range(4):
        hi, lo = base.copy(), base.copy()
        hi[i] += step
        lo[i] -= step
        out[i] = (fn(tuple(hi), g).value - fn(tuple(lo), g).value) / (2 * step)
    return out


def gradient_relative_error(analytic, numeric, floor=1e-8) -> float:
    """Max-norm difference scaled by the larger of the two gradient norms."""
    a, f = np.asarray(analytic, float), np.asarray(numeric, float)
    scale = max(np.max(np.abs(a)), np.max(np.abs(f)), floor)
    return float(np.max(np.abs(a - f)) / scale)


def check_gradient(fn: Callable, b, g, step=1e-5) -> float:
    """Relative error between ``fn``'s analytic gradient and central differences."""
    return gradient_relative_error(fn(b, g).grad, finite_difference_grad(fn, b, g, step))


def near_singular(b, g, margin=1e-4) -> bool:
    """True when the pair sits within ``margin`` of a non-differentiable configuration.

    Kinks come from edge coincidences (intersection / enclosure switch
    sides), just-touching boxes, equal extents (shape-cost ratio switches
    branch), axis-aligned or diagonal centre offsets, and coincident centres.
    """
    cx, cy, w, h = _coords(b)
    gx, gy, gw, gh = _coords(g)
    px = (cx - w / 2, cx + w / 2)
    gxs = (gx - gw / 2, gx + gw / 2)
    py = (cy - h / 2, cy + h / 2)
    gys = (gy - gh / 2, gy + gh / 2)
    for p_edges, g_edges in ((px, gxs), (py, gys)):
        for pe in p_edges:
            for ge in g_edges:
                if abs(pe - ge) < margin:
                    return True
    dx, dy = cx - gx, cy - gy
    if abs(dx) < margin or abs(dy) < margin or abs(abs(dx) - abs(dy)) < margin:
        return True
    return abs(w - gw) < margin or abs(h - gh) < margin


def random_box_pairs(rng, n, margin=1e-4, max_tries=100_000) -> list:
    """``n`` random valid (pred, gt) pairs away from every kink, some overlapping, some not."""
    pairs = []
    tries = 0
    while len(pairs) < n:
        tries += 1
        if tries > max_tries:
            raise RuntimeError("could not draw enough non-singular box pairs")
        g = (rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.4), rng.uniform(0.05, 0.4))
        if rng.random() < 0.7:
            b = (
                g[0] + rng.uniform(-0.15, 0.15),
                g[1] + rng.uniform(-0.15, 0.15),
                g[2] * rng.uniform(0.5, 1.8),
                g[3] * rng.uniform(0.5, 1.8),
            )
        else:
            b = (rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.05, 0.4), rng.uniform(0.05, 0.4))
        try:
            bb, gg = BBox(*b), BBox(*g)
        except ValueError:
            continue
        if near_singular(bb, gg, margin):
            continue
        pairs.append((bb, gg))
    return pairs


def max_gradient_error(fn: Callable, pairs: Sequence, step=1e-5) -> float:
    return max(check_gradient(fn, b, g, step) for b, g in pairs)
