"""Independent reference implementations used only by the tests.

Each oracle is written from the definition with explicit Python loops and
shares no code with the package's fast paths.
"""
import itertools
import math

import numpy as np


def naive_conv2d(x, w, bias=None, stride=1, pad=(0, 0), groups=1):
    n_, c_, h_, w_ = x.shape
    o_, cg, kh, kw = w.shape
    ph, pw = pad
    ho = (h_ + 2 * ph - kh) // stride + 1
    wo = (w_ + 2 * pw - kw) // stride + 1
    og = o_ // groups
    out = np.zeros((n_, o_, ho, wo))
    for n in range(n_):
        for o in range(o_):
            g = o // og
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0
                    for c in range(cg):
                        for i in range(kh):
                            for j in range(kw):
                                iy = oy * stride + i - ph
                                ix = ox * stride + j - pw
                                if 0 <= iy < h_ and 0 <= ix < w_:
                                    acc += w[o, c, i, j] * x[n, g * cg + c, iy, ix]
                    out[n, o, oy, ox] = acc + (0.0 if bias is None else bias[o])
    return out


def naive_max_pool(x, k, stride, pad):
    n_, c_, h_, w_ = x.shape
    ho = (h_ + 2 * pad - k) // stride + 1
    wo = (w_ + 2 * pad - k) // stride + 1
    out = np.zeros((n_, c_, ho, wo))
    for n, c, oy, ox in itertools.product(range(n_), range(c_), range(ho), range(wo)):
        vals = [
            x[n, c, oy * stride + i - pad, ox * stride + j - pad]
            for i in range(k)
            for j in range(k)
            if 0 <= oy * stride + i - pad < h_ and 0 <= ox * stride + j - pad < w_
        ]
        out[n, c, oy, ox] = max(vals)
    return out


def scalar_sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def naive_bn(x, scale, shift, mean, var, eps):
    out = np.empty_like(x)
    for c in range(x.shape[1]):
        out[:, c] = (x[:, c] - mean[c]) / math.sqrt(var[c] + eps) * scale[c] + shift[c]
    return out


def naive_silu(v):
    return v / (1.0 + np.exp(-v))


def naive_carafe_reassembly(x, kernels, k_up, scale):
    """Iterate output pixels; sum the k_up x k_up low-res neighbourhood of the source pixel."""
    n_, c_, h_, w_ = x.shape
    r = k_up // 2
    out = np.zeros((n_, c_, h_ * scale, w_ * scale))
    for n, c in itertools.product(range(n_), range(c_)):
        for oy in range(h_ * scale):
            for ox in range(w_ * scale):
                sy, sx = oy // scale, ox // scale
                acc = 0.0
                for a in range(k_up):
                    for b in range(k_up):
                        iy, ix = sy + a - r, sx + b - r
                        if 0 <= iy < h_ and 0 <= ix < w_:
                            acc += kernels[n, a * k_up + b, oy, ox] * x[n, c, iy, ix]
                out[n, c, oy, ox] = acc
    return out


# -- detection evaluation ----------------------------------------------------


def scalar_iou(a, b):
    """IoU of (cx, cy, w, h) tuples from corner arithmetic."""
    ax1, ax2, ay1, ay2 = a[0] - a[2] / 2, a[0] + a[2] / 2, a[1] - a[3] / 2, a[1] + a[3] / 2
    bx1, bx2, by1, by2 = b[0] - b[2] / 2, b[0] + b[2] / 2, b[1] - b[3] / 2, b[1] + b[3] / 2
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    return inter / ((ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter)


def exhaustive_match(dets, gts, threshold):
    """Enumerate every one-to-one assignment and keep the best one under the greedy preference.

    ``dets`` are (image, class, conf, box) and ``gts`` are (image, class, box).
    Detections are ranked by confidence (input order on ties); the chosen
    assignment maximises, detection by detection in that rank, the tuple
    (matched, IoU, -gt index). Returns the matched gt index per detection
    (-1 for unmatched).
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i][2])
    options = []
    for i in order:
        di, dc, _, db = dets[i]
        opts = [-1]
        for j, (gi, gc, gb) in enumerate(gts):
            if gi == di and gc == dc and scalar_iou(db, gb) >= threshold - 1e-9:
                opts.append(j)
        options.append(opts)
    best_key, best = None, None
    for combo in itertools.product(*options):
        used = [j for j in combo if j >= 0]
        if len(used) != len(set(used)):
            continue
        key = []
        for i, j in zip(order, combo):
            if j < 0:
                key.append((0, 0.0, 0))
            else:
                key.append((1, scalar_iou(dets[i][3], gts[j][2]), -j))
        if best_key is None or key > best_key:
            best_key, best = key, combo
    out = [-1] * len(dets)
    for i, j in zip(order, best):
        out[i] = j
    return out


def exact_step_ap(flags_by_conf, num_gt):
    """Area under the non-increasing precision envelope, integrated exactly over recall steps."""
    tp = fp = 0
    prec, rec = [], []
    for f in flags_by_conf:
        tp += f
        fp += 1 - f
        prec.append(tp / (tp + fp))
        rec.append(tp / num_gt)
    area, prev_r = 0.0, 0.0
    for k in range(len(prec)):
        env = max(prec[k:])
        area += (rec[k] - prev_r) * env
        prev_r = rec[k]
    return area


def oracle_map50(dets, gts):
    """Mean over classes with ground truth of exact-step AP at IoU 0.5, plus the match list."""
    match = exhaustive_match(dets, gts, 0.5)
    classes = sorted({g[1] for g in gts})
    aps = []
    for c in classes:
        idx = sorted((i for i in range(len(dets)) if dets[i][1] == c), key=lambda i: -dets[i][2])
        n = sum(1 for g in gts if g[1] == c)
        aps.append(exact_step_ap([1 if match[i] >= 0 else 0 for i in idx], n))
    return (sum(aps) / len(aps) if aps else 0.0), match


def random_micro_scene(rng, max_dets=5, max_gts=5, max_classes=3):
    """Small random scene as plain tuples; confidences are continuous (no ties)."""
    n_cls = int(rng.integers(1, max_classes + 1))
    n_img = int(rng.integers(1, 3))
    gts = []
    for _ in range(int(rng.integers(1, max_gts + 1))):
        box = (rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.1, 0.3), rng.uniform(0.1, 0.3))
        gts.append((int(rng.integers(n_img)), int(rng.integers(n_cls)), box))
    dets = []
    for _ in range(int(rng.integers(0, max_dets + 1))):
        if gts and rng.random() < 0.7:
            gi, gc, gb = gts[int(rng.integers(len(gts)))]
            box = (gb[0] + rng.normal(0, 0.04), gb[1] + rng.normal(0, 0.04), gb[2] * rng.uniform(0.7, 1.3), gb[3] * rng.uniform(0.7, 1.3))
            cls = gc if rng.random() < 0.85 else int(rng.integers(n_cls))
            img = gi
        else:
            box = (rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.1, 0.3), rng.uniform(0.1, 0.3))
            cls, img = int(rng.integers(n_cls)), int(rng.integers(n_img))
        dets.append((img, cls, float(rng.uniform(0.01, 0.99)), box))
    return dets, gts


def interp101_ap(flags_by_conf, num_gt):
    """101-point interpolated AP by brute force: each grid recall takes the best precision at or beyond it."""
    tp = fp = 0
    pts = []
    for f in flags_by_conf:
        tp += f
        fp += 1 - f
        pts.append((tp / num_gt, tp / (tp + fp)))
    total = 0.0
    for k in range(101):
        r = k / 100
        total += max((p for rec, p in pts if rec >= r - 1e-12), default=0.0)
    return total / 101


def oracle_class_aps(dets, gts, thresholds):
    """Per-class {threshold: AP} with exhaustive matching and 101-point interpolation."""
    out = {}
    for c in sorted({g[1] for g in gts}):
        n = sum(1 for g in gts if g[1] == c)
        out[c] = {}
        for t in thresholds:
            match = exhaustive_match(dets, gts, t)
            idx = sorted((i for i in range(len(dets)) if dets[i][1] == c), key=lambda i: -dets[i][2])
            out[c][t] = interp101_ap([1 if match[i] >= 0 else 0 for i in idx], n)
    return out
