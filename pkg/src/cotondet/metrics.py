"""Detection evaluation and model-complexity accounting.

Evaluation follows the usual one-stage-detector protocol: greedy per-class,
per-image matching by confidence, 101-point interpolated AP, and mAP over
IoU thresholds 0.50:0.05:0.95. Complexity accounting turns the geometry
records emitted by blocks (see ``cotondet.costs``) into parameter and FLOP
counts.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .boxloss import BBox
from .costs import ConvGeom, ElementwiseGeom, NormGeom

COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_GRID = np.linspace(0.0, 1.0, 101)
# IoU values this close below a threshold count as reaching it (rounding slack)
IOU_TOL = 1e-9


@dataclass(frozen=True)
class Detection:
    class_id: int
    confidence: float
    box: BBox
    image_id: Hashable = 0

    def __post_init__(self):
        if int(self.class_id) != self.class_id or self.class_id < 0:
            raise ValueError(f"class_id must be a non-negative integer, got {self.class_id}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0,1], got {self.confidence}")


@dataclass(frozen=True)
class GroundTruthBox:
    class_id: int
    box: BBox
    image_id: Hashable = 0

    def __post_init__(self):
        if int(self.class_id) != self.class_id or self.class_id < 0:
            raise ValueError(f"class_id must be a non-negative integer, got {self.class_id}")


def _corners(boxes) -> np.ndarray:
    a = np.array([[b.cx, b.cy, b.w, b.h] for b in boxes], dtype=float).reshape(-1, 4)
    return np.stack([a[:, 0] - a[:, 2] / 2, a[:, 1] - a[:, 3] / 2, a[:, 0] + a[:, 2] / 2, a[:, 1] + a[:, 3] / 2], 1)


def iou_matrix(boxes_a: Sequence[BBox], boxes_b: Sequence[BBox]) -> np.ndarray:
    """Pairwise IoU, shape (len(a), len(b))."""
    a, b = _corners(boxes_a), _corners(boxes_b)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.minimum(inter / union, 1.0)


@dataclass
class MatchResult:
    """Outcome of greedy matching, aligned with the input orders.

    ``det_gt[i]`` is the index of the ground truth detection ``i`` matched,
    or -1 for a false positive.
    """

    det_tp: np.ndarray
    gt_matched: np.ndarray
    det_gt: np.ndarray


def confidence_order(dets: Sequence[Detection]) -> list:
    """Indices sorted by confidence descending, ties kept in input order."""
    return sorted(range(len(dets)), key=lambda i: -dets[i].confidence)


def match_detections(dets: Sequence[Detection], gts: Sequence[GroundTruthBox], iou_threshold: float) -> MatchResult:
    """Greedy one-to-one matching within each (image, class) group.

    Detections are visited by confidence; each takes the unmatched
    same-class, same-image ground truth of highest IoU (lowest index on
    ties) provided that IoU reaches ``iou_threshold`` up to ``IOU_TOL``.
    """
    det_tp = np.zeros(len(dets), dtype=bool)
    det_gt = np.full(len(dets), -1, dtype=int)
    gt_matched = np.zeros(len(gts), dtype=bool)
    groups = defaultdict(list)
    for j, g in enumerate(gts):
        groups[(g.image_id, g.class_id)].append(j)
    by_group = defaultdict(list)
    for i in confidence_order(dets):
        by_group[(dets[i].image_id, dets[i].class_id)].append(i)
    for key, det_idx in by_group.items():
        gt_idx = groups.get(key, [])
        if not gt_idx:
            continue
        ious = iou_matrix([dets[i].box for i in det_idx], [gts[j].box for j in gt_idx])
        for row, i in enumerate(det_idx):
            best, best_iou = -1, -1.0
            for col, j in enumerate(gt_idx):
                if gt_matched[j]:
                    continue
                v = ious[row, col]
                if v >= iou_threshold - IOU_TOL and v > best_iou:
                    best, best_iou = j, v
            if best >= 0:
                gt_matched[best] = True
                det_tp[i] = True
                det_gt[i] = best
    return MatchResult(det_tp, gt_matched, det_gt)


@dataclass
class PRCurve:
    """Raw cumulative precision/recall after each detection, by confidence."""

    precision: np.ndarray
    recall: np.ndarray
    confidence: np.ndarray
    num_gt: int

    def envelope(self) -> np.ndarray:
        """Precision made non-increasing in recall (max over the tail)."""
        if len(self.precision) == 0:
            return self.precision.copy()
        return np.maximum.accumulate(self.precision[::-1])[::-1]


def pr_curve(flags, confidences, num_gt: int) -> PRCurve:
    """Precision/recall after each detection, sweeping confidence downwards."""
    if num_gt < 0:
        raise ValueError(f"num_gt must be >= 0, got {num_gt}")
    flags = np.asarray(flags, dtype=bool)
    conf = np.asarray(confidences, dtype=float)
    order = np.argsort(-conf, kind="stable")
    tp = np.cumsum(flags[order])
    fp = np.cumsum(~flags[order])
    precision = tp / np.maximum(tp + fp, 1)
    recall = tp / num_gt if num_gt > 0 else np.full(len(tp), np.nan)
    return PRCurve(precision.astype(float), np.asarray(recall, float), conf[order], num_gt)


def average_precision(pr: PRCurve) -> float:
    """101-point interpolated area under the PR curve; NaN without ground truth."""
    if pr.num_gt == 0:
        return float("nan")
    if len(pr.precision) == 0:
        return 0.0
    env = pr.envelope()
    idx = np.searchsorted(pr.recall, RECALL_GRID, side="left")
    q = np.where(idx < len(env), env[np.minimum(idx, len(env) - 1)], 0.0)
    return float(q.mean())


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    ap50: float
    ap50_95: float
    num_gt: int
    tp: int
    fp: int
    fn: int


@dataclass
class EvalReport:
    """Per-class and aggregate evaluation.

    Aggregates average over classes that have at least one ground truth;
    counts are totals at the reporting confidence threshold.
    """

    per_class: dict
    precision: float
    recall: float
    map50: float
    map50_95: float
    tp: int
    fp: int
    fn: int
    conf_threshold: float
    thresholds: tuple = COCO_THRESHOLDS
    ap_per_threshold: dict = field(default_factory=dict)


def _canonical(items, key):
    return [items[i] for i in sorted(range(len(items)), key=lambda i: key(items[i]))]


def _det_key(d):
    return (-d.confidence, str(d.image_id), d.class_id, d.box.cx, d.box.cy, d.box.w, d.box.h)


def _gt_key(g):
    return (str(g.image_id), g.class_id, g.box.cx, g.box.cy, g.box.w, g.box.h)


def _validate_thresholds(thresholds):
    out = []
    for t in thresholds:
        r = round(float(t), 2)
        if r not in COCO_THRESHOLDS or abs(r - t) > 1e-9:
            raise ValueError(f"IoU threshold {t} is not on the 0.50:0.05:0.95 grid")
        out.append(r)
    if not out:
        raise ValueError("at least one IoU threshold is required")
    return tuple(out)


def _operating_point(dets, tp50, gt_counts):
    """Confidence threshold maximising the mean over classes of F1 at IoU 0.5."""
    classes = sorted(gt_counts)
    best = (-1.0, 1.0)
    confs = sorted({d.confidence for d in dets}, reverse=True)
    cls = np.array([d.class_id for d in dets], dtype=int)
    conf = np.array([d.confidence for d in dets], dtype=float)
    for t in confs:
        keep = conf >= t
        f1s = []
        for c in classes:
            sel = keep & (cls == c)
            tp = int(np.sum(tp50[sel]))
            n = int(np.sum(sel))
            p = tp / n if n else 0.0
            r = tp / gt_counts[c]
            f1s.append(2 * p * r / (p + r) if p + r > 0 else 0.0)
        score = float(np.mean(f1s)) if f1s else 0.0
        # strictly better only, so ties keep the higher threshold
        if score > best[0]:
            best = (score, t)
    return best[1]


def map_at(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthBox],
    thresholds: Sequence[float] = COCO_THRESHOLDS,
    num_classes: int | None = None,
) -> EvalReport:
    """Evaluate detections against ground truth.

    mAP50 uses IoU 0.50; mAP50_95 averages AP over ``thresholds``. Input
    order does not matter: both lists are put into a canonical order first.
    """
    thresholds = _validate_thresholds(thresholds)
    if num_classes is not None:
        for item in list(dets) + list(gts):
            if item.class_id >= num_classes:
                raise ValueError(f"class_id {item.class_id} outside schema of {num_classes} classes")
    dets = _canonical(list(dets), _det_key)
    gts = _canonical(list(gts), _gt_key)

    gt_counts = defaultdict(int)
    for g in gts:
        gt_counts[g.class_id] += 1
    gt_counts = dict(gt_counts)
    det_cls = np.array([d.class_id for d in dets], dtype=int)
    conf = np.array([d.confidence for d in dets], dtype=float)

    def class_aps(th):
        m = match_detections(dets, gts, th)
        aps = {}
        for c, n in gt_counts.items():
            sel = det_cls == c
            aps[c] = average_precision(pr_curve(m.det_tp[sel], conf[sel], n))
        return m, aps

    m50, ap50 = class_aps(0.5)
    ap_per_threshold = {}
    for th in thresholds:
        ap_per_threshold[th] = ap50 if th == 0.5 else class_aps(th)[1]

    t_op = _operating_point(dets, m50.det_tp, gt_counts) if dets else 1.0
    keep = conf >= t_op if dets else np.zeros(0, dtype=bool)
    per_class = {}
    tot_tp = tot_fp = 0
    for c in sorted(set(gt_counts) | set(det_cls.tolist())):
        sel = keep & (det_cls == c)
        tp = int(np.sum(m50.det_tp[sel]))
        fp = int(np.sum(sel)) - tp
        tot_tp += tp
        tot_fp += fp
        n = gt_counts.get(c, 0)
        if n == 0:
            continue
        per_class[c] = ClassMetrics(
            precision=tp / (tp + fp) if tp + fp else 0.0,
            recall=tp / n,
            ap50=ap50[c],
            ap50_95=float(np.mean([ap_per_threshold[th][c] for th in thresholds])),
            num_gt=n,
            tp=tp,
            fp=fp,
            fn=n - tp,
        )

    def mean(attr):
        vals = [getattr(v, attr) for v in per_class.values()]
        return float(np.mean(vals)) if vals else 0.0

    return EvalReport(
        per_class=per_class,
        precision=mean("precision"),
        recall=mean("recall"),
        map50=mean("ap50"),
        map50_95=mean("ap50_95"),
        tp=tot_tp,
        fp=tot_fp,
        fn=len(gts) - tot_tp,
        conf_threshold=float(t_op),
        thresholds=thresholds,
        ap_per_threshold=ap_per_threshold,
    )


# -- complexity --------------------------------------------------------------


@dataclass
class ComplexityReport:
    """Parameter and FLOP totals with a per-tag breakdown.

    ``flops`` counts convolutions only at 2 * MACs; ``flops_extended`` adds
    bias, normalisation and elementwise passes. ``conv_weight_params`` is
    the weight-only count; ``total_parameters`` also includes biases and
    normalisation scale/shift.
    """

    total_parameters: int
    conv_weight_params: int
    bias_params: int
    norm_params: int
    flops: int
    flops_extended: int
    breakdown: dict
    fps: float | None = None

    @property
    def gflops(self) -> float:
        return self.flops / 1e9


def conv_params(g: ConvGeom) -> tuple:
    """(weight, bias) parameter counts of one convolution."""
    if g.shared:
        return 0, 0
    w = (g.c_in // g.groups) * g.k_h * g.k_w * g.c_out
    return w, (g.c_out if g.bias else 0)


def conv_flops(g: ConvGeom) -> int:
    return 2 * (g.c_in // g.groups) * g.k_h * g.k_w * g.c_out * g.h_out * g.w_out


def _as_costs(model, input_shape):
    if hasattr(model, "costs"):
        return model.costs(tuple(input_shape))
    return list(model)


def complexity(model, input_shape=(1, 3, 640, 640), n_images=None, elapsed=None) -> ComplexityReport:
    """Tally the geometry records of ``model`` (an object with ``costs(shape)`` or a list of records)."""
    costs = _as_costs(model, input_shape)
    wp = bp = np_ = fl = ext = 0
    breakdown = defaultdict(lambda: {"params": 0, "flops": 0})
    for c in costs:
        if isinstance(c, ConvGeom):
            w, b = conv_params(c)
            f = conv_flops(c)
            wp += w
            bp += b
            fl += f
            ext += f + (c.c_out * c.h_out * c.w_out if c.bias else 0)
            breakdown[c.tag]["params"] += w + b
            breakdown[c.tag]["flops"] += f
        elif isinstance(c, NormGeom):
            np_ += 2 * c.channels
            ext += 2 * c.elements
            breakdown[c.tag]["params"] += 2 * c.channels
        elif isinstance(c, ElementwiseGeom):
            ext += c.elements * c.flops_per_element
        else:
            raise TypeError(f"unknown cost record {c!r}")
    return ComplexityReport(
        total_parameters=wp + bp + np_,
        conv_weight_params=wp,
        bias_params=bp,
        norm_params=np_,
        flops=fl,
        flops_extended=ext,
        breakdown=dict(breakdown),
        fps=fps(n_images, elapsed) if n_images is not None and elapsed is not None else None,
    )


def count_parameters(model, input_shape=(1, 3, 640, 640)) -> int:
    return complexity(model, input_shape).total_parameters


def count_flops(model, input_shape=(1, 3, 640, 640), extended=False) -> int:
    r = complexity(model, input_shape)
    return r.flops_extended if extended else r.flops


def fps(n_images, elapsed_seconds) -> float:
    """Images per second."""
    if n_images < 0:
        raise ValueError(f"n_images must be >= 0, got {n_images}")
    if not elapsed_seconds > 0:
        raise ValueError(f"elapsed time must be positive, got {elapsed_seconds}")
    return n_images / elapsed_seconds


# -- reporting ---------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def report_to_kv(report: EvalReport, class_names: Sequence[str] | None = None) -> str:
    """Flat ``key=value`` lines, one metric per line, in a fixed order."""
    lines = [
        f"precision={_fmt(report.precision)}",
        f"recall={_fmt(report.recall)}",
        f"mAP50={_fmt(report.map50)}",
        f"mAP50-95={_fmt(report.map50_95)}",
        f"TP={report.tp}",
        f"FP={report.fp}",
        f"FN={report.fn}",
        f"conf_threshold={_fmt(report.conf_threshold)}",
    ]
    for c, m in sorted(report.per_class.items()):
        name = class_names[c] if class_names else str(c)
        key = name.replace(" ", "_")
        for attr, label in (("precision", "P"), ("recall", "R"), ("ap50", "AP50"), ("ap50_95", "AP50-95")):
            lines.append(f"class.{key}.{label}={_fmt(getattr(m, attr))}")
        lines.append(f"class.{key}.num_gt={m.num_gt}")
    return "\n".join(lines) + "\n"


def report_table(report: EvalReport, class_names: Sequence[str] | None = None) -> str:
    """Aligned table with columns class, P, R, AP50, AP50-95 and a final ``all`` row."""
    rows = []
    for c, m in sorted(report.per_class.items()):
        name = class_names[c] if class_names else str(c)
        rows.append((name, m.precision, m.recall, m.ap50, m.ap50_95))
    rows.append(("all", report.precision, report.recall, report.map50, report.map50_95))
    width = max(len("class"), *(len(r[0]) for r in rows))
    head = f"{'class':<{width}}  {'P':>6}  {'R':>6}  {'AP50':>6}  {'AP50-95':>7}"
    out = [head]
    for name, p, r, a, b in rows:
        out.append(f"{name:<{width}}  {p:6.3f}  {r:6.3f}  {a:6.3f}  {b:7.3f}")
    return "\n".join(out) + "\n"


def complexity_to_kv(report: ComplexityReport) -> str:
    lines = [
        f"parameters={report.total_parameters}",
        f"conv_weight_params={report.conv_weight_params}",
        f"bias_params={report.bias_params}",
        f"norm_params={report.norm_params}",
        f"flops={report.flops}",
        f"gflops={report.gflops:.4f}",
        f"flops_extended={report.flops_extended}",
    ]
    if report.fps is not None:
        lines.append(f"fps={report.fps:.4f}")
    for tag in sorted(report.breakdown):
        b = report.breakdown[tag]
        lines.append(f"breakdown.{tag or 'other'}.params={b['params']}")
        lines.append(f"breakdown.{tag or 'other'}.flops={b['flops']}")
    return "\n".join(lines) + "\n"
