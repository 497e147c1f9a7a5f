"""Command-line front end.

Exit codes: 0 success, 1 validation error (bad flags, malformed input),
2 I/O error (missing or unreadable files).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import boxloss, data, graph, metrics
from .numerics import backend

log = logging.getLogger("cotondet")

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


# -- eval ----------------------------------------------------------------------


def _read_classes(path):
    if path is None:
        return data.SCHEMA
    names = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    return data.ClassSchema(tuple(names))


def _parse_thresholds(text):
    if text is None:
        return metrics.COCO_THRESHOLDS
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ValueError(f"--iou-thresholds must be comma-separated numbers, got {text!r}") from None


def _parse_file(path, parser, n):
    try:
        return parser(Path(path).read_text(), n)
    except data.LabelFormatError as e:
        raise ValueError(f"{path}: {e}") from None


def load_eval_inputs(pred_dir, gt_dir, num_classes):
    """Detections and ground truths from matching-stem files in two directories.

    Returns (dets, gts, missing_stems): a ground-truth stem without a
    prediction file counts as an image with zero detections.
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"not a directory: {d}")
    gt_files = {p.stem: p for p in sorted(gt_dir.glob("*.txt"))}
    pred_files = {p.stem: p for p in sorted(pred_dir.glob("*.txt"))}
    gts, dets, missing = [], [], []
    for stem, p in gt_files.items():
        for c, b in _parse_file(p, data.parse_labels, num_classes):
            gts.append(metrics.GroundTruthBox(c, b, stem))
        if stem not in pred_files:
            missing.append(stem)
    for stem, p in pred_files.items():
        for c, conf, b in _parse_file(p, data.parse_predictions, num_classes):
            dets.append(metrics.Detection(c, conf, b, stem))
    return dets, gts, missing


def cmd_eval(args, out):
    schema = _read_classes(args.classes)
    thresholds = _parse_thresholds(args.iou_thresholds)
    dets, gts, missing = load_eval_inputs(args.pred, args.gt, len(schema))
    for stem in missing:
        log.warning("no predictions for %s; counted as zero detections", stem)
    report = metrics.map_at(dets, gts, thresholds, num_classes=len(schema))
    out.write(metrics.report_table(report, schema.names))
    out.write(f"images={len(set(g.image_id for g in gts))} missing_predictions={len(missing)} "
              f"TP={report.tp} FP={report.fp} FN={report.fn} conf_threshold={report.conf_threshold:.4f}\n")
    if args.out:
        kv = metrics.report_to_kv(report, schema.names) + f"missing_predictions={len(missing)}\n"
        Path(args.out).write_text(kv)
    return EXIT_OK


# -- flops ---------------------------------------------------------------------


def _load_config(spec):
    p = Path(spec)
    if p.exists():
        return graph.load_graph(p)
    try:
        return graph.load_preset(spec)
    except FileNotFoundError:
        raise FileNotFoundError(f"config not found: {spec}") from None


def cmd_flops(args, out):
    g = _load_config(args.config)
    hw = (args.input_size, args.input_size) if args.input_size else None
    c = graph.complexity(g, hw)
    r = c.report
    lines = metrics.complexity_to_kv(r).splitlines()
    lines = [ln for ln in lines if not ln.startswith("breakdown.")]
    for name, v in c.placements.items():
        lines.append(f"placement.{name}.params={v['params']}")
        lines.append(f"placement.{name}.flops={v['flops']}")
    text = "\n".join(lines) + "\n"
    out.write(text)
    for note in c.notes:
        out.write(f"note: {note}\n")
    if args.out:
        Path(args.out).write_text(text)
    return EXIT_OK


# -- augment -------------------------------------------------------------------


def cmd_augment(args, out):
    if args.spec:
        spec = data.AugmentSpec.from_json(Path(args.spec).read_text())
    else:
        spec = data.AugmentSpec.preset(data.DEFAULT_PRESET)
    if args.seed is not None:
        spec = data.AugmentSpec(spec.variants, args.seed, spec.params, spec.include_original)
    manifest = Path(args.manifest)
    if not manifest.is_file():
        raise FileNotFoundError(f"manifest not found: {manifest}")
    summary = data.augment_dataset(manifest, spec, args.out, workers=args.workers)
    out.write(f"written={summary.written} skipped={summary.skipped} manifest={Path(args.out) / 'manifest.txt'}\n")
    return EXIT_OK


# -- forward-check -------------------------------------------------------------


def cmd_forward_check(args, out):
    g = _load_config(args.config)
    size = args.input_size or g.input_hw[0]
    shape = (args.batch, g.input_channels, size, size)
    x = np.random.default_rng(np.random.SeedSequence([args.seed, 1])).uniform(0.0, 1.0, shape)
    maps = graph.forward_all(g, x, seed=args.seed)
    width = max(len(i) for i in maps)
    out.write(f"{'layer':<{width}}  {'kind':<16}  shape\n")
    out.write(f"{'input':<{width}}  {'Input':<16}  {'x'.join(map(str, shape))}\n")
    for l in g.layers:
        out.write(f"{l.id:<{width}}  {l.kind:<16}  {'x'.join(map(str, maps[l.id].shape))}\n")
    heads = [maps[i] for i in g.output_ids]
    out.write(f"outputs={','.join(g.output_ids)}\n")
    out.write(f"digest={graph.digest(heads)}\n")
    return EXIT_OK


# -- losses --------------------------------------------------------------------


def parse_pairs(text):
    """Lines of 8 numbers: predicted cx cy w h, then ground-truth cx cy w h."""
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 8:
            raise ValueError(f"line {lineno}: expected 8 numbers (pred cx cy w h, gt cx cy w h), got {len(parts)}")
        try:
            vals = [float(v) for v in parts]
            pairs.append((boxloss.BBox(*vals[:4]), boxloss.BBox(*vals[4:])))
        except ValueError as e:
            raise ValueError(f"line {lineno}: {e}") from None
    return pairs


def cmd_losses(args, out):
    pairs = parse_pairs(Path(args.pairs).read_text())
    cfg = boxloss.SIoUConfig(args.theta)
    fns = {
        "iou": boxloss.iou_loss,
        "giou": boxloss.giou_loss,
        "diou": boxloss.diou_loss,
        "ciou": boxloss.ciou_loss,
        "siou": lambda b, g: boxloss.siou_loss(b, g, cfg),
    }
    out.write(f"{'pair':>4}  {'IoU':>8}  " + "  ".join(f"{n.upper() + ' loss':>10}" for n in fns) + f"  {'grad_err':>9}\n")
    for k, (b, g) in enumerate(pairs):
        vals = [fn(b, g).value for fn in fns.values()]
        if boxloss.near_singular(b, g):
            err = "singular"
        else:
            err = f"{max(boxloss.check_gradient(fn, b, g) for fn in fns.values()):.2e}"
        out.write(f"{k:>4}  {boxloss.iou(b, g):8.6f}  " + "  ".join(f"{v:10.6f}" for v in vals) + f"  {err:>9}\n")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------


def build_parser():
    p = _Parser(prog="cotondet", description="Detector evaluation, complexity and augmentation toolkit.")
    p.add_argument("--backend", choices=backend.available(), help="convolution kernel backend")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("eval", help="evaluate prediction files against ground truth")
    e.add_argument("--pred", required=True, help="directory of '<stem>.txt' prediction files")
    e.add_argument("--gt", required=True, help="directory of '<stem>.txt' label files")
    e.add_argument("--classes", help="class names, one per line (default: the built-in schema)")
    e.add_argument("--iou-thresholds", help="comma-separated IoU thresholds for mAP50-95")
    e.add_argument("--out", help="write a key=value report here")
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("flops", help="parameter and FLOP counts for a config")
    f.add_argument("--config", required=True, help="config file or shipped preset name")
    f.add_argument("--input-size", type=int, help="square input size (default: config's)")
    f.add_argument("--out", help="write the key=value figures here")
    f.set_defaults(func=cmd_flops)

    a = sub.add_parser("augment", help="augment a dataset listed in a manifest")
    a.add_argument("--manifest", required=True)
    a.add_argument("--spec", help="JSON augmentation spec (default: rotation+flipping preset)")
    a.add_argument("--out", required=True, help="output directory")
    a.add_argument("--seed", type=int, help="override the spec's seed")
    a.add_argument("--workers", type=int, default=1)
    a.set_defaults(func=cmd_augment)

    c = sub.add_parser("forward-check", help="seeded forward pass with a shape table and output digest")
    c.add_argument("--config", required=True, help="config file or shipped preset name")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--input-size", type=int)
    c.add_argument("--batch", type=int, default=1)
    c.set_defaults(func=cmd_forward_check)

    l = sub.add_parser("losses", help="IoU-family losses for box pairs with a gradient check")
    l.add_argument("--pairs", required=True, help="file of 'cx cy w h gcx gcy gw gh' lines")
    l.add_argument("--theta", type=float, default=4.0, help="SIoU shape-cost exponent")
    l.set_defaults(func=cmd_losses)
    return p


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        if args.backend:
            with backend.use(args.backend):
                return args.func(args, out)
        return args.func(args, out)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
