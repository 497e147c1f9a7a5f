"""Class schema, YOLO label I/O, manifests and seeded augmentation.

Augmentation randomness comes from a counter-based generator keyed by
(seed, image id, variant index, op index), so every image is processed
independently of the others and of execution order.
"""
from __future__ import annotations

import json
import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from itertools import product
from pathlib import Path
from typing import Sequence

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from PIL import Image, ImageOps

from .boxloss import BBox

log = logging.getLogger(__name__)

CLASS_NAMES = ("Ripe Boll", "Open Boll", "Square", "Fertilised Flower", "Early Flower", "Bracts")


@dataclass(frozen=True)
class ClassSchema:
    names: tuple = CLASS_NAMES

    def __post_init__(self):
        if len(self.names) != 6 or len(set(self.names)) != 6:
            raise ValueError(f"class schema needs exactly 6 distinct names, got {self.names}")

    def __len__(self):
        return len(self.names)

    def name_of(self, class_id: int) -> str:
        if not 0 <= class_id < len(self.names):
            raise ValueError(f"class id {class_id} outside 0..{len(self.names) - 1}")
        return self.names[class_id]

    def id_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValueError(f"unknown class name {name!r}") from None


SCHEMA = ClassSchema()


class LabelFormatError(ValueError):
    pass


# -- label files ---------------------------------------------------------------

_BOX_FIELDS = ("cx", "cy", "w", "h")


def _parse_box_fields(parts, lineno):
    vals = []
    for name, raw in zip(_BOX_FIELDS, parts):
        try:
            v = float(raw)
        except ValueError:
            raise LabelFormatError(f"line {lineno}: field '{name}' is not a number: {raw!r}") from None
        lo_ok = v > 0 if name in ("w", "h") else v >= 0
        if not (lo_ok and v <= 1):
            raise LabelFormatError(f"line {lineno}: field '{name}' out of range: {raw}")
        vals.append(v)
    return BBox(*vals)


def _parse_class(raw, lineno, num_classes):
    try:
        c = int(raw)
    except ValueError:
        raise LabelFormatError(f"line {lineno}: field 'class' is not an integer: {raw!r}") from None
    if not 0 <= c < num_classes:
        raise LabelFormatError(f"line {lineno}: field 'class' out of range: {c}")
    return c


def parse_labels(text: str, num_classes: int = 6) -> list:
    """Parse YOLO ``class cx cy w h`` lines into (class_id, BBox) pairs. Blank lines are skipped."""
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 5:
            raise LabelFormatError(f"line {lineno}: expected 5 fields 'class cx cy w h', got {len(parts)}")
        out.append((_parse_class(parts[0], lineno, num_classes), _parse_box_fields(parts[1:], lineno)))
    return out


def write_labels(labels: Sequence) -> str:
    return "".join(f"{c} {b.cx:.6f} {b.cy:.6f} {b.w:.6f} {b.h:.6f}\n" for c, b in labels)


def parse_predictions(text: str, num_classes: int = 6) -> list:
    """Parse ``class confidence cx cy w h`` lines into (class_id, confidence, BBox)."""
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 6:
            raise LabelFormatError(f"line {lineno}: expected 6 fields 'class confidence cx cy w h', got {len(parts)}")
        c = _parse_class(parts[0], lineno, num_classes)
        try:
            conf = float(parts[1])
        except ValueError:
            raise LabelFormatError(f"line {lineno}: field 'confidence' is not a number: {parts[1]!r}") from None
        if not 0 <= conf <= 1:
            raise LabelFormatError(f"line {lineno}: field 'confidence' out of range: {parts[1]}")
        out.append((c, conf, _parse_box_fields(parts[2:], lineno)))
    return out


# -- images --------------------------------------------------------------------


@dataclass
class LabeledImage:
    image_id: str
    pixels: np.ndarray  # (H, W, 3) uint8
    labels: list = field(default_factory=list)

    def __post_init__(self):
        p = self.pixels
        if p.dtype != np.uint8 or p.ndim != 3 or p.shape[2] != 3:
            raise ValueError(f"pixels must be an (H, W, 3) uint8 array, got {p.dtype} {p.shape}")
        for c, b in self.labels:
            if not 0 <= c < len(SCHEMA):
                raise ValueError(f"label class {c} outside schema")
            if not all(0 <= v <= 1 for v in b.as_tuple()):
                raise ValueError(f"label box {b} outside [0,1]")

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


def label_path_for(image_path: Path) -> Path:
    """YOLO convention: ``.../images/x.png`` -> ``.../labels/x.txt``, else a sibling ``x.txt``."""
    image_path = Path(image_path)
    if image_path.parent.name == "images":
        return image_path.parent.parent / "labels" / (image_path.stem + ".txt")
    return image_path.with_suffix(".txt")


def load_labeled_image(image_path, label_path=None) -> LabeledImage:
    image_path = Path(image_path)
    with Image.open(image_path) as im:
        pixels = np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    label_path = Path(label_path) if label_path is not None else label_path_for(image_path)
    labels = parse_labels(label_path.read_text()) if label_path.exists() else []
    return LabeledImage(image_path.stem, pixels, labels)


def save_png(pixels: np.ndarray, path) -> None:
    Image.fromarray(pixels, "RGB").save(path, format="PNG")


# -- geometric ops -------------------------------------------------------------


def _clamp01(v):
    return min(1.0, max(0.0, v))


def _map_labels(labels, fn):
    return [(c, BBox(*fn(b))) for c, b in labels]


def flip_h(img: LabeledImage) -> LabeledImage:
    return replace(
        img,
        pixels=np.ascontiguousarray(img.pixels[:, ::-1]),
        labels=_map_labels(img.labels, lambda b: (1 - b.cx, b.cy, b.w, b.h)),
    )


def flip_v(img: LabeledImage) -> LabeledImage:
    return replace(
        img,
        pixels=np.ascontiguousarray(img.pixels[::-1]),
        labels=_map_labels(img.labels, lambda b: (b.cx, 1 - b.cy, b.w, b.h)),
    )


def rotate90(img: LabeledImage) -> LabeledImage:
    """Quarter turn clockwise."""
    return replace(
        img,
        pixels=np.ascontiguousarray(np.rot90(img.pixels, k=-1)),
        labels=_map_labels(img.labels, lambda b: (1 - b.cy, b.cx, b.h, b.w)),
    )


def rotate180(img: LabeledImage) -> LabeledImage:
    return replace(
        img,
        pixels=np.ascontiguousarray(img.pixels[::-1, ::-1]),
        labels=_map_labels(img.labels, lambda b: (1 - b.cx, 1 - b.cy, b.w, b.h)),
    )


def rotate270(img: LabeledImage) -> LabeledImage:
    """Quarter turn counter-clockwise (three clockwise turns)."""
    return replace(
        img,
        pixels=np.ascontiguousarray(np.rot90(img.pixels, k=1)),
        labels=_map_labels(img.labels, lambda b: (b.cy, 1 - b.cx, b.h, b.w)),
    )


@dataclass(frozen=True)
class AugmentParams:
    """Ranges for the random ops; every pair is an inclusive (low, high)."""

    crop_fraction: tuple = (0.6, 0.9)
    crop_min_retained: float = 0.3
    occlusion_count: tuple = (1, 3)
    occlusion_fraction: tuple = (0.05, 0.2)
    occlusion_fill: int = 128
    brightness: tuple = (-32.0, 32.0)
    contrast: tuple = (0.8, 1.2)
    hue_degrees: tuple = (-18.0, 18.0)
    saturation: tuple = (0.7, 1.3)
    gamma: tuple = (0.7, 1.5)

    def __post_init__(self):
        lo, hi = self.crop_fraction
        if not 0 < lo <= hi <= 1:
            raise ValueError(f"crop_fraction must satisfy 0 < low <= high <= 1, got {self.crop_fraction}")
        if not 0 <= self.crop_min_retained <= 1:
            raise ValueError("crop_min_retained must lie in [0,1]")
        if not 0 <= self.occlusion_fill <= 255:
            raise ValueError("occlusion_fill must be an 8-bit value")
        for name in ("occlusion_count", "occlusion_fraction", "brightness", "contrast", "hue_degrees", "saturation", "gamma"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: low {lo} exceeds high {hi}")
        if self.gamma[0] <= 0 or self.contrast[0] < 0 or self.saturation[0] < 0:
            raise ValueError("gamma must be positive; contrast and saturation non-negative")


def random_crop(img: LabeledImage, rng, params: AugmentParams = AugmentParams()) -> LabeledImage:
    """Crop a random window; keep boxes retaining at least ``crop_min_retained`` of their area."""
    h, w = img.height, img.width
    ch = max(1, int(round(h * rng.uniform(*params.crop_fraction))))
    cw = max(1, int(round(w * rng.uniform(*params.crop_fraction))))
    y0 = int(rng.integers(0, h - ch + 1))
    x0 = int(rng.integers(0, w - cw + 1))
    labels = []
    for c, b in img.labels:
        bx1, bx2 = (b.cx - b.w / 2) * w, (b.cx + b.w / 2) * w
        by1, by2 = (b.cy - b.h / 2) * h, (b.cy + b.h / 2) * h
        nx1, nx2 = max(bx1, x0), min(bx2, x0 + cw)
        ny1, ny2 = max(by1, y0), min(by2, y0 + ch)
        if nx2 <= nx1 or ny2 <= ny1:
            continue
        kept = (nx2 - nx1) * (ny2 - ny1) / ((bx2 - bx1) * (by2 - by1))
        if kept < params.crop_min_retained:
            continue
        box = BBox(
            _clamp01(((nx1 + nx2) / 2 - x0) / cw),
            _clamp01(((ny1 + ny2) / 2 - y0) / ch),
            min(1.0, (nx2 - nx1) / cw),
            min(1.0, (ny2 - ny1) / ch),
        )
        labels.append((c, box))
    pixels = np.ascontiguousarray(img.pixels[y0 : y0 + ch, x0 : x0 + cw])
    return replace(img, pixels=pixels, labels=labels)


def random_occlusion(img: LabeledImage, rng, params: AugmentParams = AugmentParams()) -> LabeledImage:
    """Fill a few random rectangles with a flat gray; labels are kept as they are."""
    h, w = img.height, img.width
    pixels = img.pixels.copy()
    n = int(rng.integers(params.occlusion_count[0], params.occlusion_count[1] + 1))
    for _ in range(n):
        oh = max(1, int(round(h * rng.uniform(*params.occlusion_fraction))))
        ow = max(1, int(round(w * rng.uniform(*params.occlusion_fraction))))
        y0 = int(rng.integers(0, h - oh + 1))
        x0 = int(rng.integers(0, w - ow + 1))
        pixels[y0 : y0 + oh, x0 : x0 + ow] = params.occlusion_fill
    return replace(img, pixels=pixels, labels=list(img.labels))


# -- photometric ops -----------------------------------------------------------


def _to_u8(x):
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def adjust_brightness_contrast(pixels, brightness=0.0, contrast=1.0) -> np.ndarray:
    """``contrast * p + brightness`` per channel, clamped to [0, 255]."""
    if brightness == 0 and contrast == 1:
        return pixels.copy()
    return _to_u8(contrast * pixels.astype(np.float64) + brightness)


def adjust_hue_saturation(pixels, hue_degrees=0.0, saturation=1.0) -> np.ndarray:
    """Rotate hue (degrees) and scale saturation through an HSV round trip."""
    hsv = rgb_to_hsv(pixels.astype(np.float64) / 255.0)
    hsv[..., 0] = np.mod(hsv[..., 0] + hue_degrees / 360.0, 1.0)
    hsv[..., 1] = np.clip(hsv[..., 1] * saturation, 0.0, 1.0)
    return _to_u8(hsv_to_rgb(hsv) * 255.0)


def adjust_gamma(pixels, gamma=1.0) -> np.ndarray:
    """Power curve on values normalised to [0, 1]; 0 and 255 are fixed points."""
    lut = _to_u8(255.0 * (np.arange(256) / 255.0) ** gamma)
    return lut[pixels]


def hist_equalize(pixels) -> np.ndarray:
    """Equalise the luminance channel, leaving chroma untouched."""
    y, cb, cr = Image.fromarray(pixels, "RGB").convert("YCbCr").split()
    merged = Image.merge("YCbCr", (ImageOps.equalize(y), cb, cr))
    return np.asarray(merged.convert("RGB"), dtype=np.uint8).copy()


def color_enhance(img: LabeledImage, rng, params: AugmentParams = AugmentParams()) -> LabeledImage:
    b = rng.uniform(*params.brightness)
    c = rng.uniform(*params.contrast)
    hue = rng.uniform(*params.hue_degrees)
    s = rng.uniform(*params.saturation)
    g = rng.uniform(*params.gamma)
    p = adjust_brightness_contrast(img.pixels, b, c)
    p = adjust_hue_saturation(p, hue, s)
    p = adjust_gamma(p, g)
    return replace(img, pixels=p, labels=list(img.labels))


GEOMETRIC_OPS = {
    "rotate90": rotate90,
    "rotate180": rotate180,
    "rotate270": rotate270,
    "flip_h": flip_h,
    "flip_v": flip_v,
    "random_crop": random_crop,
    "random_occlusion": random_occlusion,
}
PHOTOMETRIC_OPS = ("color_enhance", "hist_equalize")
OPS = tuple(GEOMETRIC_OPS) + tuple(PHOTOMETRIC_OPS)
_RANDOM_OPS = {"random_crop", "random_occlusion", "color_enhance"}


def apply_geometric(img: LabeledImage, op: str, rng=None, params: AugmentParams = AugmentParams()) -> LabeledImage:
    if op not in GEOMETRIC_OPS:
        raise ValueError(f"unknown geometric op {op!r}")
    if op in _RANDOM_OPS:
        if rng is None:
            raise ValueError(f"{op} needs a random generator")
        return GEOMETRIC_OPS[op](img, rng, params)
    return GEOMETRIC_OPS[op](img)


def apply_photometric(img: LabeledImage, op: str, rng=None, params: AugmentParams = AugmentParams()) -> LabeledImage:
    if op == "hist_equalize":
        return replace(img, pixels=hist_equalize(img.pixels), labels=list(img.labels))
    if op == "color_enhance":
        if rng is None:
            raise ValueError("color_enhance needs a random generator")
        return color_enhance(img, rng, params)
    raise ValueError(f"unknown photometric op {op!r}")


def apply_op(img, op, rng=None, params: AugmentParams = AugmentParams()) -> LabeledImage:
    if op in GEOMETRIC_OPS:
        return apply_geometric(img, op, rng, params)
    return apply_photometric(img, op, rng, params)


def op_rng(seed: int, image_id: str, variant: int, op_index: int) -> np.random.Generator:
    """Counter-based generator for one (image, variant, op) slot."""
    key = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(image_id.encode()), variant, op_index])
    return np.random.Generator(np.random.Philox(key))


# -- augmentation specs --------------------------------------------------------

PRESETS = {
    "rotation": [["rotate90"], ["rotate180"], ["rotate270"]],
    "flipping": [["flip_h"], ["flip_v"]],
    "rotation+flipping": [list(p) for p in product(["rotate90", "rotate180", "rotate270"], ["flip_h", "flip_v"])],
    "cropping": [["random_crop"]],
    "occlusion": [["random_occlusion"]],
    "color_enhance": [["color_enhance"]],
    "hist_equalize": [["hist_equalize"]],
}
DEFAULT_PRESET = "rotation+flipping"


@dataclass(frozen=True)
class AugmentSpec:
    """Variants to emit per image; each variant is an op chain applied left to right."""

    variants: tuple = tuple(tuple(v) for v in PRESETS[DEFAULT_PRESET])
    seed: int = 0
    params: AugmentParams = AugmentParams()
    include_original: bool = True

    def __post_init__(self):
        if not self.variants:
            raise ValueError("augment spec needs at least one variant")
        for chain in self.variants:
            if not chain:
                raise ValueError("empty op chain in augment spec")
            for op in chain:
                if op not in OPS:
                    raise ValueError(f"unknown augmentation op {op!r}; choose from {', '.join(OPS)}")

    @classmethod
    def preset(cls, name: str = DEFAULT_PRESET, seed: int = 0, **kw):
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
        return cls(tuple(tuple(v) for v in PRESETS[name]), seed, **kw)

    @classmethod
    def from_dict(cls, d: dict):
        """Build from ``{"preset"|"variants"|"product": ..., "seed": ..., "params": {...}}``."""
        known = {"preset", "variants", "product", "seed", "params", "include_original"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown augment spec keys: {sorted(unknown)}")
        given = [k for k in ("preset", "variants", "product") if k in d]
        if len(given) > 1:
            raise ValueError(f"give only one of preset/variants/product, got {given}")
        if "variants" in d:
            variants = tuple(tuple([v] if isinstance(v, str) else v) for v in d["variants"])
        elif "product" in d:
            variants = tuple(tuple(p) for p in product(*d["product"]))
        else:
            name = d.get("preset", DEFAULT_PRESET)
            if name not in PRESETS:
                raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
            variants = tuple(tuple(v) for v in PRESETS[name])
        params = d.get("params", {})
        try:
            params = AugmentParams(**{k: tuple(v) if isinstance(v, list) else v for k, v in params.items()})
        except TypeError as e:
            raise ValueError(f"bad augment params: {e}") from None
        return cls(variants, int(d.get("seed", 0)), params, bool(d.get("include_original", True)))

    @classmethod
    def from_json(cls, text: str):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ValueError(f"augment spec is not valid JSON: {e}") from None
        if not isinstance(d, dict):
            raise ValueError("augment spec must be a JSON object")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return {
            "variants": [list(v) for v in self.variants],
            "seed": self.seed,
            "params": asdict(self.params),
            "include_original": self.include_original,
        }


def augment_image(img: LabeledImage, spec: AugmentSpec) -> list:
    """(suffix, LabeledImage) for each variant of one image, in spec order."""
    out = []
    for v, chain in enumerate(spec.variants):
        cur = img
        for k, op in enumerate(chain):
            rng = op_rng(spec.seed, img.image_id, v, k) if op in _RANDOM_OPS else None
            cur = apply_op(cur, op, rng, spec.params)
        out.append(("_".join(chain), cur))
    return out


# -- manifests -----------------------------------------------------------------

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ManifestEntry:
    image: str
    split: str = "train"


def parse_manifest(text: str) -> list:
    """Lines ``<image path> [split]``; ``#`` starts a comment."""
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) > 2:
            raise ValueError(f"manifest line {lineno}: expected '<image> [split]', got {line!r}")
        split = parts[1] if len(parts) == 2 else "train"
        if split not in SPLITS:
            raise ValueError(f"manifest line {lineno}: split must be one of {SPLITS}, got {split!r}")
        out.append(ManifestEntry(parts[0], split))
    return out


def write_manifest(entries: Sequence[ManifestEntry]) -> str:
    return "".join(f"{e.image} {e.split}\n" for e in entries)


@dataclass
class AugmentSummary:
    entries: list
    written: int = 0
    skipped: int = 0
    skipped_images: list = field(default_factory=list)


def _process(entry, base, out_dir, spec):
    src = Path(entry.image)
    if not src.is_absolute():
        src = base / src
    try:
        img = load_labeled_image(src)
    except (OSError, ValueError) as e:
        log.warning("skipping %s: %s", src, e)
        return None, str(src)
    results = []
    if spec.include_original:
        results.append((img.image_id, img))
    for suffix, aug in augment_image(img, spec):
        results.append((f"{img.image_id}_{suffix}", aug))
    written = []
    for stem, item in results:
        save_png(item.pixels, out_dir / "images" / f"{stem}.png")
        (out_dir / "labels" / f"{stem}.txt").write_text(write_labels(item.labels))
        written.append(ManifestEntry(f"images/{stem}.png", entry.split))
    return written, None


def augment_dataset(manifest_path, spec: AugmentSpec, out_dir, workers: int = 1) -> AugmentSummary:
    """Augment every image listed in ``manifest_path`` into ``out_dir``.

    Writes ``images/``, ``labels/`` and ``manifest.txt`` under ``out_dir``.
    Unreadable images are skipped with a logged warning and counted.
    Output is identical for any ``workers`` value.
    """
    manifest_path = Path(manifest_path)
    entries = parse_manifest(manifest_path.read_text())
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "labels").mkdir(parents=True, exist_ok=True)
    base = manifest_path.parent
    stems = [Path(e.image).stem for e in entries]
    dupes = sorted({s for s in stems if stems.count(s) > 1})
    if dupes:
        raise ValueError(f"manifest lists several images with the same stem: {dupes}")
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda e: _process(e, base, out_dir, spec), entries))
    else:
        results = [_process(e, base, out_dir, spec) for e in entries]
    summary = AugmentSummary([])
    for written, failed in results:
        if failed is not None:
            summary.skipped += 1
            summary.skipped_images.append(failed)
            continue
        summary.entries.extend(written)
        summary.written += len(written)
    (out_dir / "manifest.txt").write_text(write_manifest(summary.entries))
    return summary
