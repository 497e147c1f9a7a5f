"""Declarative model graphs: config parsing, shape inference, seeded forward, complexity.

Config format, one layer per line::

    <id> <Kind> key=value ... inputs=<id>[,<id>...]

``#`` starts a comment. The reserved id ``input`` names the network input;
an optional first line ``input Input c=3 h=640 w=640`` declares it. When
``inputs=`` is omitted a layer reads the previous layer. Any layer may
declare ``c1=`` (its expected input channels), which is checked.
"""
from __future__ import annotations

import hashlib
import zlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import blocks as B
from . import metrics
from . import numerics as nx

INPUT_ID = "input"
HEAD_STRIDES = (8, 16, 32)

# Reference figures for the attention-augmented detector, used only for
# informational comparison lines in complexity reports.
REFERENCE_FIGURES = {
    "parameters": 7.6e6,
    "gflops": 27.8,
    "se_added_params": 19_854,
    "pham_added_params": 126_196,
}
# Soft bands the totals are compared against.
REFERENCE_BANDS = {"parameters": (6.5e6, 8.7e6), "gflops": (24.0, 32.0)}


class GraphError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


# kind -> {key: (type, default)}; a default of ``...`` marks a required key
_SCHEMA = {
    "ConvBlock": {"c2": (int, ...), "k": (int, 1), "s": (int, 1), "g": (int, 1), "act": (str, "silu")},
    "SEConvBlock": {"c2": (int, ...), "k": (int, 1), "s": (int, 1), "r": (int, 16)},
    "C3k2": {"c2": (int, ...), "n": (int, 1), "c3k": (bool, False), "e": (float, 0.5), "shortcut": (bool, True)},
    "SPPF": {"c2": (int, ...), "k": (int, 5)},
    "SimAM": {"lam": (float, 1e-4), "gate": (str, "sigmoid")},
    "PHAM": {"r": (int, 16), "coord_r": (int, 16), "spatial_k": (int, 7)},
    "CARAFE": {"c_mid": (int, 64), "k_up": (int, 5)},
    "NearestUpsample": {"scale": (int, 2)},
    "SCDown": {"c2": (int, ...), "k": (int, 3), "s": (int, 2)},
    "Concat": {},
    "DetectHead": {"nc": (int, 6), "reg_max": (int, 16), "c2": (int, 64), "c3": (int, 128)},
    "ECA": {"k": (int, 3)},
}
KINDS = tuple(_SCHEMA)
# kinds that keep their input's shape and can be dropped without rewiring channels
PASS_THROUGH = ("SimAM", "PHAM", "ECA")


@dataclass(frozen=True)
class LayerSpec:
    id: str
    kind: str
    params: tuple  # sorted (key, value) pairs
    inputs: tuple

    @property
    def p(self) -> dict:
        return dict(self.params)


@dataclass(frozen=True)
class ModelGraph:
    layers: tuple
    input_channels: int = 3
    input_hw: tuple = (640, 640)
    channels: dict = field(default_factory=dict, compare=False)

    @property
    def input_shape(self):
        return (1, self.input_channels) + tuple(self.input_hw)

    @property
    def ids(self):
        return [l.id for l in self.layers]

    def layer(self, layer_id: str) -> LayerSpec:
        for l in self.layers:
            if l.id == layer_id:
                return l
        raise KeyError(layer_id)

    @property
    def detect_ids(self) -> list:
        return [l.id for l in self.layers if l.kind == "DetectHead"]

    @property
    def output_ids(self) -> list:
        return self.detect_ids or [self.layers[-1].id]


# -- parsing -------------------------------------------------------------------


def _convert(layer_id, key, raw, typ):
    try:
        if typ is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0"):
                raise ValueError
            return low in ("true", "1")
        return typ(raw)
    except ValueError:
        raise GraphError(f"layer {layer_id}: {key}={raw!r} is not a valid {typ.__name__}") from None


def _out_channels(kind, p, c_in):
    if kind in ("ConvBlock", "SEConvBlock", "C3k2", "SPPF", "SCDown"):
        return p["c2"]
    if kind == "Concat":
        return sum(c_in)
    if kind == "DetectHead":
        return 4 * p["reg_max"] + p["nc"]
    return c_in[0]


def _check_params(spec: LayerSpec, c1: int):
    """Structural checks that only need channel counts."""
    p, lid = spec.p, spec.id
    if spec.kind in ("ConvBlock", "SEConvBlock", "SCDown", "SPPF", "C3k2"):
        if p["c2"] < 1:
            raise GraphError(f"layer {lid}: c2 must be positive")
    if spec.kind == "ConvBlock":
        if p["act"] not in ("silu", "relu", "none"):
            raise GraphError(f"layer {lid}: act must be silu, relu or none")
        if c1 % p["g"] or p["c2"] % p["g"]:
            raise GraphError(f"layer {lid}: groups {p['g']} must divide {c1} and {p['c2']}")
    if spec.kind == "SEConvBlock" and p["c2"] % p["r"]:
        raise GraphError(f"layer {lid}: SE reduction {p['r']} must divide c2={p['c2']}")
    if spec.kind == "PHAM" and c1 % p["r"]:
        raise GraphError(f"layer {lid}: PHAM reduction {p['r']} must divide {c1}")
    if spec.kind == "SimAM":
        if p["lam"] <= 0:
            raise GraphError(f"layer {lid}: lam must be positive")
        if p["gate"] not in ("sigmoid", "raw"):
            raise GraphError(f"layer {lid}: gate must be sigmoid or raw")
    if spec.kind == "CARAFE" and (p["k_up"] < 3 or p["k_up"] % 2 == 0):
        raise GraphError(f"layer {lid}: k_up must be odd and >= 3")
    if spec.kind == "ECA" and p["k"] % 2 == 0:
        raise GraphError(f"layer {lid}: ECA kernel must be odd")
    if spec.kind == "C3k2" and p["n"] < 1:
        raise GraphError(f"layer {lid}: n must be >= 1")


def parse_graph(text: str) -> ModelGraph:
    """Parse and validate a layer config; errors name the offending layer."""
    in_c, in_hw = 3, (640, 640)
    layers = []
    channels = {}
    seen = set()
    for lineno, raw_line in enumerate(text.splitlines(), 1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) < 2:
            raise GraphError(f"line {lineno}: expected '<id> <kind> key=value ...'")
        lid, kind = tokens[0], tokens[1]
        kv = {}
        for tok in tokens[2:]:
            if "=" not in tok:
                raise GraphError(f"layer {lid}: expected key=value, got {tok!r}")
            k, v = tok.split("=", 1)
            if k in kv:
                raise GraphError(f"layer {lid}: duplicate key {k!r}")
            kv[k] = v
        if lid == INPUT_ID:
            if kind != "Input" or layers:
                raise GraphError(f"line {lineno}: 'input' may only appear first, as 'input Input c=.. h=.. w=..'")
            extra = set(kv) - {"c", "h", "w"}
            if extra:
                raise GraphError(f"layer input: unknown keys {sorted(extra)}")
            in_c = _convert(lid, "c", kv.get("c", "3"), int)
            in_hw = (_convert(lid, "h", kv.get("h", "640"), int), _convert(lid, "w", kv.get("w", "640"), int))
            continue
        if kind not in _SCHEMA:
            raise GraphError(f"layer {lid}: unknown kind {kind!r}; expected one of {', '.join(KINDS)}")
        if lid in seen:
            raise GraphError(f"layer {lid}: duplicate id")
        schema = _SCHEMA[kind]
        inputs_raw = kv.pop("inputs", None)
        c1_raw = kv.pop("c1", None)
        unknown = set(kv) - set(schema)
        if unknown:
            raise GraphError(f"layer {lid}: unknown keys {sorted(unknown)} for {kind}")
        params = {}
        for key, (typ, default) in schema.items():
            if key in kv:
                params[key] = _convert(lid, key, kv[key], typ)
            elif default is ...:
                raise GraphError(f"layer {lid}: {kind} needs {key}=")
            else:
                params[key] = default
        if inputs_raw is None:
            inputs = (layers[-1].id if layers else INPUT_ID,)
        else:
            inputs = tuple(s for s in inputs_raw.split(",") if s)
        for src in inputs:
            if src != INPUT_ID and src not in seen:
                raise GraphError(f"layer {lid}: input {src!r} is not an earlier layer")
        if kind == "Concat":
            if len(inputs) < 2:
                raise GraphError(f"layer {lid}: Concat needs at least 2 inputs")
        elif len(inputs) != 1:
            raise GraphError(f"layer {lid}: {kind} takes exactly 1 input, got {len(inputs)}")
        c_in = [in_c if s == INPUT_ID else channels[s] for s in inputs]
        if c1_raw is not None:
            c1 = _convert(lid, "c1", c1_raw, int)
            if kind != "Concat" and c1 != c_in[0]:
                raise GraphError(f"layer {lid}: channel mismatch, declares c1={c1} but input {inputs[0]} has {c_in[0]}")
            if kind == "Concat" and c1 != sum(c_in):
                raise GraphError(f"layer {lid}: channel mismatch, declares c1={c1} but inputs sum to {sum(c_in)}")
        spec = LayerSpec(lid, kind, tuple(sorted(params.items())), inputs)
        _check_params(spec, c_in[0])
        channels[lid] = _out_channels(kind, params, c_in)
        layers.append(spec)
        seen.add(lid)
    if not layers:
        raise GraphError("no layers")
    n_det = sum(1 for l in layers if l.kind == "DetectHead")
    if n_det not in (0, len(HEAD_STRIDES)):
        raise GraphError(f"a graph needs 0 or {len(HEAD_STRIDES)} DetectHead layers, got {n_det}")
    return ModelGraph(tuple(layers), in_c, in_hw, channels)


def load_graph(path) -> ModelGraph:
    return parse_graph(Path(path).read_text())


def preset_path(name: str) -> Path:
    """Path of a shipped config, e.g. ``cotonet`` or ``yolo11s-baseline``."""
    name = name if name.endswith(".cfg") else name + ".cfg"
    p = resources.files("cotondet") / "configs" / name
    if not p.is_file():
        raise FileNotFoundError(f"no shipped config named {name}")
    return Path(str(p))


def load_preset(name: str) -> ModelGraph:
    return load_graph(preset_path(name))


def format_graph(g: ModelGraph) -> str:
    """Serialise back to config text (inputs always explicit)."""
    lines = [f"input Input c={g.input_channels} h={g.input_hw[0]} w={g.input_hw[1]}"]
    for l in g.layers:
        kv = " ".join(f"{k}={str(v).lower() if isinstance(v, bool) else v}" for k, v in l.params)
        lines.append(" ".join(s for s in (l.id, l.kind, kv, "inputs=" + ",".join(l.inputs)) if s))
    return "\n".join(lines) + "\n"


def remove_kind(g: ModelGraph, kind: str) -> ModelGraph:
    """Drop every pass-through layer of ``kind``, rewiring consumers to its input."""
    if kind not in PASS_THROUGH:
        raise GraphError(f"only pass-through kinds {PASS_THROUGH} can be removed, not {kind}")
    alias = {}
    kept = []
    for l in g.layers:
        inputs = tuple(alias.get(s, s) for s in l.inputs)
        if l.kind == kind:
            alias[l.id] = inputs[0]
            continue
        kept.append(LayerSpec(l.id, l.kind, l.params, inputs))
    return parse_graph(format_graph(ModelGraph(tuple(kept), g.input_channels, g.input_hw)))


# -- shapes --------------------------------------------------------------------


def _conv_hw(h, w, k, s):
    p = k // 2
    return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1


def infer_shapes(g: ModelGraph, input_shape=None) -> dict:
    """Shape of every layer output (and of ``input``) for ``input_shape``."""
    if input_shape is None:
        input_shape = g.input_shape
    n, c, h, w = input_shape
    if c != g.input_channels:
        raise GraphError(f"input has {c} channels, graph expects {g.input_channels}")
    if h % 32 or w % 32 or h <= 0 or w <= 0:
        raise GraphError(f"input size {h}x{w} must be positive and divisible by 32")
    shapes = {INPUT_ID: tuple(input_shape)}
    for l in g.layers:
        ins = [shapes[s] for s in l.inputs]
        n_, c_, h_, w_ = ins[0]
        p = l.p
        if l.kind in ("ConvBlock", "SEConvBlock"):
            ho, wo = _conv_hw(h_, w_, p["k"], p["s"])
            out = (n_, p["c2"], ho, wo)
        elif l.kind == "SCDown":
            if h_ % p["s"] or w_ % p["s"]:
                raise GraphError(f"layer {l.id}: {h_}x{w_} not divisible by stride {p['s']}")
            ho, wo = _conv_hw(h_, w_, p["k"], p["s"])
            out = (n_, p["c2"], ho, wo)
        elif l.kind in ("C3k2", "SPPF"):
            out = (n_, p["c2"], h_, w_)
        elif l.kind in PASS_THROUGH:
            out = ins[0]
        elif l.kind == "CARAFE":
            out = (n_, c_, 2 * h_, 2 * w_)
        elif l.kind == "NearestUpsample":
            out = (n_, c_, p["scale"] * h_, p["scale"] * w_)
        elif l.kind == "Concat":
            for s in ins[1:]:
                if s[0] != n_ or s[2:] != (h_, w_):
                    raise GraphError(f"layer {l.id}: Concat inputs disagree spatially: {ins[0]} vs {s}")
            out = (n_, sum(s[1] for s in ins), h_, w_)
        elif l.kind == "DetectHead":
            out = (n_, 4 * p["reg_max"] + p["nc"], h_, w_)
        else:  # pragma: no cover - kinds are validated at parse time
            raise GraphError(f"layer {l.id}: unknown kind {l.kind}")
        if out[2] <= 0 or out[3] <= 0:
            raise GraphError(f"layer {l.id}: spatial size collapsed to {out[2]}x{out[3]}")
        shapes[l.id] = out
    det = g.detect_ids
    if det:
        strides = tuple(h // shapes[d][2] for d in det)
        if strides != HEAD_STRIDES or any(shapes[d][2] * s != h for d, s in zip(det, strides)):
            raise GraphError(f"detect heads must sit at strides {HEAD_STRIDES}, got {strides}")
    return shapes


# -- weights and forward ---------------------------------------------------------


def layer_rng(seed: int, layer_id: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(layer_id.encode())]))


def _build_layer(l: LayerSpec, c1: int, rng):
    p = l.p
    if l.kind == "ConvBlock":
        act = None if p["act"] == "none" else p["act"]
        return B.ConvBlockParams.random(rng, c1, p["c2"], p["k"], p["s"], p["g"], act)
    if l.kind == "SEConvBlock":
        return B.SEConvBlockParams.random(rng, c1, p["c2"], p["k"], p["s"], p["r"])
    if l.kind == "C3k2":
        return B.C3k2Params.random(rng, c1, p["c2"], p["n"], p["c3k"], p["e"], p["shortcut"])
    if l.kind == "SPPF":
        return B.SPPFParams.random(rng, c1, p["c2"], p["k"])
    if l.kind == "SimAM":
        return B.SimAMParams(p["lam"], p["gate"])
    if l.kind == "PHAM":
        return B.PHAMParams.random(rng, c1, p["r"], p["coord_r"], p["spatial_k"])
    if l.kind == "CARAFE":
        return B.CarafeParams.random(rng, c1, p["c_mid"], p["k_up"])
    if l.kind == "NearestUpsample":
        return B.NearestUpsampleParams(p["scale"])
    if l.kind == "SCDown":
        return B.SCDownParams.random(rng, c1, p["c2"], p["k"], p["s"])
    if l.kind == "Concat":
        return B.ConcatParams()
    if l.kind == "DetectHead":
        return B.DetectHeadParams.random(rng, c1, p["nc"], p["reg_max"], p["c2"], p["c3"])
    if l.kind == "ECA":
        return B.ECAParams.random(rng, p["k"])
    raise GraphError(f"layer {l.id}: unknown kind {l.kind}")  # pragma: no cover


def build_weights(g: ModelGraph, seed: int = 0) -> dict:
    """Seeded block parameters for every layer, keyed by layer id."""
    out = {}
    for l in g.layers:
        c1 = g.input_channels if l.inputs[0] == INPUT_ID else g.channels[l.inputs[0]]
        out[l.id] = _build_layer(l, c1, layer_rng(seed, l.id))
    return out


def forward_all(g: ModelGraph, x, seed: int = 0, weights: dict | None = None) -> dict:
    """Run every layer; returns all intermediate maps keyed by layer id."""
    x = nx.as_feature_map(x)
    shapes = infer_shapes(g, x.shape)
    weights = weights if weights is not None else build_weights(g, seed)
    maps = {INPUT_ID: x}
    for l in g.layers:
        ins = [maps[s] for s in l.inputs]
        y = weights[l.id].forward(*ins)
        if y.shape != shapes[l.id]:
            raise GraphError(f"layer {l.id}: produced {y.shape}, inferred {shapes[l.id]}")
        if not np.all(np.isfinite(y)):
            raise NonFiniteError(f"layer {l.id} ({l.kind}) produced non-finite values")
        maps[l.id] = y
    return maps


def forward(g: ModelGraph, x, seed: int = 0, weights: dict | None = None) -> tuple:
    """Raw head maps (one per detect scale), or the last layer's map for headless graphs."""
    maps = forward_all(g, x, seed, weights)
    return tuple(maps[i] for i in g.output_ids)


def digest(maps) -> str:
    """SHA-256 over the raw bytes and shapes of a sequence of maps."""
    h = hashlib.sha256()
    for m in maps:
        h.update(repr(m.shape).encode())
        h.update(np.ascontiguousarray(m).tobytes())
    return h.hexdigest()


# -- complexity ------------------------------------------------------------------

PLACEMENTS = ("se", "simam", "pham", "carafe", "scdown", "eca")


@dataclass
class GraphComplexity:
    """Totals plus per-layer figures and per-placement deltas.

    ``placements[name]`` holds the parameters and FLOPs contributed by that
    kind of insertion; for SCDown it is the difference against the 3x3
    stride-2 ConvBlock it replaces.
    """

    report: metrics.ComplexityReport
    per_layer: dict
    placements: dict
    notes: list


def _layer_costs(l, params, shapes):
    ins = [shapes[s] for s in l.inputs]
    if l.kind == "Concat":
        return []
    costs = params.costs(ins[0])
    tag = l.id
    out = []
    for c in costs:
        sub = f"{tag}:se" if c.tag == "se" and l.kind == "SEConvBlock" else tag
        out.append(type(c)(**{**c.__dict__, "tag": sub}))
    return out


def complexity(g: ModelGraph, input_hw=None, n_images=None, elapsed=None) -> GraphComplexity:
    """Parameter/FLOP totals at batch 1 with per-layer and per-placement breakdowns."""
    hw = tuple(input_hw) if input_hw is not None else tuple(g.input_hw)
    shapes = infer_shapes(g, (1, g.input_channels) + hw)
    weights = build_weights(g, 0)
    costs = []
    for l in g.layers:
        costs += _layer_costs(l, weights[l.id], shapes)
    report = metrics.complexity(costs, n_images=n_images, elapsed=elapsed)

    per_layer = {}
    for l in g.layers:
        b = report.breakdown.get(l.id, {"params": 0, "flops": 0})
        s = report.breakdown.get(f"{l.id}:se", {"params": 0, "flops": 0})
        per_layer[l.id] = {"params": b["params"] + s["params"], "flops": b["flops"] + s["flops"]}

    placements = {k: {"params": 0, "flops": 0} for k in PLACEMENTS}
    for l in g.layers:
        if l.kind == "SEConvBlock":
            s = report.breakdown.get(f"{l.id}:se", {"params": 0, "flops": 0})
            placements["se"]["params"] += s["params"]
            placements["se"]["flops"] += s["flops"]
        elif l.kind in ("SimAM", "PHAM", "CARAFE", "ECA"):
            key = l.kind.lower()
            placements[key]["params"] += per_layer[l.id]["params"]
            placements[key]["flops"] += per_layer[l.id]["flops"]
        elif l.kind == "SCDown":
            c1 = shapes[l.inputs[0]][1]
            c2 = shapes[l.id][1]
            ho, wo = shapes[l.id][2:]
            conv_params = c1 * 9 * c2 + 2 * c2
            conv_flops = 2 * c1 * 9 * c2 * ho * wo
            placements["scdown"]["params"] += per_layer[l.id]["params"] - conv_params
            placements["scdown"]["flops"] += per_layer[l.id]["flops"] - conv_flops

    return GraphComplexity(report, per_layer, placements, reference_notes(report, placements))


def _band_note(name, value, ref, band):
    lo, hi = band
    inside = lo <= value <= hi
    return f"{name}={value:.4g} reference={ref:.4g} band=[{lo:.4g},{hi:.4g}] {'within' if inside else 'outside'}"


def reference_notes(report: metrics.ComplexityReport, placements: dict) -> list:
    """Informational comparison lines against the reference figures."""
    notes = [
        _band_note("parameters", report.total_parameters, REFERENCE_FIGURES["parameters"], REFERENCE_BANDS["parameters"]),
        _band_note("gflops", report.gflops, REFERENCE_FIGURES["gflops"], REFERENCE_BANDS["gflops"]),
    ]
    for key, ref_key in (("se", "se_added_params"), ("pham", "pham_added_params")):
        got = placements[key]["params"]
        ref = REFERENCE_FIGURES[ref_key]
        status = "match" if got == ref else "mismatch"
        notes.append(f"{key}_added_params={got} reference={ref} {status}")
    return notes
