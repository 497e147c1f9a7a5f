import numpy as np
import pytest

from cotondet import blocks as B
from cotondet import graph as G
from cotondet import metrics as M

TOY = """
input Input c=3 h=64 w=64
0 ConvBlock c2=16 k=3 s=2
1 SimAM
2 SCDown c2=32 k=3 s=2
"""


def small_detector(extra=""):
    """Tiny three-scale detector; channel counts keep every reduction valid."""
    return f"""
input Input c=3 h=64 w=64
0  ConvBlock  c2=16 k=3 s=2
1  SEConvBlock c2=16 k=3 s=2 r=4
2  C3k2       c2=16 n=1 e=0.25
2a SimAM
3  ConvBlock  c2=32 k=3 s=2
4  C3k2       c2=32 c3k=true
5  ConvBlock  c2=32 k=3 s=2
6  C3k2       c2=32
7  ConvBlock  c2=64 k=3 s=2
8  SPPF       c2=64
9  CARAFE     c_mid=8 k_up=3
10 Concat     inputs=9,6
10a PHAM      r=16 coord_r=16
11 C3k2       c2=32
12 NearestUpsample
13 Concat     inputs=12,4
14 C3k2       c2=32
15 SCDown     c2=32
16 Concat     inputs=15,11
17 C3k2       c2=32
18 ConvBlock  c2=64 k=3 s=2
19 Concat     inputs=18,8
20 ECA        k=3
21 C3k2       c2=64
{extra}
30 DetectHead c2=16 c3=16 inputs=14
31 DetectHead c2=16 c3=16 inputs=17
32 DetectHead c2=16 c3=16 inputs=21
"""


# -- parsing -----------------------------------------------------------------


def test_empty_config_errors():
    with pytest.raises(G.GraphError, match="no layers"):
        G.parse_graph("# nothing\n\n")


def test_channel_mismatch_names_layer():
    text = "0 ConvBlock c2=16 k=3\n1 ConvBlock c1=32 c2=8 k=3\n"
    with pytest.raises(G.GraphError, match="layer 1: channel mismatch"):
        G.parse_graph(text)


@pytest.mark.parametrize(
    "text,needle",
    [
        ("0 Conv c2=4\n", "layer 0: unknown kind"),
        ("0 ConvBlock c2=4 inputs=5\n", "layer 0: input '5'"),
        ("0 ConvBlock k=3\n", "layer 0: ConvBlock needs c2"),
        ("0 ConvBlock c2=4 q=1\n", "layer 0: unknown keys"),
        ("0 ConvBlock c2=4\n0 SimAM\n", "layer 0: duplicate id"),
        ("0 ConvBlock c2=4\n1 Concat inputs=0\n", "layer 1: Concat needs at least 2"),
        ("0 ConvBlock c2=x\n", "layer 0: c2='x'"),
        ("0 SEConvBlock c2=12 r=8\n", "layer 0: SE reduction"),
        ("0 ConvBlock c2=4\n1 DetectHead\n", "0 or 3 DetectHead"),
        ("0 ConvBlock c2=4 inputs=input,input\n", "exactly 1 input"),
    ],
)
def test_parse_errors(text, needle):
    with pytest.raises(G.GraphError, match=needle):
        G.parse_graph(text)


def test_default_inputs_chain_previous_layer():
    g = G.parse_graph(TOY)
    assert [l.inputs for l in g.layers] == [("input",), ("0",), ("1",)]
    assert g.input_hw == (64, 64)


def test_format_round_trip():
    for name in ("cotonet", "yolo11s-baseline"):
        g = G.load_preset(name)
        assert G.parse_graph(G.format_graph(g)) == g


def test_presets_differ_only_at_substitution_points():
    base = G.load_preset("yolo11s-baseline")
    cot = G.load_preset("cotonet")
    base_kinds = {l.id: l.kind for l in base.layers}
    cot_kinds = {l.id: l.kind for l in cot.layers}
    changed = {i: (base_kinds[i], cot_kinds[i]) for i in base_kinds if base_kinds[i] != cot_kinds[i]}
    assert changed == {
        **{i: ("ConvBlock", "SEConvBlock") for i in ("0", "1", "3", "5", "7")},
        "11": ("NearestUpsample", "CARAFE"),
        "14": ("NearestUpsample", "CARAFE"),
        "17": ("ConvBlock", "SCDown"),
        "20": ("ConvBlock", "SCDown"),
    }
    inserted = {i: k for i, k in cot_kinds.items() if i not in base_kinds}
    assert inserted == {
        "2a": "SimAM", "4a": "SimAM", "6a": "SimAM", "8a": "SimAM",
        "12a": "PHAM", "15a": "PHAM", "18a": "PHAM", "21a": "PHAM",
    }
    assert set(base_kinds) <= set(cot_kinds)
    # SimAM follows every backbone C3k2; PHAM feeds every neck C3k2
    for i in ("2", "4", "6", "8"):
        assert cot.layer(i + "a").inputs == (i,)
    for pham, c3k2 in (("12a", "13"), ("15a", "16"), ("18a", "19"), ("21a", "22")):
        assert cot.layer(c3k2).inputs == (pham,)
    # removing the inserted pass-through layers restores the baseline wiring
    stripped = G.remove_kind(G.remove_kind(cot, "SimAM"), "PHAM")
    for l in stripped.layers:
        assert l.inputs == base.layer(l.id).inputs


# -- shapes ------------------------------------------------------------------


def test_cotonet_head_scales_at_640():
    g = G.load_preset("cotonet")
    shapes = G.infer_shapes(g, (1, 3, 640, 640))
    assert [shapes[i][2:] for i in g.detect_ids] == [(80, 80), (40, 40), (20, 20)]
    assert all(shapes[i][1] == 70 for i in g.detect_ids)


def test_toy_hand_shape_trace():
    shapes = G.infer_shapes(G.parse_graph(TOY), (1, 3, 64, 64))
    assert shapes == {"input": (1, 3, 64, 64), "0": (1, 16, 32, 32), "1": (1, 16, 32, 32), "2": (1, 32, 16, 16)}


def test_indivisible_input_rejected():
    with pytest.raises(G.GraphError, match="divisible by 32"):
        G.infer_shapes(G.load_preset("cotonet"), (1, 3, 100, 100))
    with pytest.raises(G.GraphError, match="channels"):
        G.infer_shapes(G.load_preset("cotonet"), (1, 4, 640, 640))


def test_heads_must_sit_at_standard_strides():
    text = small_detector().replace("inputs=14\n", "inputs=17\n", 1)
    with pytest.raises(G.GraphError, match="strides"):
        G.infer_shapes(G.parse_graph(text))


# -- forward -----------------------------------------------------------------


def test_small_detector_forward_matches_inferred_shapes(rng):
    g = G.parse_graph(small_detector())
    x = rng.uniform(0, 1, (2, 3, 64, 64))
    maps = G.forward_all(g, x, seed=5)
    shapes = G.infer_shapes(g, x.shape)
    for lid, m in maps.items():
        assert m.shape == shapes[lid]
    heads = G.forward(g, x, seed=5)
    assert [h.shape for h in heads] == [(2, 70, 8, 8), (2, 70, 4, 4), (2, 70, 2, 2)]
    again = G.forward(g, x, seed=5)
    assert G.digest(heads) == G.digest(again)
    assert G.digest(heads) != G.digest(G.forward(g, x, seed=6))


def test_headless_graph_returns_last_map(rng):
    g = G.parse_graph(TOY)
    (out,) = G.forward(g, rng.uniform(0, 1, (1, 3, 64, 64)))
    assert out.shape == (1, 32, 16, 16)


@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_nonfinite_error_names_layer():
    g = G.parse_graph(TOY)
    w = G.build_weights(g, 0)
    bad = B.ConvBlockParams(w["0"].conv, w["0"].bn, act="silu")
    bad.conv.weight[...] = np.inf
    with pytest.raises(G.NonFiniteError, match="layer 0"):
        G.forward(g, np.ones((1, 3, 64, 64)), weights={**w, "0": bad})


def test_weights_keyed_by_layer_id():
    g = G.parse_graph(TOY)
    a, b = G.build_weights(g, 1), G.build_weights(g, 1)
    assert np.array_equal(a["0"].conv.weight, b["0"].conv.weight)
    assert not np.array_equal(a["0"].conv.weight, G.build_weights(g, 2)["0"].conv.weight)


def test_random_valid_configs_forward_matches_inference():
    rng = np.random.default_rng(21)
    kinds = ["ConvBlock", "SEConvBlock", "C3k2", "SimAM", "PHAM", "ECA", "CARAFE", "SCDown", "SPPF"]
    for trial in range(8):
        lines = ["input Input c=3 h=32 w=32", "0 ConvBlock c2=16 k=3"]
        for i in range(1, 6):
            kind = kinds[int(rng.integers(len(kinds)))]
            if kind in ("ConvBlock", "SEConvBlock"):
                lines.append(f"{i} {kind} c2=16 k={int(rng.choice([1, 3]))} s=1" + (" r=4" if kind == "SEConvBlock" else ""))
            elif kind == "C3k2":
                lines.append(f"{i} C3k2 c2=16 c3k={'true' if rng.random() < 0.5 else 'false'}")
            elif kind == "CARAFE":
                lines.append(f"{i} CARAFE c_mid=8 k_up=3")
                lines.append(f"{i}b SCDown c2=16")
            elif kind == "SCDown":
                lines.append(f"{i} NearestUpsample")
                lines.append(f"{i}b SCDown c2=16")
            elif kind == "PHAM":
                lines.append(f"{i} PHAM r=4 coord_r=4")
            elif kind == "SPPF":
                lines.append(f"{i} SPPF c2=16")
            else:
                lines.append(f"{i} {kind}")
        g = G.parse_graph("\n".join(lines))
        x = rng.uniform(-1, 1, (1, 3, 32, 32))
        maps = G.forward_all(g, x, seed=trial)
        shapes = G.infer_shapes(g, x.shape)
        assert {k: v.shape for k, v in maps.items()} == shapes


@pytest.mark.slow
def test_cotonet_forward_at_640_is_deterministic():
    g = G.load_preset("cotonet")
    x = np.random.default_rng(0).uniform(0, 1, (1, 3, 640, 640))
    heads = G.forward(g, x, seed=0)
    assert [h.shape[2:] for h in heads] == [(80, 80), (40, 40), (20, 20)]
    assert G.digest(heads) == G.digest(G.forward(g, x, seed=0))


def test_cotonet_batch_two_preserved():
    g = G.load_preset("cotonet")
    x = np.random.default_rng(0).uniform(0, 1, (2, 3, 64, 64))
    heads = G.forward(g, x, seed=0)
    assert [h.shape for h in heads] == [(2, 70, 8, 8), (2, 70, 4, 4), (2, 70, 2, 2)]


# -- complexity --------------------------------------------------------------


def test_toy_complexity_hand_count():
    c = G.complexity(G.parse_graph(TOY))
    # conv 3*9*16 + bn 2*16; SimAM 0; SCDown pw 16*32 + bn 64, dw 32*9 + bn 64
    assert c.report.total_parameters == 432 + 32 + 0 + 512 + 64 + 288 + 64
    assert c.report.conv_weight_params == 432 + 512 + 288
    assert c.report.flops == 2 * 432 * 32 * 32 + 2 * 512 * 32 * 32 + 2 * 288 * 16 * 16
    assert c.per_layer["1"] == {"params": 0, "flops": 0}


def test_simam_only_config_has_zero_parameters():
    g = G.parse_graph("0 SimAM\n1 SimAM\n")
    assert G.complexity(g, (32, 32)).report.total_parameters == 0


def _block_param_sum(g):
    return sum(p.num_params() for p in G.build_weights(g, 0).values())


@pytest.mark.parametrize("name", ["cotonet", "yolo11s-baseline"])
def test_formula_total_equals_block_counts(name):
    g = G.load_preset(name)
    c = G.complexity(g)
    assert c.report.total_parameters == _block_param_sum(g)
    assert sum(v["params"] for v in c.per_layer.values()) == c.report.total_parameters


def test_complexity_independent_of_seed():
    g = G.parse_graph(small_detector())
    a = G.complexity(g)
    w = G.build_weights(g, 99)
    shapes = G.infer_shapes(g, (1, 3, 64, 64))
    costs = []
    for l in g.layers:
        costs += G._layer_costs(l, w[l.id], shapes)
    b = M.complexity(costs)
    assert (a.report.total_parameters, a.report.flops, a.report.flops_extended) == (b.total_parameters, b.flops, b.flops_extended)


def test_removing_pass_through_layers_changes_params_by_placement_delta():
    g = G.load_preset("cotonet")
    c = G.complexity(g)
    assert c.placements["simam"]["params"] == 0
    no_simam = G.complexity(G.remove_kind(g, "SimAM"))
    assert no_simam.report.total_parameters == c.report.total_parameters
    no_pham = G.complexity(G.remove_kind(g, "PHAM"))
    assert c.report.total_parameters - no_pham.report.total_parameters == c.placements["pham"]["params"]


def test_se_placement_delta_is_sum_of_gates():
    g = G.load_preset("cotonet")
    c = G.complexity(g)
    # bias-free two-layer bottleneck per gate: 2 * C * C / 16
    assert c.placements["se"]["params"] == sum(2 * ch * ch // 16 for ch in (32, 64, 128, 256, 512))


def test_reference_notes_are_informational():
    c = G.complexity(G.load_preset("cotonet"))
    assert len(c.notes) == 4
    assert c.notes[0].startswith("parameters=")
    assert any(n.startswith("pham_added_params=") for n in c.notes)
