import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from cotondet import boxloss as bl

LOSS_FNS = [bl.giou_loss, bl.diou_loss, bl.ciou_loss, bl.siou_loss]


def corner_iou(b, g):
    """Independent corner-arithmetic IoU."""
    bx1, bx2 = b[0] - b[2] / 2, b[0] + b[2] / 2
    by1, by2 = b[1] - b[3] / 2, b[1] + b[3] / 2
    gx1, gx2 = g[0] - g[2] / 2, g[0] + g[2] / 2
    gy1, gy2 = g[1] - g[3] / 2, g[1] + g[3] / 2
    iw = max(0.0, min(bx2, gx2) - max(bx1, gx1))
    ih = max(0.0, min(by2, gy2) - max(by1, gy1))
    inter = iw * ih
    return inter / (b[2] * b[3] + g[2] * g[3] - inter)


def literal_angle(dx, dy):
    """Angle cost evaluated through arcsin as written in the loss definition."""
    sigma = math.hypot(dx, dy)
    x = abs(dy) / sigma
    return 1 - 2 * math.sin(math.asin(x) - math.pi / 4) ** 2


boxes = st.tuples(
    st.floats(0.25, 0.75), st.floats(0.25, 0.75), st.floats(0.02, 0.45), st.floats(0.02, 0.45)
)


def test_iou_examples():
    assert bl.iou((0.3, 0.4, 0.2, 0.1), (0.3, 0.4, 0.2, 0.1)) == 1.0
    assert abs(bl.iou(bl.BBox(0.5, 0.5, 0.4, 0.4), bl.BBox(0.6, 0.5, 0.4, 0.4)) - 0.6) < 1e-12
    assert bl.iou((0.2, 0.2, 0.2, 0.2), (0.8, 0.8, 0.2, 0.2)) == 0.0


def test_giou_disjoint_example():
    r = bl.giou_loss((0.2, 0.2, 0.2, 0.2), (0.8, 0.8, 0.2, 0.2))
    assert abs(r.value - 1.875) < 1e-12


@pytest.mark.parametrize("fn", LOSS_FNS + [bl.iou_loss])
def test_identical_boxes_have_zero_loss_and_gradient(fn):
    b = (0.4, 0.55, 0.3, 0.2)
    r = fn(b, b)
    assert r.value == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_allclose(r.grad, 0.0, atol=1e-12)


def test_siou_angle_examples():
    for d in (0.01, 0.2, -0.3):
        lam, *_ = bl.siou_angle(d, d)
        assert lam == pytest.approx(1.0, abs=1e-15)
        assert literal_angle(d, d) == pytest.approx(1.0, abs=1e-12)
    assert bl.siou_angle(0.0, 0.3)[0] == 0.0
    assert bl.siou_angle(0.3, 0.0)[0] == 0.0
    assert abs(literal_angle(0.0, 0.3)) < 1e-15
    assert abs(literal_angle(0.3, 0.0)) < 1e-15
    assert bl.siou_angle(0.0, 0.0) == (0.0, 0.0, 0.0)


@given(st.floats(-1, 1), st.floats(-1, 1))
def test_siou_angle_simplification_matches_arcsin_form(dx, dy):
    assume(math.hypot(dx, dy) > 1e-6)
    lam = bl.siou_angle(dx, dy)[0]
    assert 0.0 <= lam <= 1.0 + 1e-15
    # arcsin is ill-conditioned near 1, so the literal form is the less accurate side
    assert lam == pytest.approx(literal_angle(dx, dy), abs=1e-7)


def test_siou_coincident_boxes_zero():
    b = (0.5, 0.5, 0.2, 0.3)
    t = bl.siou_terms(b, b)
    assert t == {"iou": 1.0, "angle": 0.0, "distance": 0.0, "shape": 0.0}
    assert bl.siou_loss(b, b).value == 0.0


def test_siou_loss_assembles_terms():
    b, g = (0.4, 0.45, 0.2, 0.3), (0.5, 0.5, 0.25, 0.2)
    t = bl.siou_terms(b, g, bl.SIoUConfig(3.0))
    expected = 1 - corner_iou(b, g) + (t["distance"] + t["shape"]) / 2
    assert bl.siou_loss(b, g, bl.SIoUConfig(3.0)).value == pytest.approx(expected, abs=1e-14)
    # enclosing box from corners: x 0.3..0.625, y 0.3..0.6
    cw, ch = 0.325, 0.3
    gamma = 2 - 2 * 0.1 * 0.05 / (0.1 ** 2 + 0.05 ** 2)
    dist = 2 - math.exp(-gamma * (0.1 / cw) ** 2) - math.exp(-gamma * (0.05 / ch) ** 2)
    shape = (1 - math.exp(-0.05 / 0.25)) ** 3 + (1 - math.exp(-0.1 / 0.3)) ** 3
    assert t["distance"] == pytest.approx(dist, abs=1e-14)
    assert t["shape"] == pytest.approx(shape, abs=1e-14)


def test_siou_config_range():
    with pytest.raises(ValueError):
        bl.SIoUConfig(1.5)
    with pytest.raises(ValueError):
        bl.SIoUConfig(6.5)
    assert bl.SIoUConfig().theta == 4.0


def test_bbox_validation():
    with pytest.raises(ValueError):
        bl.BBox(0.5, 0.5, 0.0, 0.1)
    with pytest.raises(ValueError):
        bl.BBox(1.2, 0.5, 0.1, 0.1)
    b = bl.BBox.from_corners(0.1, 0.2, 0.3, 0.6)
    assert b.x1 <= b.x2 and b.y1 <= b.y2
    assert b.area == pytest.approx(0.08)


def test_gradients_match_finite_differences_on_random_pairs():
    pairs = bl.random_box_pairs(np.random.default_rng(7), 300)
    for fn in LOSS_FNS:
        assert bl.max_gradient_error(fn, pairs) <= 1e-4, fn.__name__


@given(boxes, boxes)
@settings(max_examples=200)
def test_iou_bounds_and_symmetry(b, g):
    v = bl.iou(b, g)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(bl.iou(g, b), abs=1e-15)
    assert v == pytest.approx(corner_iou(b, g), abs=1e-14)


@given(boxes, boxes)
@settings(max_examples=200)
def test_losses_positive_off_identity_and_term_ranges(b, g):
    assume(b != g)
    for fn in LOSS_FNS:
        assert fn(b, g).value > 0
    t = bl.siou_terms(b, g)
    assert 0 <= t["angle"] <= 1
    assert 0 <= t["distance"] < 2
    assert 0 <= t["shape"] < 2


@given(boxes, boxes, st.floats(-0.2, 0.2), st.floats(-0.2, 0.2))
@settings(max_examples=200)
def test_translation_invariance(b, g, ox, oy):
    b2 = (b[0] + ox, b[1] + oy, b[2], b[3])
    g2 = (g[0] + ox, g[1] + oy, g[2], g[3])
    for fn in LOSS_FNS:
        assert fn(b2, g2).value == pytest.approx(fn(b, g).value, abs=1e-12)


@given(boxes, boxes, st.floats(0.3, 1.3))
@settings(max_examples=200)
def test_scale_invariance(b, g, s):
    bs = tuple(v * s for v in b)
    gs = tuple(v * s for v in g)
    assert bl.iou(bs, gs) == pytest.approx(bl.iou(b, g), abs=1e-12)
    assert bl.giou_loss(bs, gs).value == pytest.approx(bl.giou_loss(b, g).value, abs=1e-12)
    assert bl.siou_terms(bs, gs)["shape"] == pytest.approx(bl.siou_terms(b, g)["shape"], abs=1e-12)


def test_ciou_gradient_includes_alpha_dependence():
    b, g = (0.45, 0.5, 0.32, 0.15), (0.5, 0.52, 0.2, 0.25)
    assert bl.check_gradient(bl.ciou_loss, b, g) < 1e-6


def test_near_singular_flags_kinks():
    g = bl.BBox(0.5, 0.5, 0.2, 0.2)
    assert bl.near_singular(bl.BBox(0.5, 0.6, 0.3, 0.1), g)  # dx == 0
    assert bl.near_singular(bl.BBox(0.6, 0.6, 0.3, 0.1), g)  # 45 degrees
    assert bl.near_singular(bl.BBox(0.55, 0.62, 0.3, 0.2), g)  # equal heights
    assert not bl.near_singular(bl.BBox(0.57, 0.62, 0.3, 0.13), g)
