import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from detcore.geometry import (
    BoxCxcywh,
    BoxXyxy,
    _ciou_parts,
    ciou_grad,
    ciou_loss,
    convert,
    iou,
    to_cxcywh,
)
from detcore.numerics import central_diff_grad, relative_error
from detcore.synthdata import random_box
from detcore.verify import random_ciou_pair


def xyxy_boxes():
    coord = st.floats(-100, 100, allow_nan=False)
    size = st.floats(0.1, 50, allow_nan=False)
    return st.builds(lambda x, y, w, h: BoxXyxy(x, y, x + w, y + h), coord, coord, size, size)


def test_box_validation():
    with pytest.raises(ValueError):
        BoxCxcywh(0.5, 0.5, 0.0, 0.1)
    with pytest.raises(ValueError):
        BoxCxcywh(1.2, 0.5, 0.1, 0.1)
    with pytest.raises(ValueError):
        BoxXyxy(0, 0, 0, 1)


def test_convert_fixtures():
    assert convert(BoxCxcywh(0.5, 0.5, 1, 1), 640, 512) == BoxXyxy(0, 0, 640, 512)
    assert convert(BoxCxcywh(0.5, 0.5, 0.5, 0.5), 100, 100) == BoxXyxy(25, 25, 75, 75)
    with pytest.raises(ValueError):
        convert(BoxCxcywh(0.5, 0.5, 0.5, 0.5), 0, 100)


def test_convert_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(500):
        b = BoxCxcywh.from_array(random_box(rng))
        w, h = rng.uniform(10, 2000, 2)
        back = to_cxcywh(convert(b, w, h), w, h)
        np.testing.assert_allclose(back.as_array(), b.as_array(), atol=1e-9)


def test_iou_fixtures():
    a = BoxXyxy(0, 0, 2, 2)
    assert iou(a, a) == 1.0
    assert iou(a, BoxXyxy(5, 5, 6, 6)) == 0.0
    assert iou(a, BoxXyxy(1, 1, 3, 3)) == pytest.approx(1 / 7, abs=1e-15)
    with pytest.raises(TypeError):
        iou(a, (0, 0, 1, 1))


@given(xyxy_boxes(), xyxy_boxes())
def test_iou_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0


@given(xyxy_boxes(), xyxy_boxes(), st.floats(-10, 10), st.floats(-10, 10))
def test_iou_translation_invariant(a, b, dx, dy):
    assert iou(a.shifted(dx, dy), b.shifted(dx, dy)) == pytest.approx(iou(a, b), abs=1e-12)


def test_ciou_fixtures():
    sq = [0.5, 0.5, 0.2, 0.2]
    assert ciou_loss(sq, sq) == 0.0
    assert ciou_loss(sq, [0.5, 0.5, 0.4, 0.4]) == pytest.approx(0.75, abs=1e-12)
    # disjoint equal squares, enclosing box 0.6 x 0.1
    value = ciou_loss([0.2, 0.5, 0.1, 0.1], [0.7, 0.5, 0.1, 0.1])
    assert value == pytest.approx(1 + 0.25 / (0.6**2 + 0.1**2), abs=1e-12)
    assert value == pytest.approx(1.675676, abs=1e-6)
    with pytest.raises(ValueError):
        ciou_loss([0.5, 0.5, -0.1, 0.2], sq)


def test_ciou_zero_on_identity_random():
    rng = np.random.default_rng(5)
    for _ in range(200):
        b = random_box(rng)
        assert abs(ciou_loss(b, b)) <= 1e-12
        assert ciou_loss(b, random_box(rng)) > 0


def test_aspect_term_limits():
    # equal aspect ratio: the aspect penalty vanishes
    pred, gt = [0.4, 0.5, 0.2, 0.1], [0.5, 0.5, 0.4, 0.2]
    inter = 0.2 * 0.1
    iou_val = inter / (0.02 + 0.08 - inter)
    c2 = 0.4**2 + 0.2**2
    assert ciou_loss(pred, gt) == pytest.approx(1 - iou_val + 0.01 / c2, abs=1e-12)
    # extremely wide against a square: arctan gap tends to pi/4, penalty to 1/4
    square = _ciou_parts(np.array([0.5, 0.5, 0.9, 1e-7]), np.array([0.5, 0.5, 0.2, 0.2]))
    assert square["v"] == pytest.approx(0.25, abs=1e-6)
    # extremely wide against extremely tall: the gap tends to pi/2, penalty to 1
    parts = _ciou_parts(np.array([0.5, 0.5, 0.9, 1e-7]), np.array([0.5, 0.5, 1e-7, 0.9]))
    assert parts["v"] == pytest.approx(1.0, abs=1e-6)
    assert 0.0 < parts["v"] <= 1.0


def test_ciou_grad_identity_is_zero_and_matches_tiny_step():
    b = np.array([0.4, 0.5, 0.2, 0.3])
    g = ciou_grad(b, b)
    np.testing.assert_array_equal(g, np.zeros(4))
    # at the kink central differences converge to the symmetric subgradient at rate O(h)
    numeric = central_diff_grad(lambda x: ciou_loss(x, b), b, 1e-7)
    assert relative_error(g, numeric) < 1e-5


def test_ciou_grad_concentric_symmetry():
    g = ciou_grad([0.5, 0.5, 0.1, 0.1], [0.5, 0.5, 0.3, 0.3])
    assert g[0] == 0.0 and g[1] == 0.0
    assert g[2] < 0 and g[3] < 0  # growing toward the target lowers the loss


def test_ciou_grad_random_pairs():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(1000):
        p, gt = random_ciou_pair(rng)
        numeric = central_diff_grad(lambda x: ciou_loss(x, gt), p, 1e-5)
        worst = max(worst, relative_error(ciou_grad(p, gt), numeric))
    assert worst < 1e-5


def test_detached_alpha_differs_only_by_alpha_term():
    p, gt = [0.45, 0.52, 0.3, 0.1], [0.5, 0.5, 0.2, 0.25]
    exact = ciou_grad(p, gt)
    detached = ciou_grad(p, gt, detach_alpha=True)
    assert not np.allclose(exact, detached)
    # for disjoint boxes IoU is locally constant at 0, so the trade-off weight
    # depends on width and height only and the center components agree
    far = [0.1, 0.1, 0.05, 0.08]
    np.testing.assert_allclose(ciou_grad(far, gt)[:2], ciou_grad(far, gt, detach_alpha=True)[:2])
