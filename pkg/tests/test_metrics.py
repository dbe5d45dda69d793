import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from changetitans import metrics as M

masks = st.integers(1, 12).flatmap(
    lambda h: st.integers(1, 12).flatmap(
        lambda w: st.tuples(hnp.arrays(np.uint8, (h, w), elements=st.integers(0, 1)),
                            hnp.arrays(np.uint8, (h, w), elements=st.integers(0, 1)))))


def test_hand_case_iou_f1():
    pred = np.array([[1, 0]])
    gt = np.array([[1, 1]])
    c = M.confusion(pred, gt)
    assert (c.tp, c.fp, c.fn, c.tn) == (1, 0, 1, 0)
    pm = M.pixel_metrics(c)
    assert pm.iou == 0.5 and pm.f1 == pytest.approx(2 / 3, abs=1e-15)


def test_both_empty_is_degenerate_one():
    pm = M.pixel_metrics(M.confusion(np.zeros((3, 3)), np.zeros((3, 3))))
    assert pm.f1 == 1.0 and pm.degenerate


def test_empty_prediction_is_degenerate_zero():
    pm = M.pixel_metrics(M.confusion(np.zeros((3, 3)), np.eye(3)))
    assert pm.precision == 0.0 and pm.f1 == 0.0 and pm.degenerate


@settings(max_examples=60, deadline=None)
@given(masks)
def test_fast_paths_equal_bruteforce(pair):
    pred, gt = pair
    assert M.confusion(pred, gt) == M.confusion_bruteforce(pred, gt)
    np.testing.assert_array_equal(M.boundary(gt), M.boundary_bruteforce(gt))
    assert abs(M.boundary_f1(pred, gt) - M.boundary_f1_bruteforce(pred, gt)) <= 1e-9
    assert abs(M.trimap_miou(pred, gt) - M.trimap_miou_bruteforce(pred, gt)) <= 1e-9
    assert M.hausdorff(pred, gt) == M.hausdorff_bruteforce(pred, gt)


def test_boundary_of_solid_square():
    m = np.zeros((5, 5), np.uint8)
    m[1:4, 1:4] = 1
    expected = m.copy()
    expected[2, 2] = 0
    np.testing.assert_array_equal(M.boundary(m), expected)
    # pixels on the image border always count as boundary
    np.testing.assert_array_equal(M.boundary(np.ones((3, 3))), [[1, 1, 1], [1, 0, 1], [1, 1, 1]])


def test_hausdorff_pythagorean():
    a, b = np.zeros((6, 6), np.uint8), np.zeros((6, 6), np.uint8)
    a[0, 0] = 1
    b[3, 4] = 1
    assert M.hausdorff(a, b) == 5.0 == M.hausdorff(b, a)


def test_hausdorff_sentinels():
    z = np.zeros((4, 4))
    assert M.hausdorff(z, z) == 0.0
    assert M.hausdorff(z, np.eye(4)) == math.inf


@settings(max_examples=30, deadline=None)
@given(masks, st.floats(0.5, 3.0), st.floats(0.0, 3.0))
def test_bf1_monotone_in_tau(pair, tau, extra):
    pred, gt = pair
    assert M.boundary_f1(pred, gt, tau) <= M.boundary_f1(pred, gt, tau + extra) + 1e-12


def test_bf1_identical_and_shifted():
    m = np.zeros((10, 10), np.uint8)
    m[2:7, 2:7] = 1
    assert M.boundary_f1(m, m) == 1.0
    shifted = np.roll(m, 3, axis=1)
    assert M.boundary_f1(shifted, m, tau=2) < 1.0
    assert M.boundary_f1(shifted, m, tau=3) == 1.0


def test_trimap_hand_cases():
    gt = np.zeros((6, 6), np.uint8)
    gt[1:5, 1:5] = 1
    assert M.trimap_miou(gt, gt) == 1.0
    assert M.trimap_miou(1 - gt, gt, width=1) == 0.0
    with pytest.raises(ValueError):
        M.trimap_miou(gt, gt, width=0.5)


def test_trimap_wide_band_equals_global_miou(rng):
    pred = (rng.random((12, 12)) > 0.5).astype(np.uint8)
    gt = np.zeros((12, 12), np.uint8)
    gt[3:8, 2:9] = 1
    c = M.confusion(pred, gt)
    fg = c.tp / (c.tp + c.fp + c.fn)
    bg = c.tn / (c.tn + c.fp + c.fn)
    assert M.trimap_miou(pred, gt, width=100) == pytest.approx((fg + bg) / 2, abs=1e-15)


def test_trimap_6x6_against_loop_oracle():
    gt = np.zeros((6, 6), np.uint8)
    gt[2:4, 1:5] = 1
    pred = np.zeros((6, 6), np.uint8)
    pred[1:4, 2:6] = 1
    assert M.trimap_miou(pred, gt, 1.5) == pytest.approx(M.trimap_miou_bruteforce(pred, gt, 1.5), abs=1e-15)


def test_evaluate_identical_masks():
    m = np.zeros((8, 8), np.uint8)
    m[2:5, 3:7] = 1
    r = M.evaluate(m, m)
    assert (r.precision, r.recall, r.f1, r.iou, r.bf1, r.trimap_miou, r.hausdorff) == (1, 1, 1, 1, 1, 1, 0)
    assert "f1=1.0" in r.to_text()
    assert len(r.csv_row("x")) == len(M.CSV_COLUMNS)


def test_input_validation():
    with pytest.raises(ValueError, match="shapes"):
        M.confusion(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError, match="0 and 1"):
        M.confusion(np.full((2, 2), 2), np.zeros((2, 2)))
    with pytest.raises(ValueError, match="2-D"):
        M.boundary(np.zeros(4))
