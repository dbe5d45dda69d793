import math

import numpy as np
import pytest

from changetitans import tensor as T
from changetitans.objectives import LossConfig, bce, dice, total_loss
from changetitans.tensor import Tensor, grad_check


def test_bce_half_is_ln2(rng):
    target = (rng.random((3, 8, 8)) > 0.5).astype(float)
    assert abs(float(bce(np.full((3, 8, 8), 0.5), target).data) - math.log(2)) <= 1e-12


def test_bce_matches_direct_formula(rng):
    p, t = rng.uniform(0.01, 0.99, (2, 4, 4)), (rng.random((2, 4, 4)) > 0.5).astype(float)
    ref = -np.mean(t * np.log(p) + (1 - t) * np.log(1 - p))
    assert float(bce(p, t).data) == pytest.approx(ref, rel=1e-14)


def test_bce_clamps_saturated_predictions():
    val = float(bce(np.array([[0.0, 1.0]]), np.array([[1.0, 0.0]])).data)
    assert val == pytest.approx(-math.log(1e-7), rel=1e-9)


def test_dice_identical_masks_is_zero(rng):
    m = (rng.random((2, 6, 6)) > 0.5).astype(float)
    assert float(dice(m, m).data) == 0.0


def test_dice_disjoint_and_empty():
    a = np.zeros((1, 4, 4)); a[0, :2] = 1
    b = 1 - a
    assert float(dice(a, b).data) == pytest.approx(1 - 1 / 17)
    assert float(dice(np.zeros((1, 4, 4)), np.zeros((1, 4, 4))).data) == 0.0


def test_dice_per_image_mean(rng):
    p, t = rng.random((3, 4, 4)), (rng.random((3, 4, 4)) > 0.5).astype(float)
    per = [1 - (2 * (p[i] * t[i]).sum() + 1) / (p[i].sum() + t[i].sum() + 1) for i in range(3)]
    assert float(dice(p, t).data) == pytest.approx(np.mean(per), rel=1e-13)


def test_lambda_zero_is_bce_bitwise(rng):
    p, t = rng.uniform(0.05, 0.95, (2, 5, 5)), (rng.random((2, 5, 5)) > 0.5).astype(float)
    assert float(total_loss(p, t, LossConfig(lam=0.0)).data) == float(bce(p, t).data)
    both = float(bce(p, t).data) + 0.3 * float(dice(p, t).data)
    assert float(total_loss(p, t, LossConfig(lam=0.3)).data) == pytest.approx(both, rel=1e-15)


def test_scalar_loss_gradcheck(rng):
    p = Tensor(rng.uniform(0.1, 0.9, (2, 4, 4)), requires_grad=True)
    t = (rng.random((2, 4, 4)) > 0.5).astype(float)
    assert grad_check(lambda: total_loss(p, t, LossConfig(lam=0.7)), p) < 1e-5


def test_shape_and_config_errors():
    with pytest.raises(ValueError, match="shape"):
        bce(np.full((2, 2), 0.5), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        LossConfig(eps=0.0)
    with pytest.raises(ValueError):
        LossConfig(lam=-1.0)
