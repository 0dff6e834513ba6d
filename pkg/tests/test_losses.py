import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from _oracles import central_diff, rel_err
from gslm import autodiff as ad
from gslm.autodiff import Tensor
from gslm.losses import (
    activation_loss,
    classification_loss,
    classification_loss_from_scores,
    smooth_l1,
    supervised_pixels,
    total_loss,
)


def _bce(p, y):
    return float(-(y * np.log(p) + (1 - y) * np.log(1 - p)).mean())


def _act_oracle(cam, conf):
    """Loop form: mean over supervised pixels, then classes, then samples."""
    per_sample = []
    for s in range(cam.shape[0]):
        per_class = []
        for c in range(cam.shape[1]):
            vals = [
                float(smooth_l1(cam[s, c, y, x] - conf[s, c, y, x]))
                for y in range(cam.shape[2])
                for x in range(cam.shape[3])
                if conf[s, c, y, x] >= 0
            ]
            if vals:
                per_class.append(sum(vals) / len(vals))
        per_sample.append(sum(per_class) / len(per_class) if per_class else 0.0)
    return sum(per_sample) / len(per_sample)


def test_bce_value_and_gradient():
    rng = np.random.default_rng(0)
    p = rng.uniform(0.05, 0.95, size=(4, 3))
    y = rng.integers(0, 2, size=(4, 3)).astype(float)
    t = Tensor(p, requires_grad=True)
    loss = classification_loss(t, y)
    assert loss.data == pytest.approx(_bce(p, y), rel=1e-12)
    ad.backward(loss)
    assert rel_err(t.grad, central_diff(lambda v: _bce(v, y), p)) < 1e-6


def test_bce_from_scores_matches_probability_form():
    rng = np.random.default_rng(1)
    s = rng.normal(scale=3, size=(5, 4))
    y = rng.integers(0, 2, size=(5, 4)).astype(float)
    direct = classification_loss_from_scores(Tensor(s), y).data
    via = classification_loss(ad.sigmoid(Tensor(s)), y).data
    assert direct == pytest.approx(via, rel=1e-10)


def test_bce_from_scores_does_not_saturate():
    t = Tensor(np.array([[60.0, -60.0]]), requires_grad=True)
    ad.backward(classification_loss_from_scores(t, np.array([[0.0, 1.0]])))
    np.testing.assert_allclose(t.grad, [[0.5, -0.5]])


def test_activation_loss_matches_loop_oracle():
    rng = np.random.default_rng(2)
    cam = rng.uniform(size=(3, 2, 4, 5))
    conf = rng.choice([-1, 0, 1], size=cam.shape)
    conf[1, 0] = -1  # a class with no supervision
    assert activation_loss(Tensor(cam), conf).data == pytest.approx(_act_oracle(cam, conf), rel=1e-12)


def test_activation_loss_gradient_with_large_gaps():
    rng = np.random.default_rng(3)
    cam = rng.uniform(-2, 3, size=(2, 2, 3, 3))
    conf = rng.choice([-1, 0, 1], size=cam.shape)
    t = Tensor(cam, requires_grad=True)
    ad.backward(activation_loss(t, conf))
    assert rel_err(t.grad, central_diff(lambda v: _act_oracle(v, conf), cam)) < 1e-6


def test_all_ignored_gives_exact_zero():
    t = Tensor(np.ones((2, 3, 3)), requires_grad=True)
    loss = activation_loss(t, -np.ones((2, 3, 3)))
    ad.backward(loss)
    assert loss.data == 0.0
    assert not t.grad.any()


def test_smooth_l1_branches():
    np.testing.assert_allclose(smooth_l1(np.array([-2.0, -0.5, 0.0, 0.5, 2.0])), [1.5, 0.125, 0, 0.125, 1.5])


def test_total_loss_combines_with_alpha():
    a = Tensor(np.array(2.0), requires_grad=True)
    b = Tensor(np.array(3.0), requires_grad=True)
    out = total_loss(a, b, 0.5)
    ad.backward(out)
    assert out.data == 3.5 and a.grad == 1.0 and b.grad == 0.5
    with pytest.raises(ValueError):
        total_loss(a, b, -1.0)


def test_shape_mismatch_is_rejected():
    with pytest.raises(ValueError, match="shape"):
        activation_loss(Tensor(np.zeros((2, 3, 3))), np.zeros((2, 3, 4)))


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, (2, 4, 4), elements=st.floats(-3, 3)),
    arrays(np.int8, (2, 4, 4), elements=st.sampled_from([-1, 0, 1])),
    arrays(np.float64, (2, 4, 4), elements=st.floats(-50, 50)),
)
def test_ignored_pixels_never_matter(cam, conf, noise):
    t0 = Tensor(cam, requires_grad=True)
    l0 = activation_loss(t0, conf)
    ad.backward(l0)
    moved = np.where(conf < 0, cam + noise, cam)
    t1 = Tensor(moved, requires_grad=True)
    l1 = activation_loss(t1, conf)
    ad.backward(l1)
    assert l0.data == l1.data
    np.testing.assert_array_equal(t0.grad, t1.grad)
    assert not t0.grad[conf < 0].any()
    assert supervised_pixels(conf) == int((conf >= 0).sum())


def test_reference_values():
    assert classification_loss(Tensor(np.array([0.5, 0.5])), np.array([1.0, 0.0])).data == pytest.approx(np.log(2))
    near = classification_loss(Tensor(np.array([0.999999, 1e-6])), np.array([1.0, 0.0])).data
    assert near < 1e-5
    p, y = np.array([0.8, 0.3, 0.5, 0.9]), np.array([1.0, 0.0, 0.0, 1.0])
    by_hand = -(np.log(0.8) + np.log(0.7) + np.log(0.5) + np.log(0.9)) / 4
    assert classification_loss(Tensor(p), y).data == pytest.approx(by_hand, rel=1e-14)
    single = np.full((1, 3, 3), -1)
    single[0, 1, 1] = 1
    cam = np.zeros((1, 3, 3))
    cam[0, 1, 1] = 0.4
    assert activation_loss(Tensor(cam), single).data == pytest.approx(0.18)
    assert total_loss(Tensor(np.array(0.6)), Tensor(np.array(0.2)), 0.5).data == pytest.approx(0.7)
    assert total_loss(Tensor(np.array(0.6)), Tensor(np.array(0.2)), 0.0).data == 0.6


def test_residual_sign_symmetry():
    rng = np.random.default_rng(5)
    conf = rng.choice([0, 1], size=(2, 4, 4))
    cam = rng.uniform(size=(2, 4, 4))
    swapped = 2 * conf - cam  # same |residual|, opposite sign
    assert activation_loss(Tensor(cam), conf).data == pytest.approx(activation_loss(Tensor(swapped), conf).data, rel=1e-12)
