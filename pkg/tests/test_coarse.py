import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gslm.cam import Cam
from gslm.coarse import (
    BG,
    FG,
    IGNORE,
    coarse_generate,
    confidence_map,
    dense_confidence,
    lift,
    split_refined,
)
from gslm.crf import CrfParams


def test_three_way_partition_and_boundaries():
    m = np.array([[0.0, 0.0499, 0.05, 0.2999, 0.30, 1.0]])
    np.testing.assert_array_equal(confidence_map(m, 0.30, 0.05), [[0, 0, -1, -1, 1, 1]])


def test_upsampling_before_threshold():
    m = np.array([[0.9, 0.0], [0.1, 0.4]])
    out = confidence_map(m, 0.3, 0.05, size=(4, 4))
    assert out.shape == (4, 4)
    np.testing.assert_array_equal(out[:2, :2], FG)
    np.testing.assert_array_equal(out[2:, :2], IGNORE)


def test_bad_thresholds():
    with pytest.raises(ValueError):
        confidence_map(np.zeros((2, 2)), 0.05, 0.30)


def test_lift_and_split_invert_each_other():
    conf = np.array([[1, 0, -1]])
    np.testing.assert_array_equal(split_refined(lift(conf)), conf)


def test_unary_dominated_crf_keeps_confidence():
    rng = np.random.default_rng(0)
    image = rng.uniform(size=(3, 12, 12))
    m = rng.uniform(size=(12, 12))
    params = CrfParams(iterations=3, w_spatial=1e-9, w_bilateral=1e-9)
    conf = coarse_generate(image, Cam({2: m}), params=params)
    np.testing.assert_array_equal(conf.maps[2], confidence_map(m, 0.30, 0.05))


def test_all_confusion_map_stays_ignored():
    image = np.full((3, 16, 16), 0.5)
    conf = coarse_generate(image, Cam({1: np.full((4, 4), 0.2)}), params=CrfParams.for_image_size(16))
    assert (conf.maps[1] == IGNORE).all()
    assert conf.confusion_fraction() == 1.0


def test_boundary_constraint_resolves_confusion_along_edges():
    # left half dark, right half bright; the confusion band straddles the edge
    image = np.zeros((3, 32, 32))
    image[:, :, 16:] = 1.0
    cam = np.zeros((32, 32))
    cam[:, 19:] = 0.9
    cam[:, 12:19] = 0.2
    raw = coarse_generate(image, Cam({1: cam}), use_boundary_constraint=False)
    conf = coarse_generate(image, Cam({1: cam}), params=CrfParams.for_image_size(32))
    assert (raw.maps[1][:, 12:19] == IGNORE).all()
    assert (conf.maps[1][:, 16:] == FG).all()
    assert (conf.maps[1][:, :16] == BG).all()


def test_dense_confidence_marks_absent_classes_ignored():
    conf = coarse_generate(np.zeros((3, 8, 8)), Cam({2: np.ones((8, 8))}), use_boundary_constraint=False)
    dense = dense_confidence(conf, 3)
    assert dense.shape == (3, 8, 8)
    assert (dense[0] == IGNORE).all() and (dense[1] == FG).all() and (dense[2] == IGNORE).all()


@settings(max_examples=100, deadline=None)
@given(
    arrays(np.float64, (6, 6), elements=st.floats(0, 1)),
    st.floats(0.01, 0.99),
    st.floats(0.0, 0.98),
)
def test_partition_is_total_and_ordered(m, theta_fg, frac):
    theta_bg = theta_fg * frac
    out = confidence_map(m, theta_fg, theta_bg)
    assert set(np.unique(out)) <= {FG, BG, IGNORE}
    np.testing.assert_array_equal(out == FG, m >= theta_fg)
    np.testing.assert_array_equal(out == BG, m < theta_bg)


def test_refinement_improves_iou_on_synthetic_objects():
    from scipy import ndimage

    from gslm.synth import SceneSpec, render_sample

    spec = SceneSpec()
    params = CrfParams.for_image_size(spec.size)
    for index in range(6):
        sample = render_sample(spec, index)
        for c in np.flatnonzero(sample.labels) + 1:
            gt = sample.gt_mask == c
            core = ndimage.binary_erosion(gt, iterations=3)
            band = ndimage.binary_dilation(gt, iterations=3) & ~core
            cam = Cam({c: np.where(core, 0.9, np.where(band, 0.2, 0.0))})
            raw = coarse_generate(sample.image, cam, use_boundary_constraint=False).maps[c] == FG
            refined = coarse_generate(sample.image, cam, params=params).maps[c] == FG

            def iou(m):
                return (m & gt).sum() / (m | gt).sum()

            assert iou(refined) > iou(raw)
