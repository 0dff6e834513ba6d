import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from _oracles import confusion_loops, miou_loops, under_over_loops
from gslm.cam import Cam
from gslm.metrics import confusion, evaluate, miou, seed_to_mask, under_over


def test_analytic_cases():
    gt = np.zeros((8, 8), dtype=int)
    gt[2:6, 2:6] = 1
    perfect = confusion(gt, gt, 1)
    assert under_over(perfect)[:2] == (0.0, 0.0)

    half = gt.copy()
    half[2:4, 2:6] = 0
    assert under_over(confusion(half, gt, 1))[:2] == (1.0, 0.0)

    halo = np.zeros((8, 8), dtype=int)
    halo[1:7, 1:7] = 1
    gt_small = np.zeros((8, 8), dtype=int)
    gt_small[1:7, 1:4] = 1
    assert under_over(confusion(halo, gt_small, 1))[:2] == (0.0, 1.0)


def test_zero_tp_class_is_excluded_with_warning():
    gt = np.array([[1, 2], [0, 0]])
    pred = np.array([[1, 0], [0, 0]])
    with pytest.warns(RuntimeWarning, match="TP = 0"):
        under, over, undefined = under_over(confusion(pred, gt, 2))
    assert undefined == [2] and (under, over) == (0.0, 0.0)


def test_miou_includes_background():
    gt = np.array([[0, 1]])
    assert miou(confusion(gt, gt, 3)) == 1.0
    assert miou(confusion(np.array([[1, 1]]), gt, 1)) == pytest.approx((0 + 0.5) / 2)


def test_seed_to_mask_threshold_and_argmax():
    cam = Cam({1: np.array([[0.9, 0.1, 0.3]]), 3: np.array([[0.5, 0.12, 0.6]])})
    np.testing.assert_array_equal(seed_to_mask(cam, 0.15), [[1, 0, 3]])


def test_evaluate_sums_counts_before_ratios():
    masks = [np.array([[1, 1], [0, 0]]), np.array([[2, 0], [0, 0]])]
    cams = [Cam({1: np.array([[1.0, 0.0], [0.0, 0.0]])}), Cam({2: np.array([[1.0, 1.0], [0.0, 0.0]])})]
    rep = evaluate(cams, masks, 2)
    pred = np.concatenate([seed_to_mask(c, 0.15) for c in cams])
    gt = np.concatenate(masks)
    assert rep.miou == miou_loops(pred, gt, 2)
    assert (rep.m_under, rep.m_over) == under_over_loops(pred, gt, 2)
    assert rep.hist_fg.sum() + rep.hist_bg.sum() == 8


def test_label_range_checked():
    with pytest.raises(ValueError, match="outside"):
        confusion(np.array([[3]]), np.array([[0]]), 2)


@pytest.mark.filterwarnings("ignore:classes")
@settings(max_examples=80, deadline=None)
@given(st.integers(1, 4).flatmap(lambda c: st.tuples(
    st.just(c),
    arrays(np.int64, (5, 6), elements=st.integers(0, c)),
    arrays(np.int64, (5, 6), elements=st.integers(0, c)),
)))
def test_counts_match_loop_oracle(case):
    c, pred, gt = case
    counts = confusion(pred, gt, c)
    tp, fp, fn = confusion_loops(pred, gt, c)
    assert counts.tp.tolist() == tp and counts.fp.tolist() == fp and counts.fn.tolist() == fn
    assert miou(counts) == miou_loops(pred, gt, c)
    u, o, _ = under_over(counts)
    eu, eo = under_over_loops(pred, gt, c)
    assert (u == eu or (math.isinf(u) and math.isinf(eu))) and (o == eo or (math.isinf(o) and math.isinf(eo)))



def test_hand_counted_three_class_grid():
    gt = np.array([[0, 1, 1, 0], [2, 2, 0, 0], [3, 3, 3, 0], [0, 0, 0, 0]])
    pred = np.array([[0, 1, 0, 0], [2, 2, 2, 0], [3, 3, 0, 0], [0, 0, 0, 1]])
    # IoU: bg tp=7 fp=2 fn=2 -> 7/11; c1 1/3; c2 2/3; c3 2/3
    assert miou(confusion(pred, gt, 3)) == pytest.approx((7 / 11 + 1 / 3 + 2 / 3 + 2 / 3) / 4)


def test_histograms_conserve_pixels():
    from gslm.metrics import confidence_histogram

    rng = np.random.default_rng(0)
    gt = rng.integers(0, 3, size=(8, 8))
    cam = Cam({1: rng.uniform(size=(4, 4)), 2: np.zeros((4, 4))})
    fg, bg = confidence_histogram(cam, gt)
    assert fg.sum() == (gt == 1).sum() + (gt == 2).sum()
    assert bg.sum() == 2 * 64 - fg.sum()
    zero_fg, zero_bg = confidence_histogram(Cam({1: np.zeros((4, 4))}), gt)
    assert zero_fg[0] == zero_fg.sum() and zero_bg[0] == zero_bg.sum()


def test_seed_mask_edge_cases():
    assert not seed_to_mask(Cam({1: np.zeros((3, 3)), 2: np.zeros((3, 3))})).any()
    assert (seed_to_mask(Cam({2: np.full((3, 3), 0.9)})) == 2).all()


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.int64, (4, 5), elements=st.integers(0, 3)),
    arrays(np.int64, (4, 5), elements=st.integers(0, 3)),
    st.permutations([1, 2, 3]),
)
def test_symmetry_and_relabelling(pred, gt, perm):
    assert miou(confusion(pred, gt, 3)) == pytest.approx(miou(confusion(gt, pred, 3)), abs=1e-15)
    relabel = np.array([0, *perm])
    a = confusion(pred, gt, 3)
    b = confusion(relabel[pred], relabel[gt], 3)
    for counts_a, counts_b in ((a.tp, b.tp), (a.fp, b.fp), (a.fn, b.fn)):
        np.testing.assert_array_equal(counts_b[relabel], counts_a)
    assert 0 <= miou(a) <= 1
    assert (a.tp + a.fn).sum() == pred.size
