"""Training objectives: multi-label BCE, masked smooth-L1 activation loss, total."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add, as_tensor, mul

PRED_CLAMP = 1e-12


@dataclass
class LossValue:
    total: float
    cls: float
    act: float
    n_supervised: int


def _check_same(a, b, what):
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape {a.shape} does not match {b.shape}")


def classification_loss(pred, target) -> Tensor:
    """Mean binary cross-entropy over classes (and over the batch for 2-D input)."""
    pred = as_tensor(pred)
    y = np.asarray(target, dtype=np.float64)
    _check_same(pred.data, y, "classification_loss")
    p = np.clip(pred.data, PRED_CLAMP, 1.0 - PRED_CLAMP)
    n = p.size
    value = -(y * np.log(p) + (1.0 - y) * np.log1p(-p)).sum() / n
    inside = (pred.data >= PRED_CLAMP) & (pred.data <= 1.0 - PRED_CLAMP)

    def _bw(g):
        return (g * inside * (p - y) / (p * (1.0 - p)) / n,)

    return Tensor._from_op(value, (pred,), _bw, "bce")


def classification_loss_from_scores(scores, target) -> Tensor:
    """BCE of ``sigmoid(scores)`` computed directly from the scores.

    Same value as ``classification_loss(sigmoid(scores), target)`` without
    saturating the gradient when the sigmoid rounds to 0 or 1.
    """
    scores = as_tensor(scores)
    y = np.asarray(target, dtype=np.float64)
    _check_same(scores.data, y, "classification_loss")
    s = scores.data
    n = s.size
    # -[y log sig(s) + (1-y) log(1-sig(s))] = softplus(s) - y*s
    softplus = np.maximum(s, 0.0) + np.log1p(np.exp(-np.abs(s)))
    value = (softplus - y * s).sum() / n
    e = np.exp(-np.abs(s))
    sig = np.where(s >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Tensor._from_op(value, (scores,), lambda g: (g * (sig - y) / n,), "bce_logits")


def smooth_l1(d):
    a = np.abs(d)
    return np.where(a < 1.0, 0.5 * d * d, a - 0.5)


def _activation_weights(conf):
    """Per-pixel weight realising mean-over-pixels, then classes, then samples."""
    batched = conf.ndim == 4
    c4 = conf if batched else conf[None]
    mask = c4 >= 0
    per_class = mask.sum(axis=(2, 3))  # N x C
    has = per_class > 0
    n_cls = has.sum(axis=1)  # N
    denom = np.where(has, per_class, 1) * np.maximum(n_cls, 1)[:, None] * c4.shape[0]
    w = mask / denom[:, :, None, None]
    return (w if batched else w[0]), int(mask.sum())


def activation_loss(slm_cam, confidence) -> Tensor:
    """Smooth-L1 (beta = 1) gap between CAM and confidence on pixels with N >= 0.

    Shapes are ``C x h x w`` or ``N x C x h x w``; absent classes should be all
    -1.  Reduction is the mean over supervised pixels per class, then over
    classes with any supervision, then over samples.  An all-ignored input
    gives exactly 0 with zero gradient.
    """
    cam = as_tensor(slm_cam)
    conf = np.asarray(confidence)
    _check_same(cam.data, conf, "activation_loss")
    w, _ = _activation_weights(conf)
    d = cam.data - np.where(conf >= 0, conf, 0)
    value = (w * smooth_l1(d)).sum()
    dgrad = np.clip(d, -1.0, 1.0)
    return Tensor._from_op(value, (cam,), lambda g: (g * w * dgrad,), "act_loss")


def supervised_pixels(confidence) -> int:
    return int((np.asarray(confidence) >= 0).sum())


def total_loss(cls, act, alpha) -> Tensor:
    """``cls + alpha * act``."""
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    return add(cls, mul(act, float(alpha)))
