"""Seed evaluation: confusion counts, mIoU, under/over-activation, histograms."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .cam import Cam, upsample_nearest

HIST_BINS = 32


@dataclass
class ConfusionCounts:
    """Pixel counts per class 0..C (0 is background)."""

    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    @classmethod
    def zeros(cls, n_classes):
        z = np.zeros(n_classes + 1, dtype=np.int64)
        return cls(z.copy(), z.copy(), z.copy())

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def n_classes(self):
        return len(self.tp) - 1


@dataclass
class MetricsReport:
    miou: float
    per_class_iou: np.ndarray  # length C+1, NaN for excluded classes
    m_under: float
    m_over: float
    confusion_fraction: float
    hist_fg: np.ndarray
    hist_bg: np.ndarray
    undefined_classes: list = field(default_factory=list)


def seed_to_mask(cam: Cam, bg_threshold=0.15, size=None):
    """Argmax over present classes; background where the best value < bg_threshold."""
    if not 0 < bg_threshold < 1:
        raise ValueError(f"bg_threshold must lie in (0, 1), got {bg_threshold}")
    classes = cam.classes()
    maps = np.stack([cam.maps[c] for c in classes])
    if size is not None:
        maps = upsample_nearest(maps, size)
    best = maps.argmax(axis=0)
    peak = np.take_along_axis(maps, best[None], axis=0)[0]
    out = np.asarray(classes, dtype=np.uint8)[best]
    out[peak < bg_threshold] = 0
    return out


def confusion(pred_mask, gt_mask, n_classes) -> ConfusionCounts:
    pred = np.asarray(pred_mask).astype(np.int64)
    gt = np.asarray(gt_mask).astype(np.int64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    for name, m in (("prediction", pred), ("ground truth", gt)):
        if m.size and (m.min() < 0 or m.max() > n_classes):
            raise ValueError(f"{name} labels outside 0..{n_classes}")
    k = n_classes + 1
    table = np.bincount(gt.ravel() * k + pred.ravel(), minlength=k * k).reshape(k, k)
    tp = np.diag(table).copy()
    return ConfusionCounts(tp=tp, fp=table.sum(axis=0) - tp, fn=table.sum(axis=1) - tp)


def iou_per_class(counts: ConfusionCounts):
    union = counts.tp + counts.fp + counts.fn
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, counts.tp / np.maximum(union, 1), np.nan)
    return iou


def miou(counts: ConfusionCounts) -> float:
    """Mean IoU over classes (background included) with a non-empty union."""
    iou = iou_per_class(counts)
    if np.isnan(iou).all():
        raise ValueError("no class has any predicted or ground-truth pixel")
    return float(np.nanmean(iou))


def under_over(counts: ConfusionCounts):
    """Mean FN/TP and FP/TP over foreground classes.

    Classes with ground-truth pixels but TP = 0 are undefined (reported as
    inf), excluded from both means and listed in the third return value.
    Classes with neither ground truth nor TP are skipped.
    """
    under, over, undefined = [], [], []
    for c in range(1, counts.n_classes + 1):
        tp, fp, fn = int(counts.tp[c]), int(counts.fp[c]), int(counts.fn[c])
        if tp == 0:
            if fn > 0:
                undefined.append(c)
            continue
        under.append(fn / tp)
        over.append(fp / tp)
    if undefined:
        warnings.warn(f"classes {undefined} have TP = 0; excluded from m_under/m_over", RuntimeWarning)
    if not under:
        return float("inf"), float("inf"), undefined
    return float(np.mean(under)), float(np.mean(over)), undefined


def confidence_histogram(cam: Cam, gt_mask, bins=HIST_BINS):
    """Histograms of CAM values on [0, 1] split by ground truth (class c vs rest)."""
    gt = np.asarray(gt_mask)
    hist_fg = np.zeros(bins, dtype=np.int64)
    hist_bg = np.zeros(bins, dtype=np.int64)
    for c in cam.classes():
        m = upsample_nearest(cam.maps[c], gt.shape)
        idx = np.minimum((m * bins).astype(np.int64), bins - 1)
        fg = gt == c
        hist_fg += np.bincount(idx[fg], minlength=bins)
        hist_bg += np.bincount(idx[~fg], minlength=bins)
    return hist_fg, hist_bg


def evaluate(cams, gt_masks, n_classes, bg_threshold=0.15, theta_fg=0.30, theta_bg=0.05):
    """Dataset-level report; counts are summed over samples before the ratios."""
    total = ConfusionCounts.zeros(n_classes)
    hist_fg = np.zeros(HIST_BINS, dtype=np.int64)
    hist_bg = np.zeros(HIST_BINS, dtype=np.int64)
    neutral = 0
    pixels = 0
    for cam, gt in zip(cams, gt_masks):
        pred = seed_to_mask(cam, bg_threshold, gt.shape)
        total = total + confusion(pred, gt, n_classes)
        f, b = confidence_histogram(cam, gt)
        hist_fg += f
        hist_bg += b
        for m in cam.maps.values():
            up = upsample_nearest(m, gt.shape)
            neutral += int(((up >= theta_bg) & (up < theta_fg)).sum())
            pixels += up.size
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        m_under, m_over, undefined = under_over(total)
    return MetricsReport(
        miou=miou(total),
        per_class_iou=iou_per_class(total),
        m_under=m_under,
        m_over=m_over,
        confusion_fraction=neutral / pixels if pixels else 0.0,
        hist_fg=hist_fg,
        hist_bg=hist_bg,
        undefined_classes=undefined,
    )
