"""Class activation maps from per-pixel class logits.

Class ids are 1-based everywhere maps are keyed (matching mask values);
position ``c - 1`` of a label vector refers to class ``c``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, relu, relu_k, spatial_max


@dataclass
class Cam:
    """Per-class maps in [0, 1], only for classes present in the image label."""

    maps: dict = field(default_factory=dict)
    stage: str = "GLM"

    def classes(self):
        return sorted(self.maps)


def present_classes(labels):
    labels = np.asarray(labels)
    present = [c + 1 for c in np.flatnonzero(labels > 0.5)]
    if not present:
        raise ValueError("label vector has no positive class")
    return present


def _check_logits(logits, labels):
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 3:
        raise ValueError(f"logits must be C x H x W, got shape {logits.shape}")
    if len(labels) != logits.shape[0]:
        raise ValueError(f"{len(labels)} labels for {logits.shape[0]} logit channels")
    if not np.isfinite(logits).all():
        raise ValueError("logits contain non-finite values")
    return logits


def compute_cam(logits, labels, stage="GLM") -> Cam:
    """Global-max normalised CAM: ``relu(f_c) / max f_c``, zero map if the max is <= 0."""
    labels = np.asarray(labels)
    present = present_classes(labels)
    logits = _check_logits(logits, labels)
    maps = {}
    for c in present:
        f = logits[c - 1]
        peak = f.max()
        maps[c] = np.maximum(f, 0.0) / peak if peak > 0 else np.zeros_like(f)
    return Cam(maps, stage)


def seed_reactivation_cam(logits, labels, k, stage="SLM") -> Cam:
    """Bounded CAM: ``clip(f_c, 0, k) / k``."""
    if not k > 0:
        raise ValueError(f"k must be positive, got {k}")
    labels = np.asarray(labels)
    present = present_classes(labels)
    logits = _check_logits(logits, labels)
    return Cam({c: np.clip(logits[c - 1], 0.0, k) / k for c in present}, stage)


def reactivation_map(logits: Tensor, k) -> Tensor:
    """Differentiable bounded CAM for every channel of ``logits``."""
    return relu_k(logits, k) * (1.0 / k)


def max_normalized_map(logits: Tensor) -> Tensor:
    """Differentiable global-max CAM for every channel (zero where max <= 0)."""
    peak = spatial_max(logits)
    positive = peak.data > 0
    # channels with a non-positive peak have relu == 0, so any non-zero divisor works
    denom = peak * positive + (~positive).astype(np.float64)
    return relu(logits) / denom


def upsample_nearest(arr, size):
    """Nearest-neighbour resize of the trailing two axes up to ``size``."""
    arr = np.asarray(arr)
    h, w = arr.shape[-2:]
    H, W = size
    ys = (np.arange(H) * h) // H
    xs = (np.arange(W) * w) // W
    return arr[..., ys[:, None], xs[None, :]]


def downsample_nearest(arr, size):
    """Nearest-neighbour resize of the trailing two axes down to ``size``.

    Output cell ``i`` samples the source pixel nearest the cell centre.
    """
    arr = np.asarray(arr)
    H, W = arr.shape[-2:]
    h, w = size
    ys = ((2 * np.arange(h) + 1) * H) // (2 * h)
    xs = ((2 * np.arange(w) + 1) * W) // (2 * w)
    return arr[..., ys[:, None], xs[None, :]]


def cam_to_dense(cam: Cam, n_classes, size=None):
    """Stack a Cam into ``n_classes x H x W`` with zeros for absent classes."""
    any_map = next(iter(cam.maps.values()))
    h, w = any_map.shape if size is None else size
    out = np.zeros((n_classes, h, w))
    for c, m in cam.maps.items():
        out[c - 1] = m if size is None else upsample_nearest(m, size)
    return out
