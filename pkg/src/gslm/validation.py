"""Input checks shared by the estimator and the command line."""

from __future__ import annotations

import numpy as np


def check_images(X, *, name="X"):
    """Return ``X`` as a float64 ``N x 3 x S x S`` array with values in [0, 1]."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4:
        raise ValueError(f"{name} must have shape N x 3 x S x S, got {X.shape}")
    n, ch, h, w = X.shape
    if n == 0:
        raise ValueError(f"{name} is empty")
    if ch != 3:
        raise ValueError(f"{name} must have 3 channels, got {ch}")
    if h != w or h % 4:
        raise ValueError(f"{name} images must be square with a side divisible by 4, got {h}x{w}")
    if not np.isfinite(X).all():
        raise ValueError(f"{name} contains NaN or infinite values")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return X


def check_labels(y, n_samples=None, n_classes=None, *, name="y"):
    """Return ``y`` as a float64 ``N x C`` 0/1 matrix; every row needs a positive."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2:
        raise ValueError(f"{name} must be an N x C label matrix, got shape {y.shape}")
    if n_samples is not None and y.shape[0] != n_samples:
        raise ValueError(f"{name} has {y.shape[0]} rows for {n_samples} samples")
    if n_classes is not None and y.shape[1] != n_classes:
        raise ValueError(f"{name} has {y.shape[1]} classes, expected {n_classes}")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError(f"{name} must contain only 0 and 1")
    empty = np.flatnonzero(y.sum(axis=1) == 0)
    if empty.size:
        raise ValueError(f"{name} row {empty[0]} has no positive class")
    return y


def check_masks(masks, n_samples, size, n_classes, *, name="masks"):
    masks = np.asarray(masks)
    if masks.shape != (n_samples, size, size):
        raise ValueError(f"{name} must have shape {(n_samples, size, size)}, got {masks.shape}")
    if not np.issubdtype(masks.dtype, np.integer):
        if not np.array_equal(masks, np.round(masks)):
            raise ValueError(f"{name} must hold integer class indices")
    masks = masks.astype(np.int64)
    if masks.min() < 0 or masks.max() > n_classes:
        raise ValueError(f"{name} values must lie in 0..{n_classes}")
    return masks


def labels_from_masks(masks, n_classes):
    masks = np.asarray(masks)
    return np.stack([[float((m == c).any()) for c in range(1, n_classes + 1)] for m in masks])
