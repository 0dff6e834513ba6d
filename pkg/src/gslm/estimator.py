"""scikit-learn style wrapper around the staged training pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .cam import upsample_nearest
from .crf import CrfParams
from .data import Dataset
from .driver import (
    default_glm_config,
    default_slm_config,
    forward_logits,
    produce_cams,
    run_gslm,
)
from .metrics import evaluate, seed_to_mask
from .validation import check_images, check_labels, check_masks, labels_from_masks


class GSLMSegmenter(BaseEstimator):
    """Weakly supervised segmenter trained from image-level labels.

    ``fit(X, y)`` takes images ``N x 3 x S x S`` in [0, 1] and a 0/1 label
    matrix ``N x C``.  ``transform`` returns per-class seed maps at image
    resolution, ``predict`` the seed masks (0 = background, c = class c).
    Unset (``None``) hyperparameters fall back to the stage defaults.
    """

    def __init__(
        self,
        n_slm_iterations=3,
        alpha=0.5,
        k=6.0,
        theta_fg=0.30,
        theta_bg=0.05,
        boundary_constraint=True,
        seed_reactivation=True,
        coarse_generation=True,
        glm_epochs=8,
        slm_epochs=5,
        glm_lr=None,
        slm_lr=None,
        batch_size=16,
        bg_threshold=0.15,
        crf_iterations=10,
        seed=0,
        n_jobs=1,
    ):
        self.n_slm_iterations = n_slm_iterations
        self.alpha = alpha
        self.k = k
        self.theta_fg = theta_fg
        self.theta_bg = theta_bg
        self.boundary_constraint = boundary_constraint
        self.seed_reactivation = seed_reactivation
        self.coarse_generation = coarse_generation
        self.glm_epochs = glm_epochs
        self.slm_epochs = slm_epochs
        self.glm_lr = glm_lr
        self.slm_lr = slm_lr
        self.batch_size = batch_size
        self.bg_threshold = bg_threshold
        self.crf_iterations = crf_iterations
        self.seed = seed
        self.n_jobs = n_jobs

    def _stage_configs(self):
        shared = dict(
            batch_size=self.batch_size,
            alpha=self.alpha,
            k=self.k,
            theta_fg=self.theta_fg,
            theta_bg=self.theta_bg,
            boundary_constraint=self.boundary_constraint,
            seed_reactivation=self.seed_reactivation,
            coarse_generation=self.coarse_generation,
            seed=self.seed,
        )
        glm = default_glm_config(epochs=self.glm_epochs, **shared)
        slm = default_slm_config(epochs=self.slm_epochs, **shared)
        if self.glm_lr is not None:
            glm = glm.with_(base_lr=self.glm_lr)
        if self.slm_lr is not None:
            slm = slm.with_(base_lr=self.slm_lr)
        return glm, slm

    def fit(self, X, y):
        X = check_images(X)
        y = check_labels(y, n_samples=len(X))
        glm, slm = self._stage_configs()
        crf = CrfParams.for_image_size(X.shape[-1], iterations=self.crf_iterations)
        train = Dataset([f"{i:05d}" for i in range(len(X))], X, y)
        state = run_gslm(train, glm, slm, self.n_slm_iterations, crf, evaluate_now=False, workers=self.n_jobs)
        if state.status != "OK":
            raise RuntimeError(f"training diverged at stage {state.diverged_stage}")
        self.stage_params_ = [s.params for s in state.stages]
        self.params_ = state.params
        self.train_log_ = state.train_log
        self.n_classes_ = y.shape[1]
        self.image_size_ = X.shape[-1]
        return self

    def _check_input(self, X):
        check_is_fitted(self, "params_")
        X = check_images(X)
        if X.shape[-1] != self.image_size_:
            raise ValueError(f"fitted on {self.image_size_}px images, got {X.shape[-1]}px")
        return X

    def _cam_mode(self):
        final_is_slm = len(self.stage_params_) > 1
        return "bounded" if final_is_slm and self.seed_reactivation else "max"

    def decision_function(self, X):
        """Image-level class scores (global average of the logits)."""
        X = self._check_input(X)
        return forward_logits(self.params_, X, self.n_classes_).mean(axis=(2, 3))

    def predict_labels(self, X):
        return (self.decision_function(X) > 0).astype(np.float64)

    def _cams(self, X, y):
        if y is None:
            y = self.predict_labels(X)
            # an image must have at least one class; fall back to the best score
            empty = y.sum(axis=1) == 0
            if empty.any():
                best = self.decision_function(X[empty]).argmax(axis=1)
                y[np.flatnonzero(empty), best] = 1.0
        y = check_labels(y, n_samples=len(X), n_classes=self.n_classes_)
        ds = Dataset([f"{i:05d}" for i in range(len(X))], X, y)
        return produce_cams(self.params_, ds, self._cam_mode(), self.k)

    def transform(self, X, y=None):
        """Seed maps ``N x C x S x S``; absent classes are zero.

        Without ``y`` the classes are the ones the classifier predicts.
        """
        X = self._check_input(X)
        out = np.zeros((len(X), self.n_classes_, X.shape[-1], X.shape[-1]))
        for i, cam in enumerate(self._cams(X, y)):
            for c, m in cam.maps.items():
                out[i, c - 1] = upsample_nearest(m, X.shape[-2:])
        return out

    def predict(self, X, y=None):
        X = self._check_input(X)
        size = X.shape[-2:]
        return np.stack([seed_to_mask(cam, self.bg_threshold, size) for cam in self._cams(X, y)])

    def score(self, X, y):
        """Seed mIoU against ground-truth masks ``y`` (image labels come from the masks)."""
        X = self._check_input(X)
        masks = check_masks(y, len(X), X.shape[-1], self.n_classes_)
        labels = labels_from_masks(masks, self.n_classes_)
        report = evaluate(self._cams(X, labels), masks, self.n_classes_, self.bg_threshold, self.theta_fg, self.theta_bg)
        return report.miou
