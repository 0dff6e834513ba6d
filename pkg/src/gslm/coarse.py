"""Confidence CAMs: three-way thresholding plus optional CRF boundary refinement."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cam import Cam, upsample_nearest
from .crf import CrfKernel, CrfParams, densecrf_refine

FG, BG, IGNORE = 1, 0, -1

# foreground probability assigned to each confidence value before the CRF
LIFT = {FG: 0.95, BG: 0.05, IGNORE: 0.5}
# refined marginals are re-split half-way between the lift levels, so a
# unary-only CRF reproduces its input map exactly
REFINED_FG_LEVEL = (LIFT[FG] + LIFT[IGNORE]) / 2
REFINED_BG_LEVEL = (LIFT[BG] + LIFT[IGNORE]) / 2


@dataclass
class ConfidenceCam:
    """Per-class maps over {1, 0, -1} at image resolution."""

    maps: dict = field(default_factory=dict)

    def classes(self):
        return sorted(self.maps)

    def confusion_fraction(self):
        if not self.maps:
            return 0.0
        total = sum(m.size for m in self.maps.values())
        return sum(int((m == IGNORE).sum()) for m in self.maps.values()) / total


def _check_thresholds(theta_fg, theta_bg):
    if not 0 <= theta_bg < theta_fg <= 1:
        raise ValueError(f"need 0 <= theta_bg < theta_fg <= 1, got theta_bg={theta_bg}, theta_fg={theta_fg}")


def confidence_map(cam_map, theta_fg, theta_bg, size=None):
    """1 where value >= theta_fg, 0 where value < theta_bg, -1 elsewhere.

    ``size`` upsamples the map (nearest neighbour) before thresholding.
    """
    _check_thresholds(theta_fg, theta_bg)
    m = np.asarray(cam_map, dtype=np.float64)
    if size is not None and m.shape[-2:] != tuple(size):
        m = upsample_nearest(m, size)
    out = np.full(m.shape, IGNORE, dtype=np.int8)
    out[m >= theta_fg] = FG
    out[m < theta_bg] = BG
    return out


def lift(conf):
    conf = np.asarray(conf)
    prob = np.full(conf.shape, LIFT[IGNORE])
    prob[conf == FG] = LIFT[FG]
    prob[conf == BG] = LIFT[BG]
    return prob


def split_refined(prob):
    out = np.full(prob.shape, IGNORE, dtype=np.int8)
    out[prob >= REFINED_FG_LEVEL] = FG
    out[prob < REFINED_BG_LEVEL] = BG
    return out


def coarse_generate(
    image,
    cam: Cam,
    theta_fg=0.30,
    theta_bg=0.05,
    params: CrfParams | None = None,
    use_boundary_constraint=True,
    kernel: CrfKernel | None = None,
) -> ConfidenceCam:
    """Confidence CAM for every class in ``cam`` at the image's resolution."""
    image = np.asarray(image, dtype=np.float64)
    size = image.shape[1:]
    classes = cam.classes()
    raw = {c: confidence_map(cam.maps[c], theta_fg, theta_bg, size) for c in classes}
    if not use_boundary_constraint or not classes:
        return ConfidenceCam(raw)
    params = params or CrfParams.for_image_size(size[0])
    stack = np.stack([lift(raw[c]) for c in classes])
    refined = densecrf_refine(image, stack, params, kernel=kernel)
    return ConfidenceCam({c: split_refined(refined[i]) for i, c in enumerate(classes)})


def dense_confidence(conf: ConfidenceCam, n_classes):
    """Stack into ``n_classes x H x W``; absent classes are all IGNORE."""
    any_map = next(iter(conf.maps.values()))
    h, w = any_map.shape
    out = np.full((n_classes, h, w), IGNORE, dtype=np.int8)
    for c, m in conf.maps.items():
        out[c - 1] = m
    return out
