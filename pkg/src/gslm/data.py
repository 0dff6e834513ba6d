"""In-memory datasets and corpus loading.

Training code only ever touches ``ids``, ``images`` and ``labels``; ground
truth is reachable solely through :meth:`Dataset.gt_masks`, which evaluation
calls.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .io import load_pgm, load_tensor
from .synth import SceneSpec, bits_to_labels, render_sample, sample_id


@dataclass
class Dataset:
    ids: list
    images: np.ndarray  # N x 3 x S x S
    labels: np.ndarray  # N x C
    mask_dir: Path | None = None
    masks: np.ndarray | None = None

    def __len__(self):
        return len(self.ids)

    @property
    def n_classes(self):
        return self.labels.shape[1]

    @property
    def size(self):
        return self.images.shape[-1]

    def gt_masks(self):
        if self.masks is not None:
            return self.masks
        if self.mask_dir is None:
            raise FileNotFoundError("dataset has no ground-truth masks")
        return np.stack([load_pgm(self.mask_dir / f"{sid}.pgm") for sid in self.ids])

    def subset(self, idx):
        idx = list(idx)
        return Dataset(
            [self.ids[i] for i in idx],
            self.images[idx],
            self.labels[idx],
            self.mask_dir,
            None if self.masks is None else self.masks[idx],
        )


def render_dataset(spec: SceneSpec, indices) -> Dataset:
    samples = [render_sample(spec, i) for i in indices]
    return Dataset(
        [sample_id(i) for i in indices],
        np.stack([s.image for s in samples]),
        np.stack([s.labels for s in samples]),
        masks=np.stack([s.gt_mask for s in samples]),
    )


def read_manifest(root):
    path = Path(root) / "manifest.csv"
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def load_split(root, split) -> Dataset:
    root = Path(root)
    rows = [r for r in read_manifest(root) if r["split"] == split]
    if not rows:
        raise ValueError(f"no samples in split {split!r} under {root}")
    ids = [r["id"] for r in rows]
    images = np.stack([load_tensor(root / "images" / f"{sid}.gten") for sid in ids])
    labels = np.stack([bits_to_labels(r["labels"]) for r in rows])
    return Dataset(ids, images, labels, mask_dir=root / "masks")
