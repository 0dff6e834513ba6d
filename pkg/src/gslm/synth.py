"""Deterministic synthetic multi-label segmentation corpus.

Each class is drawn as a large, low-contrast tinted body with a small,
high-contrast striped part stuck to one end.  A classifier can solve the
task from the part alone, so its activation maps tend to stay on the part
while the ground-truth mask covers the whole object.

Randomness comes only from the raw 64-bit output of PCG64 seeded with
``SeedSequence([seed, index])``; floats are built as ``(raw >> 11) * 2**-53``
and all geometry is integer raster arithmetic, so corpora are bit-identical
across machines.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .io import ensure_dir, save_pgm, save_tensor


@dataclass(frozen=True)
class ClassRecipe:
    name: str
    body: str  # "ellipse" | "rect"
    body_tint: tuple
    part: str  # "square" | "triangle" | "diamond" | "disc"
    stripes: str  # "h" | "v" | "diag" | "checker"
    part_colors: tuple


DEFAULT_RECIPES = (
    ClassRecipe("bar", "ellipse", (0.10, 0.0, 0.0), "square", "h", ((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))),
    ClassRecipe("post", "rect", (0.0, 0.10, 0.0), "triangle", "v", ((0.05, 0.05, 0.05), (1.0, 0.95, 0.1))),
    ClassRecipe("kite", "ellipse", (0.0, 0.0, 0.10), "diamond", "diag", ((0.1, 0.2, 0.95), (1.0, 1.0, 1.0))),
    ClassRecipe("badge", "rect", (0.08, 0.08, -0.08), "disc", "checker", ((0.95, 0.1, 0.1), (0.0, 0.0, 0.0))),
)


@dataclass(frozen=True)
class SceneSpec:
    size: int = 64
    n_classes: int = 4
    recipes: tuple = DEFAULT_RECIPES
    body_gray: float = 0.60
    # scales every recipe's body tint; small values keep bodies close to gray so
    # the stripe part is the most discriminative cue
    tint_gain: float = 0.3
    bg_gray_range: tuple = (0.22, 0.40)
    bg_blotches: int = 3
    bg_blotch_amp: float = 0.05
    body_long_range: tuple = (11, 15)  # half-extent along the object's axis
    body_short_range: tuple = (7, 10)
    part_half: int = 3
    max_objects: int = 2
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 1:
            raise ValueError("SceneSpec needs at least one class")
        if len(self.recipes) < self.n_classes:
            raise ValueError(f"{self.n_classes} classes but only {len(self.recipes)} recipes")
        if self.max_objects < 1:
            raise ValueError("max_objects must be >= 1")


@dataclass
class Sample:
    image: np.ndarray  # 3 x S x S in [0, 1]
    labels: np.ndarray  # length C, {0, 1}
    gt_mask: np.ndarray  # S x S uint8, 0 = background, c = class c (1-based)
    part_area: dict = field(default_factory=dict)
    body_area: dict = field(default_factory=dict)


class _Stream:
    """Uniform draws from PCG64's raw stream."""

    def __init__(self, seed, index):
        self._bg = np.random.PCG64(np.random.SeedSequence([int(seed), int(index)]))

    def uniform(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        raw = self._bg.random_raw(n)
        u = (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return float(u[0]) if size is None else u.reshape(size)

    def randint(self, lo, hi):
        """Integer in the closed range ``[lo, hi]``."""
        return lo + min(int(self.uniform() * (hi - lo + 1)), hi - lo)


def _part_mask(kind, half):
    r = np.arange(-half, half + 1)
    dy, dx = np.meshgrid(r, r, indexing="ij")
    if kind == "square":
        return np.ones(dy.shape, dtype=bool)
    if kind == "diamond":
        return np.abs(dy) + np.abs(dx) <= half
    if kind == "disc":
        return dy * dy + dx * dx <= half * half + half
    if kind == "triangle":
        # apex at the top row, base on the bottom row
        return np.abs(dx) <= (dy + half + 1) // 2
    raise ValueError(f"unknown part shape {kind!r}")


def _stripe_pattern(kind, ys, xs):
    if kind == "h":
        return ys % 2
    if kind == "v":
        return xs % 2
    if kind == "diag":
        return ((xs + ys) // 2) % 2
    if kind == "checker":
        return (xs // 2 + ys // 2) % 2
    raise ValueError(f"unknown stripe pattern {kind!r}")


def _object_layout(spec, rs, cls):
    """Sample an object's geometry relative to its center: (body, part, bbox)."""
    recipe = spec.recipes[cls]
    a = rs.randint(*spec.body_long_range)
    b = rs.randint(*spec.body_short_range)
    vertical = rs.randint(0, 1) == 1
    sign = 1 if rs.randint(0, 1) else -1
    hy, hx = (a, b) if vertical else (b, a)
    h = spec.part_half
    # the part overlaps the body's end by one pixel
    off = a + h - 1
    py, px = (sign * off, 0) if vertical else (0, sign * off)
    ys = np.arange(-hy, hy + 1)
    xs = np.arange(-hx, hx + 1)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    if recipe.body == "ellipse":
        # integer ellipse test: (y/hy)^2 + (x/hx)^2 <= 1
        body = yy * yy * hx * hx + xx * xx * hy * hy <= hy * hy * hx * hx
    else:
        body = np.ones(yy.shape, dtype=bool)
    part = _part_mask(recipe.part, h)
    top = min(-hy, py - h)
    left = min(-hx, px - h)
    bottom = max(hy, py + h)
    right = max(hx, px + h)
    return (hy, hx, body), (py, px, part), (top, left, bottom, right)


def render_sample(spec: SceneSpec, index: int) -> Sample:
    """Render sample ``index``; a pure function of ``(spec, index)``."""
    if index < 0:
        raise ValueError(f"index must be >= 0, got {index}")
    s = spec.size
    rs = _Stream(spec.seed, index)

    gray = spec.bg_gray_range[0] + (spec.bg_gray_range[1] - spec.bg_gray_range[0]) * rs.uniform()
    image = np.empty((3, s, s))
    for ch in range(3):
        image[ch] = gray + 0.03 * (rs.uniform() - 0.5)
    for _ in range(spec.bg_blotches):
        y0, x0 = rs.randint(0, s - 1), rs.randint(0, s - 1)
        y1, x1 = min(s, y0 + rs.randint(8, s // 2)), min(s, x0 + rs.randint(8, s // 2))
        image[:, y0:y1, x0:x1] += spec.bg_blotch_amp * (2.0 * rs.uniform() - 1.0)

    n_obj = rs.randint(1, min(spec.max_objects, spec.n_classes))
    classes = []
    pool = list(range(spec.n_classes))
    for _ in range(n_obj):
        classes.append(pool.pop(rs.randint(0, len(pool) - 1)))

    gt = np.zeros((s, s), dtype=np.uint8)
    boxes = []
    sample = Sample(image=image, labels=np.zeros(spec.n_classes), gt_mask=gt)
    for slot, cls in enumerate(classes):
        (hy, hx, body), (py, px, part), (top, left, bottom, right) = _object_layout(spec, rs, cls)
        placed = None
        for _ in range(64):
            cy = rs.randint(-top, s - 1 - bottom)
            cx = rs.randint(-left, s - 1 - right)
            box = (cy + top, cx + left, cy + bottom, cx + right)
            # two-pixel gap keeps objects of different classes apart
            if all(
                box[2] + 2 < o[0] or o[2] + 2 < box[0] or box[3] + 2 < o[1] or o[3] + 2 < box[1]
                for o in boxes
            ):
                placed = (cy, cx, box)
                break
        if placed is None:
            if slot == 0:
                raise RuntimeError("could not place the first object; scene too small")
            continue
        cy, cx, box = placed
        boxes.append(box)
        recipe = spec.recipes[cls]
        label = cls + 1

        by, bx = np.nonzero(body)
        by, bx = by + cy - hy, bx + cx - hx
        tint = spec.tint_gain * np.asarray(recipe.body_tint)
        image[:, by, bx] = (spec.body_gray + tint)[:, None]
        gt[by, bx] = label

        qy, qx = np.nonzero(part)
        qy, qx = qy + cy + py - spec.part_half, qx + cx + px - spec.part_half
        pattern = _stripe_pattern(recipe.stripes, qy, qx)
        colors = np.asarray(recipe.part_colors)
        image[:, qy, qx] = colors[pattern].T
        gt[qy, qx] = label

        part_px = len(qy)
        body_px = int((gt == label).sum()) - part_px
        if body_px < 4 * part_px:
            raise AssertionError(
                f"sample {index}: class {label} body area {body_px} < 4 x part area {part_px}"
            )
        sample.part_area[label] = part_px
        sample.body_area[label] = body_px

    image += spec.noise * (2.0 * rs.uniform((3, s, s)) - 1.0)
    np.clip(image, 0.0, 1.0, out=image)
    for c in range(spec.n_classes):
        sample.labels[c] = float((gt == c + 1).any())
    return sample


def labels_to_bits(labels) -> str:
    return "".join("1" if v else "0" for v in np.asarray(labels) > 0.5)


def bits_to_labels(bits: str) -> np.ndarray:
    return np.array([1.0 if ch == "1" else 0.0 for ch in bits])


def sample_id(index: int) -> str:
    return f"{index:05d}"


def generate_dataset(spec: SceneSpec, n_train: int, n_eval: int, out_dir) -> list:
    """Write a corpus under ``out_dir``; returns the manifest rows.

    Layout: ``images/<id>.gten``, ``masks/<id>.pgm``, ``manifest.csv`` with
    columns ``id, split, labels`` (label bitstring, class 1 first).
    """
    if n_train < 1 or n_eval < 1:
        raise ValueError(f"n_train and n_eval must be >= 1, got {n_train}, {n_eval}")
    root = Path(out_dir)
    img_dir = ensure_dir(root / "images")
    mask_dir = ensure_dir(root / "masks")
    rows = []
    for index in range(n_train + n_eval):
        sample = render_sample(spec, index)
        sid = sample_id(index)
        save_tensor(img_dir / f"{sid}.gten", sample.image)
        save_pgm(mask_dir / f"{sid}.pgm", sample.gt_mask)
        split = "train" if index < n_train else "eval"
        rows.append({"id": sid, "split": split, "labels": labels_to_bits(sample.labels)})
    with open(root / "manifest.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["id", "split", "labels"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return rows
