"""Run directory layout and the readers ``gslm eval`` relies on.

::

    <run>/config.txt                      snapshot, written before any work
    <run>/status.txt                      OK | DIVERGED
    <run>/metrics.csv                     one row per (stage, split)
    <run>/train_log.csv                   one row per optimisation step
    <run>/stage_<i>/params/<name>.gten
    <run>/stage_<i>/cams/<split>/<id>_c<c>.gten (+ .pgm preview)
    <run>/stage_<i>/confidence/<id>_c<c>.pgm (+ .gten)  emitted for stage i+1
    <run>/stage_<i>/hist_<split>.csv
"""

from __future__ import annotations

import csv
import re
from pathlib import Path

import numpy as np

from .cam import Cam
from .io import confidence_to_byte, ensure_dir, load_tensor, save_pgm, save_tensor, unit_to_byte
from .metrics import MetricsReport

TRAIN_LOG_FIELDS = ["stage", "epoch", "step", "lr", "L_cls", "L_act", "L_total", "supervised_pixels"]
_MAP_NAME = re.compile(r"^(?P<id>.+)_c(?P<c>\d+)\.gten$")


def stage_dir(run_dir, index) -> Path:
    return Path(run_dir) / f"stage_{index}"


def metrics_fields(n_classes):
    return ["stage", "split", "mIoU"] + [f"iou_{c}" for c in range(n_classes + 1)] + [
        "m_under",
        "m_over",
        "confusion_fraction",
    ]


def _fmt(value):
    # repr round-trips doubles exactly, so re-evaluation can compare text
    return repr(float(value))


def metrics_row(stage, split, report: MetricsReport):
    row = {"stage": stage, "split": split, "mIoU": _fmt(report.miou)}
    for c, v in enumerate(report.per_class_iou):
        row[f"iou_{c}"] = _fmt(v)
    row.update(
        m_under=_fmt(report.m_under),
        m_over=_fmt(report.m_over),
        confusion_fraction=_fmt(report.confusion_fraction),
    )
    return {k: str(v) for k, v in row.items()}


def write_csv(path, fields, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in fields})


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_params(run_dir, index, params):
    out = ensure_dir(stage_dir(run_dir, index) / "params")
    for name, value in params.items():
        save_tensor(out / f"{name}.gten", value)


def read_params(run_dir, index):
    folder = stage_dir(run_dir, index) / "params"
    files = sorted(folder.glob("*.gten"))
    if not files:
        raise FileNotFoundError(f"no parameter dumps in {folder}")
    return {p.name[: -len(".gten")]: load_tensor(p) for p in files}


def write_cams(run_dir, index, split, ids, cams):
    out = ensure_dir(stage_dir(run_dir, index) / "cams" / split)
    for sid, cam in zip(ids, cams):
        for c, m in cam.maps.items():
            save_tensor(out / f"{sid}_c{c}.gten", m)
            save_pgm(out / f"{sid}_c{c}.pgm", unit_to_byte(m))


def read_cams(run_dir, index, split, ids, stage_tag=""):
    """CAMs in ``ids`` order; raises FileNotFoundError if a sample has no map."""
    folder = stage_dir(run_dir, index) / "cams" / split
    if not folder.is_dir():
        raise FileNotFoundError(f"no CAM dumps in {folder}")
    by_id = {}
    for path in sorted(folder.glob("*.gten")):
        match = _MAP_NAME.match(path.name)
        if match:
            by_id.setdefault(match["id"], {})[int(match["c"])] = load_tensor(path)
    missing = [sid for sid in ids if sid not in by_id]
    if missing:
        raise FileNotFoundError(f"{folder}: no CAM dump for sample {missing[0]}")
    return [Cam(by_id[sid], stage_tag) for sid in ids]


def write_confidence(run_dir, index, ids, confidence, exact=True):
    out = ensure_dir(stage_dir(run_dir, index) / "confidence")
    for sid, conf in zip(ids, confidence):
        for c, m in conf.maps.items():
            save_pgm(out / f"{sid}_c{c}.pgm", confidence_to_byte(m))
            if exact:
                save_tensor(out / f"{sid}_c{c}.gten", m.astype(np.float64))


def write_histogram(run_dir, index, split, report: MetricsReport):
    bins = len(report.hist_fg)
    rows = [
        {"bin_low": repr(b / bins), "fg_count": int(f), "bg_count": int(g)}
        for b, (f, g) in enumerate(zip(report.hist_fg, report.hist_bg))
    ]
    write_csv(stage_dir(run_dir, index) / f"hist_{split}.csv", ["bin_low", "fg_count", "bg_count"], rows)


def stage_indices(run_dir):
    found = []
    for p in Path(run_dir).glob("stage_*"):
        suffix = p.name[len("stage_") :]
        if p.is_dir() and suffix.isdigit():
            found.append(int(suffix))
    return sorted(found)
