"""``gslm`` command line: gen-data, run, sweep, eval.

Exit codes: 0 success, 2 bad usage or input, 3 refusing to overwrite an
existing directory, 4 a training stage diverged.
"""

from __future__ import annotations

import argparse
import logging
import os
import shutil
import sys
from dataclasses import fields
from pathlib import Path

from threadpoolctl import threadpool_limits

from .config import ConfigError, RunConfig, dump_config, load_config, parse_value
from .data import load_split, read_manifest, render_dataset
from .driver import SWEEP_PARAMS, evaluate_stage, run_gslm, sweep
from .io import CorruptFileError, load_pgm
from .metrics import evaluate
from .rundir import (
    TRAIN_LOG_FIELDS,
    metrics_fields,
    metrics_row,
    read_cams,
    read_csv,
    stage_indices,
    write_cams,
    write_confidence,
    write_csv,
    write_histogram,
    write_params,
)
from .synth import generate_dataset, render_sample, sample_id

EXIT_OK, EXIT_USAGE, EXIT_CLOBBER, EXIT_DIVERGED = 0, 2, 3, 4
CONFIG_NAME = "config.txt"

log = logging.getLogger("gslm")


class UsageError(Exception):
    pass


class ClobberError(Exception):
    pass


# sweep names that live under a different config key
_SWEEP_KEYS = {"iterations": "slm_iterations"}


def _add_overrides(parser):
    group = parser.add_argument_group("config overrides")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            group.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        else:
            group.add_argument(flag, dest=f.name, metavar=f.name.upper(), default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="gslm", description=__doc__.splitlines()[0])
    parser.add_argument("-q", "--quiet", action="store_true", help="only print results and errors")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, helptext in (
        ("gen-data", "write a synthetic corpus to --out-dir"),
        ("run", "train GLM + SLM stages and write a run directory"),
        ("sweep", "one run per value of a method parameter"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--force", action="store_true", help="replace an existing output directory")
        if name == "sweep":
            p.add_argument("--param", required=True, help=f"one of {', '.join(SWEEP_PARAMS)}")
            p.add_argument("--values", required=True, help="comma-separated values")
        _add_overrides(p)

    p = sub.add_parser("eval", help="recompute a stage's metrics from a run directory")
    p.add_argument("run_dir")
    p.add_argument("--stage", type=int, default=None, help="stage index (default: last)")
    return parser


def _config_from_args(args) -> RunConfig:
    overrides = {}
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            overrides[f.name] = value
    return load_config(args.config, overrides)


def _prepare_out_dir(path, force):
    if not path:
        raise UsageError("no output directory given (--out-dir or out_dir in the config)")
    out = Path(path)
    if not out.parent.exists():
        raise UsageError(f"parent directory of {out} does not exist: {out.parent}")
    if out.exists() and (not out.is_dir() or any(out.iterdir())):
        if not force:
            raise ClobberError(f"{out} already exists; pass --force to replace it")
        if out.is_dir():
            shutil.rmtree(out)
        else:
            out.unlink()
    out.mkdir(exist_ok=True)
    return out


def _workers(config):
    return config.threads if config.threads > 0 else (os.cpu_count() or 1)


def load_corpus(config):
    """(train, eval) datasets, from ``data_dir`` or rendered in memory."""
    if config.data_dir:
        root = Path(config.data_dir)
        if not (root / "manifest.csv").is_file():
            raise UsageError(f"no manifest.csv in data directory {root}")
        return load_split(root, "train"), load_split(root, "eval")
    spec = config.scene_spec()
    train = render_dataset(spec, range(config.n_train))
    held = render_dataset(spec, range(config.n_train, config.n_train + config.n_eval))
    return train, held


def _write_stage(out, record, datasets, write_dumps):
    write_params(out, record.index, record.params)
    if not write_dumps:
        return
    for split, cams in record.cams.items():
        write_cams(out, record.index, split, datasets[split].ids, cams)
    if record.confidence is not None:
        write_confidence(out, record.index, datasets["train"].ids, record.confidence)


def write_run(out, config, state, datasets):
    """Stage dumps, metrics, histograms and the training log for a finished run."""
    n_classes = datasets["train"].n_classes
    rows = []
    slm = config.slm_config()
    for record in state.stages:
        _write_stage(out, record, datasets, config.write_cams)
        evaluate_stage(record, datasets, slm, config.bg_threshold)
        for split, report in record.metrics.items():
            rows.append(metrics_row(record.index, split, report))
            write_histogram(out, record.index, split, report)
    write_csv(out / "metrics.csv", metrics_fields(n_classes), rows)
    write_csv(out / "train_log.csv", TRAIN_LOG_FIELDS, state.train_log)
    (out / "status.txt").write_text(state.status + "\n")
    return rows


def _train_and_write(out, config, train, held, glm_params=None):
    datasets = {"train": train, "eval": held}
    state = run_gslm(
        train,
        config.glm_config(),
        config.slm_config(),
        config.slm_iterations,
        config.crf_params(),
        eval_sets={"eval": held},
        evaluate_now=False,
        glm_params=glm_params,
        workers=_workers(config),
    )
    write_run(out, config, state, datasets)
    return state


def _final_miou(state):
    return state.stages[-1].metrics["train"].miou if state.stages else float("nan")


def cmd_gen_data(config, force):
    out = _prepare_out_dir(config.out_dir, force)
    rows = generate_dataset(config.scene_spec(), config.n_train, config.n_eval, out)
    print(f"wrote {len(rows)} samples to {out}")
    return EXIT_OK


def cmd_run(config, force):
    out = _prepare_out_dir(config.out_dir, force)
    (out / CONFIG_NAME).write_text(dump_config(config))
    train, held = load_corpus(config)
    state = _train_and_write(out, config, train, held)
    if state.status != "OK":
        print(f"stage {state.diverged_stage} diverged; partial results in {out}", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"final_seed_miou={_final_miou(state)!r}")
    return EXIT_OK


def cmd_sweep(config, force, param, values_text):
    if param not in SWEEP_PARAMS:
        raise UsageError(f"unknown sweep parameter {param!r}; valid: {', '.join(SWEEP_PARAMS)}")
    key = _SWEEP_KEYS.get(param, param)
    values = [v.strip() for v in values_text.split(",") if v.strip()]
    if not values:
        raise UsageError("--values is empty")
    if len(set(values)) != len(values):
        raise UsageError("--values has duplicates")
    try:
        parsed = [parse_value(key, v) for v in values]
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    out = _prepare_out_dir(config.out_dir, force)
    (out / CONFIG_NAME).write_text(dump_config(config))
    train, held = load_corpus(config)
    datasets = {"train": train, "eval": held}
    finals = {}

    def on_run(value, state):
        sub_config = config.with_(**{key: parsed[values.index(value)]})
        sub = out / f"{param}={value}"
        sub.mkdir()
        (sub / CONFIG_NAME).write_text(dump_config(sub_config.with_(out_dir=str(sub))))
        rows = write_run(sub, sub_config, state, datasets)
        if state.status == "OK":
            finals[value] = next(r for r in reversed(rows) if r["split"] == "train")

    results = sweep(
        param,
        values,
        train,
        config.glm_config(),
        config.slm_config(),
        config.slm_iterations,
        config.crf_params(),
        {"eval": held},
        config.bg_threshold,
        on_run=on_run,
        workers=_workers(config),
    )
    # aggregate: the final train-split metrics row of every sub-run, blank if diverged
    metric_cols = metrics_fields(train.n_classes)
    rows = []
    for result in results:
        row = {"param": param, "value": result["value"], "status": result["status"]}
        row.update(finals.get(result["value"], dict.fromkeys(metric_cols, "")))
        rows.append(row)
    write_csv(out / "sweep.csv", ["param", "value", "status"] + metric_cols, rows)
    for row in rows:
        print(f"{param}={row['value']} status={row['status']} final_seed_miou={row['mIoU'] or 'nan'}")
    return EXIT_OK


def _eval_masks(config, ids):
    if config.data_dir:
        mask_dir = Path(config.data_dir) / "masks"
        return [load_pgm(mask_dir / f"{sid}.pgm") for sid in ids]
    spec = config.scene_spec()
    return [render_sample(spec, int(sid)).gt_mask for sid in ids]


def _split_ids(config, split):
    if config.data_dir:
        return [r["id"] for r in read_manifest(config.data_dir) if r["split"] == split]
    if split == "train":
        return [sample_id(i) for i in range(config.n_train)]
    return [sample_id(i) for i in range(config.n_train, config.n_train + config.n_eval)]


def cmd_eval(run_dir, stage=None):
    run = Path(run_dir)
    if not (run / CONFIG_NAME).is_file():
        raise UsageError(f"{run} is not a run directory (no {CONFIG_NAME})")
    config = load_config(run / CONFIG_NAME)
    stages = stage_indices(run)
    if not stages:
        raise UsageError(f"no stage directories in {run}")
    stage = stages[-1] if stage is None else stage
    if stage not in stages:
        raise UsageError(f"stage {stage} not found in {run}; have {stages}")
    if not (run / "metrics.csv").is_file():
        raise UsageError(f"no metrics.csv in {run}")
    stored = {(r["stage"], r["split"]): r for r in read_csv(run / "metrics.csv")}
    exit_code = EXIT_OK
    for split in ("train", "eval"):
        key = (str(stage), split)
        if key not in stored:
            continue
        ids = _split_ids(config, split)
        try:
            cams = read_cams(run, stage, split, ids)
        except FileNotFoundError as exc:
            raise UsageError(f"missing CAM dumps: {exc}") from None
        masks = _eval_masks(config, ids)
        report = evaluate(cams, masks, config.n_classes, config.bg_threshold, config.theta_fg, config.theta_bg)
        row = metrics_row(stage, split, report)
        same = row == stored[key]
        print(f"stage={stage} split={split} mIoU={row['mIoU']} {'match' if same else 'MISMATCH'}")
        if not same:
            exit_code = EXIT_USAGE
    return exit_code


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(asctime)s %(levelname)s %(message)s",
    )
    try:
        # BLAS stays single-threaded so parameters are bit-reproducible;
        # --threads only fans out per-image CRF work
        with threadpool_limits(limits=1):
            if args.command == "eval":
                return cmd_eval(args.run_dir, args.stage)
            config = _config_from_args(args)
            if args.command == "gen-data":
                return cmd_gen_data(config, args.force)
            if args.command == "run":
                return cmd_run(config, args.force)
            return cmd_sweep(config, args.force, args.param, args.values)
    except ClobberError as exc:
        print(f"gslm: {exc}", file=sys.stderr)
        return EXIT_CLOBBER
    except (UsageError, ConfigError, CorruptFileError, FileNotFoundError) as exc:
        print(f"gslm: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"gslm: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
