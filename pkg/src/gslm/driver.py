"""General/Specific learning orchestration.

Stage 0 (GLM) trains the network on image labels only.  Every later stage
(SLM) starts from the previous stage's weights and adds the activation loss
against Confidence CAMs generated from the previous stage's maps.
"""

from __future__ import annotations

import hashlib
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import NonFiniteError, Tensor, backward, no_grad, sgd_step, zero_grad
from .cam import (
    compute_cam,
    downsample_nearest,
    max_normalized_map,
    reactivation_map,
    seed_reactivation_cam,
    upsample_nearest,
)
from .coarse import BG, FG, ConfidenceCam, coarse_generate, dense_confidence
from .crf import CrfParams
from .losses import (
    activation_loss,
    classification_loss_from_scores,
    supervised_pixels,
    total_loss,
)
from .metrics import evaluate
from .network import TinyCamNet

log = logging.getLogger(__name__)

GLM, SLM = "GLM", "SLM"
SWEEP_PARAMS = ("theta_fg", "theta_bg", "k", "alpha", "iterations")


@dataclass(frozen=True)
class StageConfig:
    kind: str = GLM
    epochs: int = 5
    batch_size: int = 16
    base_lr: float = 1.0
    alpha: float = 0.5
    k: float = 6.0
    theta_fg: float = 0.30
    theta_bg: float = 0.05
    boundary_constraint: bool = True
    seed: int = 0
    backbone_lr_scale: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-3
    power: float = 0.9
    # ablation switches: bounded maps and confidence generation
    seed_reactivation: bool = True
    coarse_generation: bool = True
    divergence_threshold: float = 1e3

    def __post_init__(self):
        if self.kind not in (GLM, SLM):
            raise ValueError(f"stage kind must be GLM or SLM, got {self.kind!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.k <= 0:
            raise ValueError(f"k must be positive, got {self.k}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")

    def with_(self, **changes):
        return replace(self, **changes)


# tuned for the from-scratch network on the synthetic corpus (see README)
GLM_DEFAULTS = {"kind": GLM, "epochs": 8, "base_lr": 0.0625, "backbone_lr_scale": 0.4}
SLM_DEFAULTS = {"kind": SLM, "epochs": 5, "base_lr": 0.1, "backbone_lr_scale": 0.1}


def default_glm_config(**kw):
    return StageConfig(**{**GLM_DEFAULTS, **kw})


def default_slm_config(**kw):
    return StageConfig(**{**SLM_DEFAULTS, **kw})


class DivergedError(RuntimeError):
    def __init__(self, stage_kind, step, loss, params):
        super().__init__(f"{stage_kind} diverged at step {step} (loss={loss})")
        self.step = step
        self.loss = loss
        self.params = params


@dataclass
class StageRecord:
    index: int
    kind: str
    cam_mode: str  # "max" (global-max normalised) or "bounded"
    params: dict
    cams: dict = field(default_factory=dict)  # split -> list[Cam]
    confidence: list | None = None  # emitted for the next stage
    confidence_hash: str | None = None
    consumed_hash: str | None = None
    init_params: dict | None = None
    metrics: dict = field(default_factory=dict)  # split -> MetricsReport


@dataclass
class RunState:
    stages: list = field(default_factory=list)
    train_log: list = field(default_factory=list)
    status: str = "OK"
    diverged_stage: int | None = None

    @property
    def params(self):
        return self.stages[-1].params if self.stages else None

    def miou_trajectory(self, split="train"):
        return [s.metrics[split].miou for s in self.stages if split in s.metrics]


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def _param_groups(config):
    return {"backbone.": config.backbone_lr_scale, "head.": 1.0}


def _train(init_state, dataset, config, stage_index, supervision=None, train_log=None):
    """Shared SGD loop; ``supervision`` is N x C x h x w in {1, 0, -1} or None."""
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    net = TinyCamNet(dataset.n_classes, seed=config.seed)
    if init_state is not None:
        net.load_state_dict(init_state)
    params = net.parameters()
    rng = np.random.default_rng([config.seed, stage_index])
    steps_per_epoch = math.ceil(n / config.batch_size)
    max_it = config.epochs * steps_per_epoch
    velocity = {}
    groups = _param_groups(config)
    it = 0
    for epoch in range(config.epochs):
        for idx in _batches(n, config.batch_size, rng):
            try:
                logits = net(Tensor(dataset.images[idx]))
                cls = classification_loss_from_scores(net.scores(logits), dataset.labels[idx])
                act_value, n_sup = 0.0, 0
                if supervision is not None and config.alpha > 0:
                    target = supervision[idx]
                    cam = (
                        reactivation_map(logits, config.k)
                        if config.seed_reactivation
                        else max_normalized_map(logits)
                    )
                    act = activation_loss(cam, target)
                    loss = total_loss(cls, act, config.alpha)
                    act_value, n_sup = float(act.data), supervised_pixels(target)
                else:
                    loss = cls
                value = float(loss.data)
                if not math.isfinite(value) or value > config.divergence_threshold:
                    raise DivergedError(config.kind, it, value, net.state_dict())
                zero_grad(params)
                backward(loss)
                lr = sgd_step(
                    params,
                    config.base_lr,
                    it,
                    max_it,
                    power=config.power,
                    weight_decay=config.weight_decay,
                    per_group_lr_scale=groups,
                    momentum=config.momentum,
                    velocity=velocity,
                )
            except NonFiniteError as exc:
                raise DivergedError(config.kind, it, float("nan"), net.state_dict()) from exc
            if train_log is not None:
                train_log.append(
                    {
                        "stage": stage_index,
                        "epoch": epoch,
                        "step": it,
                        "lr": lr,
                        "L_cls": float(cls.data),
                        "L_act": act_value,
                        "L_total": value,
                        "supervised_pixels": n_sup,
                    }
                )
            it += 1
    return net.state_dict()


def train_glm(dataset, config: StageConfig, train_log=None, init_state=None):
    """Image-label-only training from a fresh (seeded) initialisation."""
    if config.kind != GLM:
        raise ValueError("train_glm needs a GLM stage config")
    return _train(init_state, dataset, config, 0, None, train_log)


def train_slm(init_params, confidence_source, dataset, config: StageConfig, train_log=None, stage_index=1):
    """Continue training ``init_params`` with classification + activation loss.

    ``confidence_source`` holds one ConfidenceCam per training sample, at image
    resolution; it is downsampled (nearest) to the logit grid here.
    """
    if config.kind != SLM:
        raise ValueError("train_slm needs an SLM stage config")
    if len(confidence_source) != len(dataset):
        raise ValueError(
            f"supervision covers {len(confidence_source)} samples, dataset has {len(dataset)}"
        )
    target = supervision_tensor(confidence_source, dataset.n_classes, logit_size(dataset.size))
    return _train(init_params, dataset, config, stage_index, target, train_log)


def logit_size(image_size):
    return (image_size // 4, image_size // 4)


def supervision_tensor(confidence, n_classes, size):
    out = []
    for i, conf in enumerate(confidence):
        if conf is None:
            raise ValueError(f"missing supervision for sample {i}")
        out.append(downsample_nearest(dense_confidence(conf, n_classes), size))
    return np.stack(out)


def forward_logits(params, images, n_classes, chunk=64):
    net = TinyCamNet(n_classes).load_state_dict(params)
    out = []
    with no_grad():
        for start in range(0, len(images), chunk):
            out.append(net(Tensor(images[start : start + chunk])).data)
    return np.concatenate(out)


def produce_cams(params, dataset, cam_mode, k=6.0, stage_tag="GLM"):
    logits = forward_logits(params, dataset.images, dataset.n_classes)
    if cam_mode == "max":
        return [compute_cam(lg, y, stage_tag) for lg, y in zip(logits, dataset.labels)]
    return [seed_reactivation_cam(lg, y, k, stage_tag) for lg, y in zip(logits, dataset.labels)]


def _confidence_one(image, cam, config, crf_params, size):
    if not config.coarse_generation:
        # ablation: dense supervision from a single threshold, no ignore band, no CRF
        maps = {}
        for c in cam.classes():
            up = upsample_nearest(cam.maps[c], size)
            maps[c] = np.where(up >= config.theta_fg, FG, BG).astype(np.int8)
        return ConfidenceCam(maps)
    return coarse_generate(
        image,
        cam,
        config.theta_fg,
        config.theta_bg,
        crf_params,
        config.boundary_constraint,
    )


def produce_confidence_cams(cams, dataset, config: StageConfig, crf_params=None, workers=1):
    """Confidence CAMs (image resolution) for every sample of ``dataset``.

    ``workers > 1`` refines images on a thread pool (the CRF kernels release
    the GIL); results are identical to the serial path.
    """
    size = (dataset.size, dataset.size)
    crf_params = crf_params or CrfParams.for_image_size(dataset.size)
    if len(cams) != len(dataset):
        raise ValueError(f"{len(cams)} CAMs for {len(dataset)} samples")
    if workers <= 1:
        return [_confidence_one(im, cam, config, crf_params, size) for im, cam in zip(dataset.images, cams)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(
            pool.map(lambda pair: _confidence_one(pair[0], pair[1], config, crf_params, size), zip(dataset.images, cams))
        )


def confidence_hash(confidence):
    h = hashlib.sha256()
    for conf in confidence:
        for c in conf.classes():
            h.update(np.int64(c).tobytes())
            h.update(np.ascontiguousarray(conf.maps[c], dtype=np.int8).tobytes())
    return h.hexdigest()


def _cam_mode(kind, config):
    return "bounded" if kind == SLM and config.seed_reactivation else "max"


def _record_stage(index, kind, params, train, eval_sets, slm_config, evaluate_now, bg_threshold):
    mode = _cam_mode(kind, slm_config)
    tag = GLM if kind == GLM else f"SLM-{index}"
    record = StageRecord(index=index, kind=kind, cam_mode=mode, params=params)
    for split, ds in {"train": train, **(eval_sets or {})}.items():
        record.cams[split] = produce_cams(params, ds, mode, slm_config.k, tag)
    if evaluate_now:
        evaluate_stage(record, {"train": train, **(eval_sets or {})}, slm_config, bg_threshold)
    return record


def evaluate_stage(record, datasets, config, bg_threshold=0.15):
    for split, ds in datasets.items():
        if split not in record.cams:
            continue
        record.metrics[split] = evaluate(
            record.cams[split],
            ds.gt_masks(),
            ds.n_classes,
            bg_threshold,
            config.theta_fg,
            config.theta_bg,
        )
    return record


def run_gslm(
    train,
    glm_config: StageConfig,
    slm_config: StageConfig,
    n_slm_iterations: int = 3,
    crf_params: CrfParams | None = None,
    eval_sets=None,
    evaluate_now=True,
    bg_threshold=0.15,
    glm_params=None,
    on_stage=None,
    workers=1,
):
    """GLM, then ``n_slm_iterations`` SLM stages, each fed by its predecessor.

    ``eval_sets`` maps split names to extra datasets whose CAMs are recorded
    (never trained on).  ``evaluate_now=False`` skips every ground-truth read
    so masks can be absent during training; call :func:`evaluate_stage` later.
    ``on_stage(record, state)`` runs after each stage is complete.
    """
    if n_slm_iterations < 0:
        raise ValueError("n_slm_iterations must be >= 0")
    state = RunState()
    try:
        if glm_params is None:
            glm_params = train_glm(train, glm_config, state.train_log)
        record = _record_stage(0, GLM, glm_params, train, eval_sets, slm_config, evaluate_now, bg_threshold)
        state.stages.append(record)
        for i in range(1, n_slm_iterations + 1):
            prev = state.stages[-1]
            prev.confidence = produce_confidence_cams(prev.cams["train"], train, slm_config, crf_params, workers)
            prev.confidence_hash = confidence_hash(prev.confidence)
            if on_stage:
                on_stage(prev, state)
            log.info("stage %d: training SLM from stage %d", i, prev.index)
            params = train_slm(prev.params, prev.confidence, train, slm_config, state.train_log, i)
            record = _record_stage(i, SLM, params, train, eval_sets, slm_config, evaluate_now, bg_threshold)
            record.init_params = prev.params
            record.consumed_hash = confidence_hash(prev.confidence)
            state.stages.append(record)
        if on_stage:
            on_stage(state.stages[-1], state)
    except DivergedError as exc:
        log.warning("%s", exc)
        state.status = "DIVERGED"
        state.diverged_stage = len(state.stages)
    return state


def sweep(
    parameter_name,
    values,
    train,
    glm_config,
    slm_config,
    n_slm_iterations=3,
    crf_params=None,
    eval_sets=None,
    bg_threshold=0.15,
    on_run=None,
    workers=1,
):
    """One run per value, sharing seeds and the (value-independent) GLM stage.

    Returns rows with the swept value, run status and, for completed runs,
    final-stage metrics.
    """
    if parameter_name not in SWEEP_PARAMS:
        raise ValueError(f"unknown sweep parameter {parameter_name!r}; choose from {', '.join(SWEEP_PARAMS)}")
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    glm_params = train_glm(train, glm_config)
    rows = []
    for value in values:
        cfg, n_iter = slm_config, n_slm_iterations
        if parameter_name == "iterations":
            n_iter = int(value)
        else:
            cfg = slm_config.with_(**{parameter_name: float(value)})
        state = run_gslm(
            train, glm_config, cfg, n_iter, crf_params, eval_sets, True, bg_threshold, glm_params, workers=workers
        )
        row = {"param": parameter_name, "value": value, "status": state.status}
        # a diverged run has no final stage; its partial stages stay in ``state``
        if state.status == "OK" and "train" in state.stages[-1].metrics:
            rep = state.stages[-1].metrics["train"]
            row.update(final_seed_miou=rep.miou, m_under=rep.m_under, m_over=rep.m_over)
        rows.append(row)
        if on_run:
            on_run(value, state)
    return rows
