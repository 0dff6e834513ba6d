"""Flat key-value run configuration.

File format: one ``key = value`` per line, ``#`` starts a comment.  Unknown
keys are rejected.  Precedence is command line > file > defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .crf import CrfParams
from .driver import StageConfig, default_glm_config, default_slm_config
from .synth import SceneSpec


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # paths; an empty data_dir renders the corpus in memory from the fields below
    out_dir: str = ""
    data_dir: str = ""
    # corpus
    size: int = 64
    n_classes: int = 4
    n_train: int = 500
    n_eval: int = 100
    data_seed: int = 0
    tint_gain: float = 0.3
    # optimisation
    seed: int = 0
    glm_epochs: int = 8
    glm_lr: float = 0.0625
    glm_backbone_lr_scale: float = 0.4
    slm_epochs: int = 5
    slm_lr: float = 0.1
    slm_backbone_lr_scale: float = 0.1
    batch_size: int = 16
    momentum: float = 0.9
    weight_decay: float = 0.001
    power: float = 0.9
    divergence_threshold: float = 1000.0
    # method
    slm_iterations: int = 3
    alpha: float = 0.5
    k: float = 6.0
    theta_fg: float = 0.30
    theta_bg: float = 0.05
    boundary_constraint: bool = True
    seed_reactivation: bool = True
    coarse_generation: bool = True
    bg_threshold: float = 0.15
    # dense CRF; crf_theta_alpha <= 0 means 30 px per 500 px of image size
    crf_iterations: int = 10
    crf_w_spatial: float = 3.0
    crf_theta_gamma: float = 3.0
    crf_w_bilateral: float = 10.0
    crf_theta_alpha: float = 0.0
    crf_theta_beta: float = 0.1
    crf_truncate: float = 6.5
    # execution
    threads: int = 0
    write_cams: bool = True

    def scene_spec(self):
        return SceneSpec(size=self.size, n_classes=self.n_classes, tint_gain=self.tint_gain, seed=self.data_seed)

    def glm_config(self):
        return default_glm_config(
            epochs=self.glm_epochs,
            base_lr=self.glm_lr,
            backbone_lr_scale=self.glm_backbone_lr_scale,
            **self._shared_stage_fields(),
        )

    def slm_config(self):
        return default_slm_config(
            epochs=self.slm_epochs,
            base_lr=self.slm_lr,
            backbone_lr_scale=self.slm_backbone_lr_scale,
            **self._shared_stage_fields(),
        )

    def _shared_stage_fields(self):
        return dict(
            batch_size=self.batch_size,
            alpha=self.alpha,
            k=self.k,
            theta_fg=self.theta_fg,
            theta_bg=self.theta_bg,
            boundary_constraint=self.boundary_constraint,
            seed=self.seed,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            power=self.power,
            seed_reactivation=self.seed_reactivation,
            coarse_generation=self.coarse_generation,
            divergence_threshold=self.divergence_threshold,
        )

    def crf_params(self):
        theta_alpha = self.crf_theta_alpha if self.crf_theta_alpha > 0 else 30.0 * self.size / 500
        return CrfParams(
            iterations=self.crf_iterations,
            w_spatial=self.crf_w_spatial,
            theta_gamma=self.crf_theta_gamma,
            w_bilateral=self.crf_w_bilateral,
            theta_alpha=theta_alpha,
            theta_beta=self.crf_theta_beta,
            truncate=self.crf_truncate,
        )

    def with_(self, **changes):
        return dataclasses.replace(self, **changes)


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_value(key, text):
    if key not in FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = FIELD_TYPES[key]
    text = str(text).strip()
    try:
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad value {text!r} for {key} ({kind})") from exc
    return text


def format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            values[key] = parse_value(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return values


def load_config(path=None, overrides=None) -> RunConfig:
    values = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc.strerror}") from exc
        values.update(parse_config_text(text, str(p)))
    for key, value in (overrides or {}).items():
        values[key] = parse_value(key, value) if isinstance(value, str) else value
    return RunConfig(**values)


def dump_config(config: RunConfig) -> str:
    return "".join(f"{f.name} = {format_value(getattr(config, f.name))}\n" for f in fields(config))
