"""TinyCamNet: four 3x3 conv blocks and a 1x1 classifier head."""

from __future__ import annotations

import numpy as np

from .autodiff import Parameter, Tensor, conv2d, global_average_pool, relu

WIDTHS = (16, 32, 64, 64)
# stride-2 convs open blocks 2 and 3, so logits come out at S/4
STRIDES = (1, 2, 2, 1)
# fixed input normalisation: [0, 1] pixels -> roughly zero-mean, unit-range
INPUT_SHIFT = 0.5
INPUT_GAIN = 4.0
# image scores are SCORE_GAIN x GAP(logits): the classifier reaches confident
# scores with logits a few units high, which keeps CAM logits on the scale of
# the bounded activation (k = 6) instead of far above it
SCORE_GAIN = 4.0


class TinyCamNet:
    """Per-pixel class logits ``f(x)``; image scores are ``SCORE_GAIN * GAP(f(x))``.

    Parameter names start with ``backbone.`` or ``head.`` so learning-rate
    groups can be addressed by prefix.
    """

    def __init__(self, n_classes, in_channels=3, seed=0):
        self.n_classes = n_classes
        self.in_channels = in_channels
        rng = np.random.default_rng(seed)
        self.params = {}
        c_in = in_channels
        for i, c_out in enumerate(WIDTHS, start=1):
            fan_in = c_in * 9
            self.params[f"backbone.conv{i}.weight"] = Parameter(
                rng.standard_normal((c_out, c_in, 3, 3)) * np.sqrt(2.0 / fan_in),
                f"backbone.conv{i}.weight",
            )
            self.params[f"backbone.conv{i}.bias"] = Parameter(np.zeros(c_out), f"backbone.conv{i}.bias")
            c_in = c_out
        self.params["head.weight"] = Parameter(
            rng.standard_normal((n_classes, c_in, 1, 1)) * np.sqrt(1.0 / c_in), "head.weight"
        )
        self.params["head.bias"] = Parameter(np.zeros(n_classes), "head.bias")

    def parameters(self):
        return list(self.params.values())

    def __call__(self, x):
        return self.forward(x)

    def forward(self, x):
        h = x if isinstance(x, Tensor) else Tensor(x)
        h = (h - INPUT_SHIFT) * INPUT_GAIN
        for i, stride in enumerate(STRIDES, start=1):
            h = conv2d(
                h,
                self.params[f"backbone.conv{i}.weight"],
                self.params[f"backbone.conv{i}.bias"],
                stride=stride,
                padding=1,
            )
            h = relu(h)
        return conv2d(h, self.params["head.weight"], self.params["head.bias"])

    def scores(self, logits):
        pooled = global_average_pool(logits)
        return pooled * SCORE_GAIN

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, state):
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, value in state.items():
            value = np.asarray(value, dtype=np.float64)
            if value.shape != self.params[name].shape:
                raise ValueError(f"{name}: shape {value.shape} != {self.params[name].shape}")
            self.params[name].data = value.copy()
            self.params[name].grad = np.zeros_like(self.params[name].data)
        return self

    @classmethod
    def from_state(cls, state, n_classes):
        in_channels = state["backbone.conv1.weight"].shape[1]
        return cls(n_classes, in_channels).load_state_dict(state)
