"""Binary fully connected CRF with Gaussian pairwise kernels, mean-field inference.

Pairwise kernel between pixels i != j::

    k(i, j) = w_b * exp(-|p_i - p_j|^2 / 2 theta_alpha^2 - |I_i - I_j|^2 / 2 theta_beta^2)
            + w_s * exp(-|p_i - p_j|^2 / 2 theta_gamma^2)

with Potts compatibility.  Two implementations share the update rule:
``densecrf_reference`` builds the dense N x N kernel, ``densecrf_refine``
evaluates it over a circular window of radius ``truncate * max(theta)``,
where the dropped kernel mass is below ``exp(-truncate^2 / 2)`` per unit
weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numba
import numpy as np

UNARY_CLAMP = 1e-6
# marginals and weights below this are flushed to zero: subnormal operands
# slow the message loops down by more than an order of magnitude
FLUSH = 1e-100


@dataclass(frozen=True)
class CrfParams:
    iterations: int = 10
    w_spatial: float = 3.0
    theta_gamma: float = 3.0
    w_bilateral: float = 10.0
    theta_alpha: float = 30.0 * 64 / 500
    theta_beta: float = 0.1
    truncate: float = 6.5

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        for name in ("w_spatial", "theta_gamma", "w_bilateral", "theta_alpha", "theta_beta", "truncate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"CRF parameter {name} must be > 0, got {getattr(self, name)}")

    @classmethod
    def for_image_size(cls, size, **overrides):
        """Defaults with the bilateral spatial bandwidth scaled as 30 px per 500 px."""
        return cls(**{"theta_alpha": 30.0 * size / 500, **overrides})

    def with_(self, **changes):
        return replace(self, **changes)

    @property
    def radius(self):
        return int(math.ceil(self.truncate * max(self.theta_alpha, self.theta_gamma)))


def _check_inputs(image, prob):
    image = np.ascontiguousarray(image, dtype=np.float64)
    prob = np.ascontiguousarray(prob, dtype=np.float64)
    if image.ndim != 3 or prob.ndim not in (2, 3) or image.shape[1:] != prob.shape[-2:]:
        raise ValueError(f"image {image.shape} and probability {prob.shape} are not aligned")
    if prob.min() < -1e-9 or prob.max() > 1 + 1e-9 or not np.isfinite(prob).all():
        raise ValueError("foreground probability must lie in [0, 1]")
    return image, prob


def _unary_logits(prob):
    p = np.clip(prob, UNARY_CLAMP, 1.0 - UNARY_CLAMP)
    return np.log(p), np.log1p(-p)


def _mean_field(msg_fn, rowsum, prob, iterations, history):
    # label score = -unary + sum_j k_ij Q_j(label); the Potts constant cancels
    log_fg, log_bg = _unary_logits(prob)
    q_fg = np.exp(log_fg)
    q_bg = np.exp(log_bg)
    for _ in range(iterations):
        m_fg = msg_fn(q_fg)
        # background message: explicit, or row sums minus the foreground one
        m_bg = msg_fn(q_bg) if rowsum is None else rowsum - m_fg
        a = log_fg + m_fg
        b = log_bg + m_bg
        top = np.maximum(a, b)
        ea, eb = np.exp(a - top), np.exp(b - top)
        z = ea + eb
        q_fg, q_bg = ea / z, eb / z
        q_fg[q_fg < FLUSH] = 0.0
        q_bg[q_bg < FLUSH] = 0.0
        if history is not None:
            history.append((q_fg.copy(), q_bg.copy()))
    return q_fg


def densecrf_reference(image, prob, params: CrfParams, history=None):
    """O(N^2) mean-field with an explicit dense kernel matrix."""
    image, prob = _check_inputs(image, prob)
    c, h, w = image.shape
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    pos = np.stack([ys.ravel(), xs.ravel()], axis=1).astype(np.float64)
    col = image.reshape(c, -1).T
    d_pos = ((pos[:, None, :] - pos[None, :, :]) ** 2).sum(-1)
    d_col = ((col[:, None, :] - col[None, :, :]) ** 2).sum(-1)
    kernel = params.w_bilateral * np.exp(
        -d_pos / (2 * params.theta_alpha**2) - d_col / (2 * params.theta_beta**2)
    ) + params.w_spatial * np.exp(-d_pos / (2 * params.theta_gamma**2))
    np.fill_diagonal(kernel, 0.0)
    def msg(q):
        return (q.reshape(-1, h * w) @ kernel.T).reshape(q.shape)

    return _mean_field(msg, None, prob, params.iterations, history)


def _half_offsets(radius):
    offs = [
        (dy, dx)
        for dy in range(0, radius + 1)
        for dx in range(-radius, radius + 1)
        if (dy > 0 or dx > 0) and dy * dy + dx * dx <= radius * radius
    ]
    arr = np.array(offs, dtype=np.int64).reshape(-1, 2)
    return np.ascontiguousarray(arr[:, 0]), np.ascontiguousarray(arr[:, 1])


@numba.njit(cache=True, nogil=True)
def _build_weights(image, oy, ox, w_b, inv_a, inv_b, w_s, inv_g):
    c, h, w = image.shape
    n = oy.shape[0]
    wts = np.zeros((n, h, w))
    for k in range(n):
        dy = oy[k]
        dx = ox[k]
        d2 = dy * dy + dx * dx
        bil = w_b * np.exp(-d2 * inv_a)
        spa = w_s * np.exp(-d2 * inv_g)
        x0 = max(0, -dx)
        x1 = min(w, w - dx)
        for y in range(h - dy):
            for x in range(x0, x1):
                c2 = 0.0
                for ch in range(c):
                    t = image[ch, y, x] - image[ch, y + dy, x + dx]
                    c2 += t * t
                v = bil * np.exp(-c2 * inv_b) + spa
                wts[k, y, x] = v if v >= 1e-100 else 0.0
    return wts


@numba.njit(cache=True, nogil=True, fastmath=True)
def _window_message(wts, oy, ox, q):
    # q: L x H x W; each weight row is read once for all L maps.  Each half
    # offset feeds two pixels; the two directions accumulate into separate
    # arrays so the inner loop has no aliasing and vectorises.
    n, h, w = wts.shape
    nl = q.shape[0]
    near = np.zeros(q.shape)
    far = np.zeros(q.shape)
    for k in range(n):
        dy = oy[k]
        dx = ox[k]
        x0 = max(0, -dx)
        x1 = min(w, w - dx)
        for y in range(h - dy):
            wrow = wts[k, y]
            for l in range(nl):
                o_near = near[l, y]
                o_far = far[l, y + dy]
                q_near = q[l, y]
                q_far = q[l, y + dy]
                for x in range(x0, x1):
                    o_near[x] += wrow[x] * q_far[x + dx]
                    o_far[x + dx] += wrow[x] * q_near[x]
    return near + far


class CrfKernel:
    """Windowed pairwise weights for one image, reusable across classes."""

    def __init__(self, image, params: CrfParams):
        image = np.ascontiguousarray(image, dtype=np.float64)
        self.shape = image.shape[1:]
        self.params = params
        self.oy, self.ox = _half_offsets(params.radius)
        self.weights = _build_weights(
            image,
            self.oy,
            self.ox,
            params.w_bilateral,
            1.0 / (2 * params.theta_alpha**2),
            1.0 / (2 * params.theta_beta**2),
            params.w_spatial,
            1.0 / (2 * params.theta_gamma**2),
        )
        self.rowsum = self.message(np.ones(self.shape))

    def message(self, q):
        q = np.ascontiguousarray(q, dtype=np.float64)
        if q.ndim == 2:
            return _window_message(self.weights, self.oy, self.ox, q[None])[0]
        return _window_message(self.weights, self.oy, self.ox, q)


def densecrf_refine(image, prob, params: CrfParams, kernel: CrfKernel | None = None, history=None):
    """Refined per-pixel foreground marginal after ``params.iterations`` updates.

    ``prob`` may be ``H x W`` or a stack ``L x H x W`` of independent binary
    problems over the same image (one per class); stacks share each pass over
    the kernel weights.
    """
    image, prob = _check_inputs(image, prob)
    if kernel is None:
        kernel = CrfKernel(image, params)
    elif kernel.shape != prob.shape[-2:] or kernel.params != params:
        raise ValueError("precomputed CRF kernel does not match image/params")
    return _mean_field(kernel.message, kernel.rowsum, prob, params.iterations, history)
