"""Minimal reverse-mode autodiff over float64 numpy arrays.

Every op records its parents and a closure mapping the upstream gradient to
one gradient per parent.  ``backward`` replays reachable nodes in reverse
creation order, which is a valid reverse topological order because a node is
always created after its inputs.
"""

from __future__ import annotations

import contextlib
import itertools

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_ids = itertools.count()
_grad_enabled = True


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared in a tensor."""


@contextlib.contextmanager
def no_grad():
    """Build no tape inside the block (inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(data, what):
    if not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite values produced by {what}")


class Tensor:
    """Dense float64 array with an optional tape entry."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, _op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        _check_finite(self.data, _op)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad and not _parents else None
        self._parents = _parents
        self._backward = _backward
        self._op = _op
        self._id = next(_ids)

    @classmethod
    def _from_op(cls, data, parents, backward, op):
        track = _grad_enabled and any(p.requires_grad for p in parents)
        if not track:
            return cls(data, _op=op)
        return cls(data, requires_grad=True, _parents=tuple(parents), _backward=backward, _op=op)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op})"

    def backward(self):
        backward(self)

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self, axis=None):
        return tensor_sum(self, axis)

    def mean(self, axis=None):
        return tensor_mean(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


class Parameter(Tensor):
    """Trainable leaf with a stable name and an accumulated gradient."""

    def __init__(self, data, name):
        super().__init__(np.array(data, dtype=np.float64, copy=True), requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
    if loss.data.shape != ():
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    nodes = {}
    stack = [loss]
    while stack:
        node = stack.pop()
        if node._id in nodes:
            continue
        nodes[node._id] = node
        stack.extend(p for p in node._parents if p.requires_grad)
    grads = {loss._id: np.ones((), dtype=np.float64)}
    for nid in sorted(nodes, reverse=True):
        node = nodes[nid]
        g = grads.pop(nid, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = pg


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._from_op(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._from_op(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._from_op(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def _bw(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return Tensor._from_op(out, (a, b), _bw, "div")


def tensor_sum(x, axis=None):
    x = as_tensor(x)
    out = x.data.sum(axis=axis)

    def _bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._from_op(out, (x,), _bw, "sum")


def tensor_mean(x, axis=None):
    x = as_tensor(x)
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tensor_sum(x, axis), 1.0 / count)


def reshape(x, shape):
    x = as_tensor(x)
    return Tensor._from_op(
        x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape"
    )


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor._from_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def relu_k(x, k):
    """Clamp to ``[0, k]``; gradient flows only strictly inside the interval."""
    if not k > 0:
        raise ValueError(f"relu_k needs k > 0, got {k}")
    x = as_tensor(x)
    mask = (x.data > 0) & (x.data < k)
    return Tensor._from_op(np.clip(x.data, 0.0, k), (x,), lambda g: (g * mask,), "relu_k")


def sigmoid(x):
    x = as_tensor(x)
    v = x.data
    e = np.exp(-np.abs(v))
    out = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Tensor._from_op(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def global_average_pool(x):
    """Mean over the two trailing spatial axes: (..., H, W) -> (...)."""
    x = as_tensor(x)
    h, w = x.shape[-2:]
    if h * w < 1:
        raise ValueError("global_average_pool needs a non-empty spatial extent")
    inv = 1.0 / (h * w)
    return Tensor._from_op(
        x.data.mean(axis=(-2, -1)),
        (x,),
        lambda g: (np.broadcast_to(g[..., None, None] * inv, x.shape).copy(),),
        "gap",
    )


def spatial_max(x):
    """Max over the two trailing axes, kept as size-1 axes for broadcasting.

    The gradient goes to the first maximal cell in row-major order.
    """
    x = as_tensor(x)
    lead = x.shape[:-2]
    flat = x.data.reshape(lead + (-1,))
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., None]

    def _bw(g):
        gf = np.zeros_like(flat)
        np.put_along_axis(gf, idx[..., None], g.reshape(lead + (1,)), axis=-1)
        return (gf.reshape(x.shape),)

    return Tensor._from_op(out, (x,), _bw, "spatial_max")


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of ``C_in x H x W`` (or batched ``N x C_in x H x W``)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 4:
        raise ValueError(f"kernel must be C_out x C_in x k_h x k_w, got shape {weight.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"invalid stride={stride} / padding={padding}")
    single = x.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4:
        raise ValueError(f"input must be C x H x W or N x C x H x W, got shape {x.shape}")
    n, c, h, w = xd.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ValueError(f"input has {c} channels but kernel expects {ci} (kernel {weight.shape})")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"kernel extents must be odd, got {kh}x{kw}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < kh or wp < kw:
        raise ValueError(f"padded input {hp}x{wp} smaller than kernel {kh}x{kw}")
    ho, wo = (hp - kh) // stride + 1, (wp - kw) // stride + 1
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (o,):
            raise ValueError(f"bias shape {bias.shape} does not match {o} output channels")

    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)
    wmat = weight.data.reshape(o, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))
    if single:
        out = out[0]

    def _bw(g):
        g4 = g[None] if single else g
        gm = g4.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (gm.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (gm @ wmat).reshape(n, ho, wo, c, kh, kw)
            dxp = np.zeros((n, c, hp, wp))
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            gx = dxp[:, :, padding : padding + h, padding : padding + w]
            gx = gx[0] if single else gx
        if bias is None:
            return gx, gw
        return gx, gw, g4.sum(axis=(0, 2, 3))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, _bw, "conv2d")


def poly_lr(base_lr, iteration, max_iterations, power):
    """Polynomial decay: ``base_lr * (1 - iteration / max_iterations) ** power``."""
    if base_lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {base_lr}")
    if not 0 <= iteration < max_iterations:
        raise ValueError(f"iteration {iteration} outside [0, {max_iterations})")
    return base_lr * (1.0 - iteration / max_iterations) ** power


def lr_scale_for(name, per_group_lr_scale):
    """Scale of the longest matching name prefix, 1.0 if none matches."""
    best, scale = -1, 1.0
    for prefix, s in (per_group_lr_scale or {}).items():
        if name.startswith(prefix) and len(prefix) > best:
            best, scale = len(prefix), s
    return scale


def sgd_step(
    params,
    base_lr,
    iteration,
    max_iterations,
    power=0.9,
    weight_decay=0.0,
    per_group_lr_scale=None,
    momentum=0.0,
    velocity=None,
):
    """One SGD update with poly-decayed learning rate; returns the lr used.

    With ``momentum == 0`` the update is
    ``p -= lr * scale * (grad + weight_decay * p)``.  With momentum, the
    bracketed term is accumulated into ``velocity[name]`` first.
    """
    if weight_decay < 0 or momentum < 0:
        raise ValueError("weight_decay and momentum must be non-negative")
    lr = poly_lr(base_lr, iteration, max_iterations, power)
    for p in params:
        step = p.grad + weight_decay * p.data
        if momentum:
            if velocity is None:
                raise ValueError("momentum needs a velocity dict")
            buf = velocity.get(p.name)
            buf = step.copy() if buf is None else momentum * buf + step
            velocity[p.name] = buf
            step = buf
        p.data -= lr * lr_scale_for(p.name, per_group_lr_scale) * step
        _check_finite(p.data, f"sgd_step on {p.name}")
    return lr


def zero_grad(params):
    for p in params:
        p.zero_grad()
