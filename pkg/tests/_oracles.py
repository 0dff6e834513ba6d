"""Slow, obviously-correct reference implementations used by the tests."""

import math

import numpy as np


def central_diff(f, x, eps=1e-6):
    """d f / d x by central differences; ``f`` maps an array to a float."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        hi = f(x)
        x[i] = old - eps
        lo = f(x)
        x[i] = old
        grad[i] = (hi - lo) / (2 * eps)
    return grad


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-8))


def conv2d_loops(x, w, b=None, stride=1, padding=0):
    c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.zeros((c, h + 2 * padding, wd + 2 * padding))
    xp[:, padding : padding + h, padding : padding + wd] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((o, ho, wo))
    for oc in range(o):
        for i in range(ho):
            for j in range(wo):
                s = 0.0
                for ic in range(c):
                    for u in range(kh):
                        for v in range(kw):
                            s += xp[ic, i * stride + u, j * stride + v] * w[oc, ic, u, v]
                out[oc, i, j] = s + (0.0 if b is None else b[oc])
    return out


def confusion_loops(pred, gt, n_classes):
    tp = [0] * (n_classes + 1)
    fp = [0] * (n_classes + 1)
    fn = [0] * (n_classes + 1)
    for p, g in zip(np.ravel(pred), np.ravel(gt)):
        p, g = int(p), int(g)
        if p == g:
            tp[p] += 1
        else:
            fp[p] += 1
            fn[g] += 1
    return tp, fp, fn


def miou_loops(pred, gt, n_classes):
    tp, fp, fn = confusion_loops(pred, gt, n_classes)
    ious = []
    for c in range(n_classes + 1):
        union = tp[c] + fp[c] + fn[c]
        if union:
            ious.append(tp[c] / union)
    return sum(ious) / len(ious)


def under_over_loops(pred, gt, n_classes):
    tp, fp, fn = confusion_loops(pred, gt, n_classes)
    under, over = [], []
    for c in range(1, n_classes + 1):
        if tp[c] == 0:
            continue
        under.append(fn[c] / tp[c])
        over.append(fp[c] / tp[c])
    if not under:
        return math.inf, math.inf
    return sum(under) / len(under), sum(over) / len(over)


def crf_loops(image, prob, p):
    """Binary dense CRF mean-field, pixel pair by pixel pair."""
    c, h, w = image.shape
    pix = [(y, x) for y in range(h) for x in range(w)]
    n = len(pix)
    k = [[0.0] * n for _ in range(n)]
    for i, (yi, xi) in enumerate(pix):
        for j, (yj, xj) in enumerate(pix):
            if i == j:
                continue
            dp = (yi - yj) ** 2 + (xi - xj) ** 2
            dc = sum((image[ch, yi, xi] - image[ch, yj, xj]) ** 2 for ch in range(c))
            k[i][j] = p.w_bilateral * math.exp(
                -dp / (2 * p.theta_alpha**2) - dc / (2 * p.theta_beta**2)
            ) + p.w_spatial * math.exp(-dp / (2 * p.theta_gamma**2))
    pr = [min(max(float(prob[y, x]), 1e-6), 1 - 1e-6) for y, x in pix]
    u_fg = [math.log(v) for v in pr]
    u_bg = [math.log1p(-v) for v in pr]
    q = list(pr)
    for _ in range(p.iterations):
        new = []
        for i in range(n):
            m_fg = sum(k[i][j] * q[j] for j in range(n))
            m_bg = sum(k[i][j] * (1 - q[j]) for j in range(n))
            a, b = u_fg[i] + m_fg, u_bg[i] + m_bg
            t = max(a, b)
            new.append(math.exp(a - t) / (math.exp(a - t) + math.exp(b - t)))
        q = new
    return np.array(q).reshape(h, w)
