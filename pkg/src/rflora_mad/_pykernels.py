"""Pure numpy residual kernels (fallback when the compiled core is absent).

Operation order matches ``_ckernels.pyx`` term for term.
"""
import numpy as np


def _reflect_pad(img, radius, axis):
    n = img.shape[axis]
    if n == 1:
        idx = np.zeros(n + 2 * radius, dtype=np.intp)
    else:
        period = 2 * (n - 1)
        idx = np.mod(np.arange(-radius, n + radius), period)
        idx = np.where(idx >= n, period - idx, idx)
    return np.take(img, idx, axis=axis)


def to_grey(img):
    img = np.asarray(img, dtype=np.float64)
    # blue-first summation makes the weights add to exactly 1.0
    return 0.114 * img[..., 2] + 0.587 * img[..., 1] + 0.299 * img[..., 0]


def gaussian_smooth(img, weights):
    img = np.asarray(img, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    radius = (weights.shape[0] - 1) // 2
    h, w = img.shape
    padded = _reflect_pad(img, radius, axis=1)
    tmp = np.zeros((h, w))
    for k in range(2 * radius + 1):
        tmp = tmp + weights[k] * padded[:, k:k + w]
    padded = _reflect_pad(tmp, radius, axis=0)
    out = np.zeros((h, w))
    for k in range(2 * radius + 1):
        out = out + weights[k] * padded[k:k + h, :]
    return out


def laplacian_abs(img):
    img = np.asarray(img, dtype=np.float64)
    p = _reflect_pad(_reflect_pad(img, 1, axis=0), 1, axis=1)
    v = (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:]) - 4.0 * img
    return np.abs(v)


def minmax_normalize(raw):
    raw = np.asarray(raw, dtype=np.float64)
    lo = raw.min()
    hi = raw.max()
    if hi == lo:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


def patch_stats(r_map, p):
    r = np.asarray(r_map, dtype=np.float64)
    hp, wp = r.shape[0] // p, r.shape[1] // p
    # (p*p, N) layout: reducing over axis 0 accumulates sequentially in
    # row-major pixel order, same as the compiled loop.
    cols = r.reshape(hp, p, wp, p).transpose(1, 3, 0, 2).reshape(p * p, hp * wp)
    cols = np.ascontiguousarray(cols)
    m = float(p * p)
    s = np.zeros(hp * wp)
    sq = np.zeros(hp * wp)
    for row in cols:
        s = s + row
        sq = sq + row * row
    mu = s / m
    s2 = np.zeros(hp * wp)
    for row in cols:
        d = row - mu
        s2 = s2 + d * d
    return np.stack([mu, s2 / m, sq / m], axis=1)


def residual_stats(img, weights, p):
    r = minmax_normalize(laplacian_abs(gaussian_smooth(to_grey(img), weights)))
    return r, patch_stats(r, p)
