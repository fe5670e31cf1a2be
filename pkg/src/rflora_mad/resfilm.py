"""Residual FiLM: per-patch scale/shift of backbone tokens from residual stats."""
import numpy as np

from . import nn
from .errors import InvalidParameterError, ShapeError


def bilinear_matrix(src, dst):
    """(dst_h*dst_w, src_h*src_w) matrix resampling a grid with aligned corners."""
    if min(src) < 1 or min(dst) < 1:
        raise InvalidParameterError(f"empty grid: {src} -> {dst}")

    def axis_weights(n_in, n_out):
        m = np.zeros((n_out, n_in))
        for i in range(n_out):
            pos = 0.0 if n_out == 1 else i * (n_in - 1) / (n_out - 1)
            lo = min(int(np.floor(pos)), n_in - 1)
            hi = min(lo + 1, n_in - 1)
            frac = pos - lo
            m[i, lo] += 1.0 - frac
            m[i, hi] += frac
        return m

    return np.kron(axis_weights(src[0], dst[0]), axis_weights(src[1], dst[1]))


def align_tokens(T, token_grid, residual_grid):
    """Map tokens from the backbone grid onto the residual grid.

    Equal grids are an exact identity; otherwise tokens are bilinearly
    resampled channelwise.
    """
    if min(token_grid) < 1 or min(residual_grid) < 1:
        raise InvalidParameterError(f"empty grid: {token_grid} -> {residual_grid}")
    if tuple(token_grid) == tuple(residual_grid):
        return nn.as_tensor(T)
    return nn.Tensor(bilinear_matrix(token_grid, residual_grid)) @ T


def init_film(store, d, hidden, rng):
    # row-vector layout: s @ W1 (3 x hidden), h @ W2 (hidden x 2D)
    store.add("film.W1", rng.normal(0.0, 1.0 / np.sqrt(3.0), size=(3, hidden)))
    store.add("film.b1", rng.normal(0.0, 0.1, size=hidden))
    store.add("film.W2", rng.normal(0.0, 0.1 / np.sqrt(hidden), size=(hidden, 2 * d)))
    store.add("film.b2", np.zeros(2 * d))


def film_param_count(d, hidden):
    return 3 * hidden + hidden + hidden * 2 * d + 2 * d


def film_params(stats, store):
    """(..., 3) descriptors -> (gamma, beta), each (..., D), from one shared MLP."""
    stats = np.asarray(stats, dtype=np.float64)
    h = nn.silu(nn.dense(stats, store["film.W1"], store["film.b1"]))
    out = nn.dense(h, store["film.W2"], store["film.b2"])
    d = out.shape[-1] // 2
    return out[..., :d], out[..., d:]


def modulate(T_prime, gamma, beta):
    """(1 + tanh(gamma)) * T' + beta."""
    T_prime, gamma, beta = nn.as_tensor(T_prime), nn.as_tensor(gamma), nn.as_tensor(beta)
    if T_prime.shape != gamma.shape or T_prime.shape != beta.shape:
        raise ShapeError(f"modulate shapes: T' {T_prime.shape}, gamma {gamma.shape}, beta {beta.shape}")
    return (nn.tanh(gamma) + 1.0) * T_prime + beta
