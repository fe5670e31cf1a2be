"""Training objectives: smoothed BCE, top-k MIL, TV prior, residual-contrastive alignment."""
import math

import numpy as np

from . import nn
from .errors import NumericError


def smooth_labels(y, epsilon):
    return (1.0 - epsilon) * np.asarray(y, dtype=np.float64) + 0.5 * epsilon


def loss_main(z, y, epsilon=0.1):
    """Mean BCE of sigmoid(z) against smoothed labels, in logit form."""
    return nn.bce_with_logits(z, smooth_labels(y, epsilon)).mean()


def topk_k(n, rho):
    return max(1, int(math.floor(rho * n)))


def mil_bag_logit(logits, y, rho=0.25):
    """z_mil = y * s_pos + (1 - y) * s_neg for (N,) or (B, N) patch logits.

    s_pos averages the k largest logits and s_neg the k largest negated
    logits, with k = max(1, floor(rho * N)).
    """
    logits = nn.as_tensor(logits)
    single = logits.ndim == 1
    if single:
        logits = logits.reshape(1, logits.shape[0])
    b, n = logits.shape
    k = topk_k(n, rho)
    order = np.argsort(-logits.data, axis=1, kind="stable")
    rows = np.arange(b)[:, None]
    s_pos = logits[rows, order[:, :k]].mean(axis=1)
    s_neg = (-logits)[rows, order[:, ::-1][:, :k]].mean(axis=1)
    y = np.asarray(y, dtype=np.float64).reshape(b)
    z = s_pos * y + s_neg * (1.0 - y)
    return z.reshape(()) if single else z


def loss_mil(logits, y, rho=0.25, epsilon=0.1):
    return loss_main(mil_bag_logit(logits, y, rho), y, epsilon)


def loss_tv(logit_grid):
    """Anisotropic TV over the last two axes divided by the cell count.

    A leading batch axis is averaged.
    """
    x = nn.as_tensor(logit_grid)
    h, w = x.shape[-2:]
    total = nn.Tensor(0.0)
    if w > 1:
        total = total + nn.tabs(x[..., :, 1:] - x[..., :, :-1]).sum(axis=(-2, -1))
    if h > 1:
        total = total + nn.tabs(x[..., 1:, :] - x[..., :-1, :]).sum(axis=(-2, -1))
    total = total * (1.0 / (h * w))
    return total.mean() if total.ndim else total


def rca_distance(T_prime, T_hat, tiny=1e-12):
    """Per-token cosine distance 1 - cos(T'_i, T^_i); degenerate rows give 0.

    The returned tensor carries a boolean ``.degenerate`` mask.
    """
    cos = nn.cosine_rows(T_prime, T_hat, tiny)
    d = 1.0 - cos
    d.degenerate = cos.degenerate
    return d


def rca_margin(morph_distances, quantile=0.5, default=0.5):
    """Linear-interpolated quantile of the pooled morph-token distances (detached)."""
    if isinstance(morph_distances, nn.Tensor):
        morph_distances = morph_distances.data
    d = np.asarray(morph_distances, dtype=np.float64).ravel()
    if d.size == 0:
        return float(default)
    return float(np.quantile(d, quantile, method="linear"))


def batch_margin(d, y, quantile=0.5, default=0.5):
    """Margin from the rows of a (B, N) distance tensor whose label is morph."""
    mask = np.asarray(y).reshape(-1) == 1
    data = d.data if isinstance(d, nn.Tensor) else np.asarray(d)
    return rca_margin(data[mask], quantile, default)


def loss_rca(d, y, m, w=1.0):
    """w * mean_i[(1 - y) d_i + y softplus(m - d_i)], averaged over the batch."""
    d = nn.as_tensor(d)
    y = np.asarray(y, dtype=np.float64)
    if d.ndim == 2:
        y = y.reshape(-1, 1)
    per = d * (1.0 - y) + nn.softplus(m - d) * y
    return per.mean() * float(w)


def warmup_factor(epoch, warmup_epochs):
    if warmup_epochs <= 0:
        return 1.0
    return float(min(1.0, max(0.0, epoch / warmup_epochs)))


COMPONENTS = ("main", "mil", "tv", "rca")


def loss_total(components, weights, w=1.0):
    """L_main + lambda_mil L_mil + lambda_tv L_tv + lambda_rca (w L_rca).

    ``components`` maps names from COMPONENTS to scalars or tensors; missing
    auxiliary terms count as zero. Raises NumericError naming the first
    non-finite component.
    """
    for name in COMPONENTS:
        if name in components:
            val = components[name]
            val = float(val.data if isinstance(val, nn.Tensor) else val)
            if not np.isfinite(val):
                raise NumericError(f"loss component {name!r} is not finite ({val})")
    total = nn.as_tensor(components["main"])
    if "mil" in components and weights.lambda_mil:
        total = total + nn.as_tensor(components["mil"]) * weights.lambda_mil
    if "tv" in components and weights.lambda_tv:
        total = total + nn.as_tensor(components["tv"]) * weights.lambda_tv
    if "rca" in components and weights.lambda_rca and weights.rca:
        total = total + nn.as_tensor(components["rca"]) * (weights.lambda_rca * w)
    return total
