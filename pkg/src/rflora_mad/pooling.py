"""Learned-query cross-attention pooling, linear classifier and MIL patch head."""
import csv

import numpy as np

from . import nn
from .errors import ModeError


def init_pooling(store, d, n_queries, rng):
    store.add("pool.queries", rng.normal(0.0, 1.0, size=(n_queries, d)))
    for name in ("WQ", "WK", "WV", "WO"):
        store.add(f"pool.{name}", rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d)))
    store.add("clf.w", rng.normal(0.0, 1.0 / np.sqrt(d), size=d))
    store.add("clf.b", np.zeros(1))


def init_mil_head(store, d, rng):
    store.add("mil.w", rng.normal(0.0, 1.0 / np.sqrt(d), size=d))
    store.add("mil.b", np.zeros(1))


def pooling_param_count(d, n_queries):
    return n_queries * d + 4 * d * d


def cross_attention_pool(T_hat, store, heads=8):
    """Pool (B, N, D) tokens into (B, D) global features.

    Each head attends from every learned query over all tokens with
    1/sqrt(head_dim) scaling; head outputs are concatenated, projected by
    ``pool.WO`` and the per-query results are averaged. Returns
    ``(g, weights)`` with weights of shape (B, heads, M, N).
    """
    T_hat = nn.as_tensor(T_hat)
    single = T_hat.ndim == 2
    if single:
        T_hat = T_hat.reshape(1, *T_hat.shape)
    b, n, d = T_hat.shape
    dh = d // heads
    m = store["pool.queries"].shape[0]
    K = (T_hat @ store["pool.WK"]).reshape(b, n, heads, dh).transpose(0, 2, 3, 1)  # B,H,dh,N
    V = (T_hat @ store["pool.WV"]).reshape(b, n, heads, dh).transpose(0, 2, 1, 3)  # B,H,N,dh
    Q = (store["pool.queries"] @ store["pool.WQ"]).reshape(m, heads, dh).transpose(1, 0, 2)  # H,M,dh
    weights = nn.softmax((Q @ K) * (1.0 / np.sqrt(dh)))  # B,H,M,N
    heads_out = (weights @ V).transpose(0, 2, 1, 3).reshape(b, m, d)
    g = (heads_out @ store["pool.WO"]).mean(axis=1)
    if single:
        g = g.reshape(d)
        return g, weights.data[0]
    return g, weights.data


def classify(g, store):
    """Logit z = w.g + b and score s = sigmoid(z)."""
    g = nn.as_tensor(g)
    w = store["clf.w"]
    z = (g @ w.reshape(w.shape[0], 1)).reshape(*g.shape[:-1]) + store["clf.b"].reshape(())
    return z, nn.sigmoid(z)


def mil_logits(T_hat, store, training=True):
    """Per-token logits (..., N) from a single linear map; training only."""
    if not training:
        raise ModeError("the MIL head is removed at inference")
    T_hat = nn.as_tensor(T_hat)
    w = store["mil.w"]
    return (T_hat @ w.reshape(w.shape[0], 1)).reshape(*T_hat.shape[:-1]) + store["mil.b"].reshape(())


def write_attention_csv(path, weights, image_id=""):
    """One row per (head, query) with the attention weights over tokens."""
    weights = np.asarray(weights)
    h, m, n = weights.shape
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["image_id", "head", "query"] + [f"t{i}" for i in range(n)])
        for hi in range(h):
            for qi in range(m):
                wr.writerow([image_id, hi, qi] + [f"{v:.9g}" for v in weights[hi, qi]])
