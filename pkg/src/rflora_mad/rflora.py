"""Residual-statistic gated low-rank adapters on the Q/V projections."""
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ShapeError


@dataclass(frozen=True)
class AdapterSet:
    depth: int
    k: int
    projections: str
    alpha: float

    @property
    def layers(self):
        return tuple(range(self.depth - self.k, self.depth))

    def covers(self, layer, proj):
        return proj in self.projections and self.depth - self.k <= layer < self.depth

    @staticmethod
    def factors(store, layer, proj):
        return store[f"lora.{layer}.{proj}.A"], store[f"lora.{layer}.{proj}.B"]

    @classmethod
    def from_config(cls, lora_cfg, depth):
        lora_cfg.validate(depth)
        return cls(depth=depth, k=lora_cfg.k, projections=lora_cfg.projections, alpha=lora_cfg.alpha)


def init_adapters(store, lora_cfg, vit_cfg, rng):
    """A ~ scaled normal, B = 0, so the adapters start as an exact no-op."""
    d, r = vit_cfg.embed_dim, lora_cfg.rank
    std = lora_cfg.a_init_std or 1.0 / np.sqrt(d)
    adapters = AdapterSet.from_config(lora_cfg, vit_cfg.depth)
    for layer in adapters.layers:
        for proj in adapters.projections:
            store.add(f"lora.{layer}.{proj}.A", rng.normal(0.0, std, size=(d, r)))
            store.add(f"lora.{layer}.{proj}.B", np.zeros((r, d)))
    return adapters


def init_gate(store, hidden, rng):
    # stored as row-vector maps: s_bar @ W1 (3 x h), h @ W2 (h x 1)
    store.add("gate.W1", rng.normal(0.0, 1.0 / np.sqrt(3.0), size=(3, hidden)))
    store.add("gate.b1", np.zeros(hidden))
    store.add("gate.W2", rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, 1)))
    store.add("gate.b2", np.zeros(1))


def gate_logit(s_bar, store):
    h = nn.silu(nn.dense(s_bar, store["gate.W1"], store["gate.b1"]))
    return nn.dense(h, store["gate.W2"], store["gate.b2"])


def residual_gate(s_bar, store):
    """g = sigmoid(W2 silu(W1 s_bar + b1) + b2), one scalar per image.

    ``s_bar`` is (3,) or (B, 3); the result has shape () or (B,).
    """
    s_bar = np.asarray(s_bar, dtype=np.float64)
    single = s_bar.ndim == 1
    g = nn.sigmoid(gate_logit(s_bar.reshape(-1, 3), store))
    return g.reshape(()) if single else g.reshape(s_bar.shape[0])


def gated_projection(T, W, A, B, alpha, g):
    """T W + alpha * g * (T A) B.

    ``g`` may be a float, a 0-d tensor or a per-image (B,) tensor; in the
    last case it is broadcast over tokens and channels.
    """
    T = nn.as_tensor(T)
    W, A, B = nn.as_tensor(W), nn.as_tensor(A), nn.as_tensor(B)
    d_in, d_out = W.shape
    if T.shape[-1] != d_in or A.shape[0] != d_in or B.shape != (A.shape[1], d_out):
        raise ShapeError(f"gated_projection shapes: T {T.shape}, W {W.shape}, A {A.shape}, B {B.shape}")
    update = (T @ A) @ B
    if isinstance(g, nn.Tensor) and g.ndim == 1:
        g = g.reshape(g.shape[0], *([1] * (T.ndim - 1)))
    return (T @ W) + update * (nn.as_tensor(g) * alpha)


def adapter_param_count(lora_cfg, d):
    """Adapter parameters: k * |projections| * 2*D*r (gate counted separately)."""
    if lora_cfg.k == 0:
        return 0
    return lora_cfg.k * len(lora_cfg.projections) * 2 * d * lora_cfg.rank


def gate_param_count(hidden):
    return 3 * hidden + hidden + hidden + 1
