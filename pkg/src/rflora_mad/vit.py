"""Frozen pre-norm ViT encoder on patch tokens only (no class token)."""
import numpy as np

from . import nn
from .errors import ConfigurationError, InvalidInputError
from .rflora import gated_projection


def init_backbone(store, cfg):
    """Register randomly initialised, frozen backbone weights (fixed seed)."""
    cfg.validate()
    rng = np.random.default_rng(cfg.init_seed)
    d, p = cfg.embed_dim, cfg.patch_size
    patch_dim = 3 * p * p
    hidden = int(round(cfg.mlp_ratio * d))

    def normal(shape, std):
        return rng.normal(0.0, std, size=shape)

    store.add("vit.patch.W", normal((patch_dim, d), 1.0 / np.sqrt(patch_dim)), trainable=False)
    store.add("vit.patch.b", np.zeros(d), trainable=False)
    store.add("vit.pos", normal((cfg.n_tokens, d), 0.1), trainable=False)
    for layer in range(cfg.depth):
        pre = f"vit.{layer}."
        for ln in ("ln1", "ln2"):
            store.add(pre + ln + ".g", np.ones(d), trainable=False)
            store.add(pre + ln + ".b", np.zeros(d), trainable=False)
        for proj in ("q", "k", "v", "o"):
            store.add(pre + proj + ".W", normal((d, d), 1.0 / np.sqrt(d)), trainable=False)
            store.add(pre + proj + ".b", normal(d, 0.02), trainable=False)
        store.add(pre + "mlp.W1", normal((d, hidden), 1.0 / np.sqrt(d)), trainable=False)
        store.add(pre + "mlp.b1", normal(hidden, 0.02), trainable=False)
        store.add(pre + "mlp.W2", normal((hidden, d), 1.0 / np.sqrt(hidden)), trainable=False)
        store.add(pre + "mlp.b2", normal(d, 0.02), trainable=False)


def backbone_param_count(cfg):
    d, p, hidden = cfg.embed_dim, cfg.patch_size, int(round(cfg.mlp_ratio * cfg.embed_dim))
    per_layer = 4 * d + 4 * (d * d + d) + d * hidden + hidden + hidden * d + d
    return 3 * p * p * d + d + cfg.n_tokens * d + cfg.depth * per_layer


def patchify(images, p):
    """(B, S, S, 3) -> (B, N, 3*p*p) in row-major patch order."""
    b, h, w, c = images.shape
    x = images.reshape(b, h // p, p, w // p, p, c).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, (h // p) * (w // p), p * p * c)


def tokenize(images, cfg, store):
    """Patch embedding plus learned positional encodings.

    Accepts a single (S, S, 3) image or a (B, S, S, 3) batch; returns tokens
    of shape (N, D) or (B, N, D) respectively.
    """
    images = np.asarray(images, dtype=np.float64)
    single = images.ndim == 3
    if single:
        images = images[None]
    s = cfg.image_size
    if images.shape[1:] != (s, s, 3):
        raise InvalidInputError(f"expected images of shape ({s}, {s}, 3), got {images.shape[1:]}")
    patches = patchify(images, cfg.patch_size)
    tokens = nn.dense(patches, store["vit.patch.W"], store["vit.patch.b"]) + store["vit.pos"]
    return tokens[0] if single else tokens


def _split_heads(x, heads):
    b, n, d = x.shape
    return x.reshape(b, n, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


def attention(x, cfg, store, layer, adapters=None, gate=None):
    pre = f"vit.{layer}."
    heads = cfg.heads

    def proj(name):
        W, b = store[pre + name + ".W"], store[pre + name + ".b"]
        if adapters is not None and adapters.covers(layer, name):
            A, B = adapters.factors(store, layer, name)
            return gated_projection(x, W, A, B, adapters.alpha, gate) + b
        return nn.dense(x, W, b)

    q = _split_heads(proj("q"), heads)
    k = _split_heads(proj("k"), heads)
    v = _split_heads(proj("v"), heads)
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(cfg.embed_dim // heads))
    out = _merge_heads(nn.softmax(scores) @ v)
    return nn.dense(out, store[pre + "o.W"], store[pre + "o.b"])


def block(x, cfg, store, layer, adapters=None, gate=None):
    pre = f"vit.{layer}."
    h = nn.layer_norm(x, store[pre + "ln1.g"], store[pre + "ln1.b"])
    x = x + attention(h, cfg, store, layer, adapters, gate)
    h = nn.layer_norm(x, store[pre + "ln2.g"], store[pre + "ln2.b"])
    h = nn.gelu(nn.dense(h, store[pre + "mlp.W1"], store[pre + "mlp.b1"]))
    return x + nn.dense(h, store[pre + "mlp.W2"], store[pre + "mlp.b2"])


def encode(tokens, cfg, store, adapters=None, gate=None):
    """Run the L transformer blocks; adapted layers use the gated Q/V projections.

    ``gate`` is a scalar or a per-image tensor broadcastable to (B, 1, 1).
    """
    if adapters is not None:
        bad = [l for l in adapters.layers if not cfg.depth - adapters.k <= l < cfg.depth]
        if bad or adapters.depth != cfg.depth:
            raise ConfigurationError(f"adapter layers {adapters.layers} do not match the last k of depth {cfg.depth}")
    x = nn.as_tensor(tokens)
    single = x.ndim == 2
    if single:
        x = x.reshape(1, *x.shape)
    for layer in range(cfg.depth):
        x = block(x, cfg, store, layer, adapters, gate)
    return x.reshape(*x.shape[1:]) if single else x
