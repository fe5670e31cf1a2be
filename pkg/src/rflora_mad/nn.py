"""Minimal reverse-mode differentiation over numpy arrays.

A ``Tensor`` records the op that produced it only when at least one input
requires a gradient, so frozen sub-graphs cost nothing on the backward pass.
Everything runs in float64.
"""
import struct
from contextlib import contextmanager

import numpy as np

from .errors import CheckpointError, GradientError, NumericError, ShapeError

_grad_enabled = True


@contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = parents
        self._backward = backward

    shape = property(lambda self: self.data.shape)
    ndim = property(lambda self: self.data.ndim)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def backward(self, grad=None):
        if grad is None:
            grad = np.ones_like(self.data)
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


class Parameter(Tensor):
    def __init__(self, name, data, trainable=True):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=trainable)
        self.name = name

    @property
    def trainable(self):
        return self.requires_grad

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward)
    return Tensor(data)


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def tabs(x):
    x = as_tensor(x)
    return _make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def sqrt(x):
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,))


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


_GELU_C = np.sqrt(2.0 / np.pi)


def _act_forward(kind, x):
    if kind == "sigmoid":
        y = _sigmoid(x)
        return y, lambda g: g * y * (1.0 - y)
    if kind == "tanh":
        y = np.tanh(x)
        return y, lambda g: g * (1.0 - y * y)
    if kind == "silu":
        s = _sigmoid(x)
        return x * s, lambda g: g * (s + x * s * (1.0 - s))
    if kind == "softplus":
        return np.logaddexp(0.0, x), lambda g: g * _sigmoid(x)
    if kind == "gelu":
        # tanh approximation
        u = _GELU_C * (x + 0.044715 * x ** 3)
        t = np.tanh(u)
        du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return 0.5 * x * (1.0 + t), lambda g: g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
    raise ValueError(f"unknown activation {kind!r}")


def activation(kind, x):
    """Elementwise sigmoid / tanh / silu / softplus / gelu with exact backward."""
    x = as_tensor(x)
    y, back = _act_forward(kind, x.data)
    return _make(y, (x,), lambda g: (back(g),))


def sigmoid(x):
    return activation("sigmoid", x)


def tanh(x):
    return activation("tanh", x)


def silu(x):
    return activation("silu", x)


def softplus(x):
    return activation("softplus", x)


def gelu(x):
    return activation("gelu", x)


# ---------------------------------------------------------------- structural

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if a.ndim > 2 and b.ndim == 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(a.data @ b.data, (a, b), back)


def reshape(x, shape):
    x = as_tensor(x)
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes):
    x = as_tensor(x)
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def getitem(x, idx):
    x = as_tensor(x)

    def back(g):
        out = np.zeros_like(x.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make(x.data[idx], (x,), back)


def tsum(x, axis=None, keepdims=False):
    x = as_tensor(x)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), back)


def tmean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis, keepdims), 1.0 / n)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), back)


# ---------------------------------------------------------------- layers

def dense(x, W, b=None):
    """``x @ W + b`` over the last axis of ``x``."""
    x, W = as_tensor(x), as_tensor(W)
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise ShapeError(f"dense: input shape {x.shape} incompatible with weight shape {W.shape}")
    out = matmul(x, W)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (W.shape[1],):
            raise ShapeError(f"dense: bias shape {b.shape} does not match weight shape {W.shape}")
        out = add(out, b)
    return out


def softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _make(y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def softmax_rows(x):
    return softmax(x, axis=-1)


def layer_norm(x, gain, bias, eps=1e-5):
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def back(g):
        gx = gg = gb = None
        if x.requires_grad:
            dxhat = g * gain.data
            gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        if gain.requires_grad:
            gg = (g * xhat).reshape(-1, g.shape[-1]).sum(axis=0)
        if bias.requires_grad:
            gb = g.reshape(-1, g.shape[-1]).sum(axis=0)
        return gx, gg, gb

    return _make(out, (x, gain, bias), back)


def bce_with_logits(z, target):
    """Elementwise binary cross-entropy of sigmoid(z) against soft targets."""
    z = as_tensor(z)
    t = np.asarray(target, dtype=np.float64)
    out = np.logaddexp(0.0, z.data) - t * z.data
    return _make(out, (z,), lambda g: (g * (_sigmoid(z.data) - t),))


def cosine_rows(a, b, tiny=1e-12):
    """Cosine similarity along the last axis.

    Rows where either norm is below ``tiny`` get similarity 1 and no
    gradient; the mask of such rows is attached as ``.degenerate``.
    """
    a, b = as_tensor(a), as_tensor(b)
    na = np.sqrt((a.data * a.data).sum(axis=-1))
    nb = np.sqrt((b.data * b.data).sum(axis=-1))
    bad = (na < tiny) | (nb < tiny)
    na_s = np.where(bad, 1.0, na)[..., None]
    nb_s = np.where(bad, 1.0, nb)[..., None]
    ua, ub = a.data / na_s, b.data / nb_s
    cos = (ua * ub).sum(axis=-1)
    cos = np.where(bad, 1.0, cos)
    keep = (~bad)[..., None]

    def back(g):
        g = g[..., None] * keep
        ga = g * (ub - ua * cos[..., None]) / na_s if a.requires_grad else None
        gb = g * (ua - ub * cos[..., None]) / nb_s if b.requires_grad else None
        return ga, gb

    out = _make(cos, (a, b), back)
    out.degenerate = bad
    return out


# ---------------------------------------------------------------- parameters

class ParameterStore:
    """Named parameters plus Adam moments and the EMA shadow."""

    def __init__(self):
        self.params = {}
        self.adam = {}
        self.step = 0
        self.ema = {}

    def add(self, name, value, trainable=True):
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        p = Parameter(name, value, trainable)
        self.params[name] = p
        return p

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params.values())

    def __len__(self):
        return len(self.params)

    def get(self, name, default=None):
        return self.params.get(name, default)

    def trainable(self):
        return [p for p in self.params.values() if p.trainable]

    def frozen(self):
        return [p for p in self.params.values() if not p.trainable]

    def count(self, trainable=None):
        return sum(p.data.size for p in self.params.values()
                   if trainable is None or p.trainable == trainable)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def copy(self):
        other = ParameterStore()
        for p in self.params.values():
            other.add(p.name, p.data.copy(), p.trainable)
        other.adam = {k: (m.copy(), v.copy()) for k, (m, v) in self.adam.items()}
        other.step = self.step
        other.ema = {k: v.copy() for k, v in self.ema.items()}
        return other

    def ema_view(self):
        """A store whose trainable values are the EMA shadow (falls back to raw values)."""
        other = ParameterStore()
        for p in self.params.values():
            value = self.ema.get(p.name, p.data) if p.trainable else p.data
            other.add(p.name, np.array(value, copy=True), p.trainable)
        return other


def adam_step(store, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
    """Bias-corrected Adam with decoupled weight decay on trainable parameters."""
    params = store.trainable()
    missing = [p.name for p in params if p.grad is None]
    if missing:
        raise GradientError(f"no gradient for trainable parameters: {missing}")
    store.step += 1
    t = store.step
    for p in params:
        m, v = store.adam.get(p.name, (np.zeros_like(p.data), np.zeros_like(p.data)))
        m = beta1 * m + (1.0 - beta1) * p.grad
        v = beta2 * v + (1.0 - beta2) * p.grad * p.grad
        store.adam[p.name] = (m, v)
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p.data = p.data - lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * p.data)


def ema_init(store):
    store.ema = {p.name: p.data.copy() for p in store.trainable()}


def ema_update(store, tau=0.999):
    if not store.ema:
        ema_init(store)
    for p in store.trainable():
        store.ema[p.name] = tau * store.ema[p.name] + (1.0 - tau) * p.data


# ---------------------------------------------------------------- gradient check

def finite_diff_check(loss_fn, store, h=1e-5, max_entries=12, rng=None, floor=1e-10):
    """Compare analytic gradients of ``loss_fn(store)`` with central differences.

    Entries are subsampled to ``max_entries`` per parameter. The error per
    parameter is ``|a - n| / max(|a|, |n|)`` over the sampled vector, so a
    sign-flipped gradient reports 2. Returns ``{name: rel_error}``; frozen
    parameters are not reported.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    store.zero_grad()
    loss = loss_fn(store)
    if not np.isfinite(loss.data).all():
        raise NumericError(f"non-finite loss {loss.data}")
    loss.backward()
    report = {}
    for p in store.trainable():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        n = flat.size
        picks = np.arange(n) if n <= max_entries else rng.choice(n, max_entries, replace=False)
        a = analytic.reshape(-1)[picks]
        num = np.empty(len(picks))
        for j, i in enumerate(picks):
            orig = flat[i]
            with no_grad():
                flat[i] = orig + h
                lp = loss_fn(store).data
                flat[i] = orig - h
                lm = loss_fn(store).data
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NumericError(f"non-finite loss while perturbing {p.name}")
            num[j] = (lp - lm) / (2.0 * h)
        scale = max(np.linalg.norm(a), np.linalg.norm(num))
        report[p.name] = 0.0 if scale < floor else float(np.linalg.norm(a - num) / scale)
    store.zero_grad()
    return report


# ---------------------------------------------------------------- checkpoints

MAGIC = b"RFLMADCK"
VERSION = 1
_FLAG_TRAINABLE = 1
_FLAG_EMA = 2


def _record(name, arr, flags):
    name_b = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = struct.pack("<H", len(name_b)) + name_b + struct.pack("<BB", flags, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def save_checkpoint(path, store, config_text=""):
    """Flat little-endian records of (name, flags, shape, float64 data)."""
    cfg = config_text.encode("utf-8")
    records = [_record(p.name, p.data, _FLAG_TRAINABLE if p.trainable else 0) for p in store]
    records += [_record(name, v, _FLAG_EMA | _FLAG_TRAINABLE) for name, v in store.ema.items()]
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<B", VERSION))
        fh.write(struct.pack("<I", len(cfg)) + cfg)
        fh.write(struct.pack("<I", len(records)))
        for r in records:
            fh.write(r)


def load_checkpoint(path):
    """Return ``(store, config_text)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if data[8] != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {data[8]}")
    off = 9
    (clen,) = struct.unpack_from("<I", data, off)
    off += 4
    config_text = data[off:off + clen].decode("utf-8")
    off += clen
    (n,) = struct.unpack_from("<I", data, off)
    off += 4
    store = ParameterStore()
    for _ in range(n):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        flags, ndim = struct.unpack_from("<BB", data, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64)
        off += 8 * size
        if flags & _FLAG_EMA:
            store.ema[name] = arr
        else:
            store.add(name, arr, bool(flags & _FLAG_TRAINABLE))
    return store, config_text
