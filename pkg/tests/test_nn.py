import numpy as np
import pytest

from rflora_mad import nn
from rflora_mad.errors import CheckpointError, GradientError, NumericError, ShapeError


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        orig = x[i]
        x[i] = orig + h
        fp = f(x)
        x[i] = orig - h
        fm = f(x)
        x[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)


def check_unary(op, x, weights, tol):
    """Gradient of sum(weights * op(x)) against central differences."""
    t = nn.Tensor(x.copy(), requires_grad=True)
    (op(t) * weights).sum().backward()
    num = numeric_grad(lambda v: float((op(nn.Tensor(v)).data * weights).sum()), x.copy())
    assert rel_err(t.grad, num) < tol


# ------------------------------------------------------------------ dense

def test_dense_identity(rng):
    x = rng.normal(size=(3, 4))
    np.testing.assert_array_equal(nn.dense(x, np.eye(4), np.zeros(4)).data, x)


def test_dense_zero_input_gives_bias(rng):
    b = rng.normal(size=5)
    out = nn.dense(np.zeros((3, 4)), rng.normal(size=(4, 5)), b).data
    np.testing.assert_array_equal(out, np.tile(b, (3, 1)))


def test_dense_triple_loop_oracle(rng):
    x, W, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)
    ref = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            acc = b[j]
            for k in range(4):
                acc += x[i, k] * W[k, j]
            ref[i, j] = acc
    np.testing.assert_allclose(nn.dense(x, W, b).data, ref, atol=1e-14)


def test_dense_gradients(rng):
    x0, W0, b0 = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)
    wts = rng.normal(size=(3, 2))
    x, W, b = (nn.Tensor(v.copy(), requires_grad=True) for v in (x0, W0, b0))
    (nn.dense(x, W, b) * wts).sum().backward()
    for t, v, fn in ((x, x0, lambda v: nn.dense(v, W0, b0)), (W, W0, lambda v: nn.dense(x0, v, b0)),
                     (b, b0, lambda v: nn.dense(x0, W0, v))):
        num = numeric_grad(lambda u: float((fn(u).data * wts).sum()), v.copy())
        assert rel_err(t.grad, num) < 1e-8


def test_dense_shape_error_reports_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        nn.dense(np.zeros((2, 3)), np.zeros((4, 5)))


# ------------------------------------------------------------ activations

def test_activations_at_origin():
    assert nn.sigmoid(0.0).data == 0.5
    assert nn.tanh(0.0).data == 0.0
    assert nn.silu(0.0).data == 0.0
    assert nn.gelu(0.0).data == 0.0


def test_softplus_asymptote_and_stability():
    assert abs(nn.softplus(30.0).data - 30.0) < 1e-9
    assert np.isfinite(nn.softplus(np.array([-1e4, 1e4])).data).all()
    assert np.isfinite(nn.sigmoid(np.array([-1e4, 1e4])).data).all()


@pytest.mark.parametrize("kind", ["sigmoid", "tanh", "silu", "softplus", "gelu"])
def test_activation_gradients(rng, kind):
    x = rng.normal(scale=2.0, size=10)
    t = nn.Tensor(x.copy(), requires_grad=True)
    nn.activation(kind, t).sum().backward()
    num = numeric_grad(lambda v: float(nn.activation(kind, nn.Tensor(v)).data.sum()), x.copy(), h=1e-5)
    assert rel_err(t.grad, num) < 1e-6


def test_unknown_activation():
    with pytest.raises(ValueError):
        nn.activation("relu6", np.zeros(2))


# ---------------------------------------------------------------- softmax

def test_softmax_uniform():
    np.testing.assert_allclose(nn.softmax_rows(np.zeros((2, 5))).data, 0.2)


def test_softmax_saturation():
    x = np.zeros((1, 4))
    x[0, 2] = 1e4
    out = nn.softmax_rows(x).data
    assert abs(out[0, 2] - 1.0) < 1e-12


def test_softmax_shift_invariance(rng):
    x = rng.normal(size=(3, 6))
    np.testing.assert_allclose(nn.softmax_rows(x + 17.5).data, nn.softmax_rows(x).data, atol=1e-15)


def test_softmax_gradient(rng):
    check_unary(nn.softmax_rows, rng.normal(size=(3, 5)), rng.normal(size=(3, 5)), 1e-7)


# -------------------------------------------------------------- layer norm

def test_layer_norm_statistics(rng):
    out = nn.layer_norm(rng.normal(3.0, 10.0, size=(5, 16)), np.ones(16), np.zeros(16)).data
    assert np.abs(out.mean(axis=1)).max() < 1e-9
    assert np.abs(out.var(axis=1) - 1.0).max() < 1e-6


def test_layer_norm_constant_row(rng):
    bias = rng.normal(size=8)
    out = nn.layer_norm(np.full((1, 8), 2.5), rng.normal(size=8), bias).data
    np.testing.assert_allclose(out[0], bias, atol=1e-12)


def test_layer_norm_gradients(rng):
    x0, g0, b0 = rng.normal(size=(4, 6)), rng.normal(size=6), rng.normal(size=6)
    wts = rng.normal(size=(4, 6))
    x, g, b = (nn.Tensor(v.copy(), requires_grad=True) for v in (x0, g0, b0))
    (nn.layer_norm(x, g, b) * wts).sum().backward()
    for t, v, fn in ((x, x0, lambda u: nn.layer_norm(u, g0, b0)), (g, g0, lambda u: nn.layer_norm(x0, u, b0)),
                     (b, b0, lambda u: nn.layer_norm(x0, g0, u))):
        num = numeric_grad(lambda u: float((fn(u).data * wts).sum()), v.copy())
        assert rel_err(t.grad, num) < 1e-5


# ------------------------------------------------------- structural ops

def test_broadcast_matmul_getitem_gradients(rng):
    a0 = rng.normal(size=(2, 3, 4))
    w0 = rng.normal(size=(4, 5))
    c0 = rng.normal(size=5)
    idx = (np.array([[0, 1], [1, 0]]), np.array([[2, 0], [1, 1]]))

    def f(a, w, c):
        y = (nn.as_tensor(a) @ w + c).transpose(0, 2, 1).reshape(2, 15)
        return (y[:, 3:9].sum(axis=1) * 2.0 - y.mean() + nn.as_tensor(a)[idx].sum() / 3.0).sum()

    ts = [nn.Tensor(v.copy(), requires_grad=True) for v in (a0, w0, c0)]
    f(*ts).backward()
    for k, v in enumerate((a0, w0, c0)):
        args = [a0, w0, c0]

        def g(u, k=k):
            args2 = list(args)
            args2[k] = u
            return float(f(*args2).data)

        assert rel_err(ts[k].grad, numeric_grad(g, v.copy())) < 1e-8


def test_stack_div_sqrt_abs_gradients(rng):
    x0 = rng.uniform(0.5, 2.0, size=(3,))
    x = nn.Tensor(x0.copy(), requires_grad=True)

    def f(v):
        v = nn.as_tensor(v)
        return (nn.stack([nn.sqrt(v), nn.tabs(v - 1.1) / v], axis=0) * np.array([[1.0], [2.0]])).sum()

    f(x).backward()
    assert rel_err(x.grad, numeric_grad(lambda u: float(f(u).data), x0.copy())) < 1e-7


def test_no_grad_records_nothing():
    p = nn.Parameter("p", np.ones(3))
    with nn.no_grad():
        y = (p * 2.0).sum()
    assert not y.requires_grad and y._parents == ()


def test_frozen_inputs_do_not_build_graph():
    p = nn.Parameter("p", np.ones(3), trainable=False)
    assert not (p * 2.0).requires_grad


def test_gradient_accumulates_on_reuse():
    p = nn.Parameter("p", np.array([2.0]))
    (p * p + p).sum().backward()
    np.testing.assert_allclose(p.grad, [5.0])


def test_bce_with_logits_stable():
    out = nn.bce_with_logits(np.array([-800.0, 800.0, 0.0]), np.array([1.0, 0.0, 0.3])).data
    np.testing.assert_allclose(out, [800.0, 800.0, np.log(2.0)])


def test_cosine_rows_degenerate():
    a = nn.Tensor(np.array([[1.0, 0.0], [0.0, 0.0]]), requires_grad=True)
    c = nn.cosine_rows(a, np.array([[0.0, 2.0], [1.0, 1.0]]))
    np.testing.assert_allclose(c.data, [0.0, 1.0])
    assert list(c.degenerate) == [False, True]
    c.sum().backward()
    np.testing.assert_array_equal(a.grad[1], [0.0, 0.0])


# ------------------------------------------------------------- optimiser

def make_store(value, grad=None, frozen=None):
    s = nn.ParameterStore()
    p = s.add("p", np.array(value, dtype=float))
    if frozen is not None:
        s.add("f", np.array(frozen, dtype=float), trainable=False)
    p.grad = None if grad is None else np.array(grad, dtype=float)
    return s


def test_adam_first_step():
    s = make_store([1.0], [1.0])
    nn.adam_step(s, lr=0.1)
    assert abs(s["p"].data[0] - 0.9) < 1e-7


def test_adam_zero_grad_no_move():
    s = make_store([1.5], [0.0])
    nn.adam_step(s, lr=0.1)
    assert s["p"].data[0] == 1.5


def test_adam_converges_on_quadratic():
    s = make_store([0.0])
    for _ in range(500):
        s["p"].grad = 2.0 * (s["p"].data - 3.0)
        nn.adam_step(s, lr=0.1)
    assert abs(s["p"].data[0] - 3.0) < 1e-2


def test_adam_decoupled_weight_decay():
    s = make_store([2.0], [0.0])
    nn.adam_step(s, lr=0.1, weight_decay=0.5)
    assert abs(s["p"].data[0] - (2.0 - 0.1 * 0.5 * 2.0)) < 1e-12


def test_adam_missing_grad_and_frozen_untouched():
    s = make_store([1.0], None, frozen=[4.0, 5.0])
    with pytest.raises(GradientError):
        nn.adam_step(s, 0.1)
    s["p"].grad = np.array([1.0])
    before = s["f"].data.tobytes()
    nn.adam_step(s, 0.1, weight_decay=0.1)
    nn.ema_update(s, 0.9)
    assert s["f"].data.tobytes() == before
    assert set(s.adam) == {"p"} and set(s.ema) == {"p"}


def test_ema_recurrences():
    s = make_store([0.0])
    nn.ema_init(s)
    s["p"].data = np.array([1.0])
    nn.ema_update(s, 0.999)
    assert abs(s.ema["p"][0] - 0.001) < 1e-15
    s.ema["p"] = np.array([1.0])
    nn.ema_update(s, 0.999)
    assert s.ema["p"][0] == 1.0
    s.ema["p"] = np.array([0.0])
    s["p"].data = np.array([2.0])
    for _ in range(25):
        nn.ema_update(s, 0.9)
    assert abs(s.ema["p"][0] - 2.0 * (1 - 0.9 ** 25)) < 1e-12


def test_ema_view_reads_shadow():
    s = make_store([3.0], frozen=[1.0])
    nn.ema_init(s)
    s["p"].data = np.array([5.0])
    v = s.ema_view()
    assert v["p"].data[0] == 3.0 and v["f"].data[0] == 1.0 and not v["f"].trainable


# ----------------------------------------------------- finite difference

def micro_model(rng):
    s = nn.ParameterStore()
    s.add("W", rng.normal(size=(4, 3)))
    s.add("b", rng.normal(size=3))
    s.add("frozen", rng.normal(size=3), trainable=False)
    x = rng.normal(size=(5, 4))
    y = rng.integers(0, 2, size=(5, 3)).astype(float)

    def loss(store):
        z = nn.sigmoid(nn.dense(x, store["W"], store["b"])) * 4.0 - 2.0 + store["frozen"]
        return nn.bce_with_logits(z, y).mean()

    return s, loss


def test_finite_diff_check_micro_model(rng):
    s, loss = micro_model(rng)
    rep = nn.finite_diff_check(loss, s)
    assert set(rep) == {"W", "b"}
    assert max(rep.values()) < 1e-4


def test_finite_diff_detects_sign_flip(rng, monkeypatch):
    s, loss = micro_model(rng)
    real = nn.dense

    def flipped(x, W, b=None):
        out = real(x, W, b)
        inner = out._backward
        out._backward = lambda g: tuple(None if v is None else -v for v in inner(g))
        return out

    monkeypatch.setattr(nn, "dense", flipped)
    rep = nn.finite_diff_check(loss, s)
    assert abs(rep["W"] - 2.0) < 1e-3 and abs(rep["b"] - 2.0) < 1e-3


def test_finite_diff_non_finite_loss():
    s = make_store([1.0])
    with pytest.raises(NumericError):
        nn.finite_diff_check(lambda st: st["p"] * np.inf, s)


# ------------------------------------------------------------ checkpoints

def test_checkpoint_roundtrip(tmp_path, rng):
    s = nn.ParameterStore()
    s.add("a.W", rng.normal(size=(3, 2)))
    s.add("a.b", rng.normal(size=2), trainable=False)
    s.add("scalar", np.array(1.5))
    nn.ema_init(s)
    s.ema["a.W"] += 1.0
    p1, p2 = tmp_path / "one.ckpt", tmp_path / "two.ckpt"
    nn.save_checkpoint(p1, s, "x = 1\n")
    loaded, text = nn.load_checkpoint(p1)
    assert text == "x = 1\n"
    for p in s:
        q = loaded[p.name]
        assert q.trainable == p.trainable and q.data.tobytes() == p.data.tobytes()
    np.testing.assert_array_equal(loaded.ema["a.W"], s.ema["a.W"])
    nn.save_checkpoint(p2, loaded, text)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        nn.load_checkpoint(bad)
    bad.write_bytes(nn.MAGIC + bytes([99]))
    with pytest.raises(CheckpointError):
        nn.load_checkpoint(bad)


def test_store_rejects_duplicates():
    s = nn.ParameterStore()
    s.add("x", np.zeros(1))
    with pytest.raises(KeyError):
        s.add("x", np.zeros(1))
