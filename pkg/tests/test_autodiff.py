import numpy as np
import pytest

from scrubsim import autodiff as ad


def fd_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        xp = x.copy(); xp[i] += eps
        xm = x.copy(); xm[i] -= eps
        g[i] = (f(xp) - f(xm)) / (2 * eps)
    return g


def check_unary(op, x, tol=1e-7, **kw):
    t = ad.parameter(x.copy())
    out = ad.mean(op(t, **kw) if kw else op(t))
    out.backward()
    num = fd_grad(lambda v: np.mean(
        (op(ad.Tensor(v), **kw) if kw else op(ad.Tensor(v))).data), x)
    np.testing.assert_allclose(t.grad, num, atol=tol)


def test_add_mul_with_broadcasting():
    rng = np.random.default_rng(0)
    a = ad.parameter(rng.standard_normal((3, 4)))
    b = ad.parameter(rng.standard_normal((4,)))
    out = ad.mean(ad.mul(ad.add(a, b), b))
    out.backward()
    num_a = fd_grad(lambda v: np.mean((v + b.data) * b.data), a.data)
    num_b = fd_grad(lambda v: np.mean((a.data + v) * v), b.data)
    np.testing.assert_allclose(a.grad, num_a, atol=1e-8)
    np.testing.assert_allclose(b.grad, num_b, atol=1e-8)


def test_matmul_grads():
    rng = np.random.default_rng(1)
    a = ad.parameter(rng.standard_normal((5, 3)))
    b = ad.parameter(rng.standard_normal((3, 4)))
    ad.mean(ad.matmul(a, b)).backward()
    num_a = fd_grad(lambda v: np.mean(v @ b.data), a.data)
    num_b = fd_grad(lambda v: np.mean(a.data @ v), b.data)
    np.testing.assert_allclose(a.grad, num_a, atol=1e-8)
    np.testing.assert_allclose(b.grad, num_b, atol=1e-8)


def test_batched_matmul_grads():
    rng = np.random.default_rng(2)
    a = ad.parameter(rng.standard_normal((2, 4, 3)))
    b = ad.parameter(rng.standard_normal((2, 3, 5)))
    ad.mean(ad.matmul(a, b)).backward()
    num_a = fd_grad(lambda v: np.mean(np.matmul(v, b.data)), a.data)
    np.testing.assert_allclose(a.grad, num_a, atol=1e-8)


def test_tanh_grad():
    rng = np.random.default_rng(3)
    check_unary(ad.tanh, rng.standard_normal((4, 4)))


def test_softmax_rows_sum_to_one_and_grad():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((6, 10))
    t = ad.parameter(x.copy())
    s = ad.softmax(t)
    np.testing.assert_allclose(s.data.sum(axis=-1), 1.0, atol=1e-12)
    w = rng.standard_normal(s.data.shape)
    ad.mean(ad.mul(s, ad.Tensor(w))).backward()

    def scalar(v):
        e = np.exp(v - v.max(axis=-1, keepdims=True))
        p = e / e.sum(axis=-1, keepdims=True)
        return np.mean(p * w)
    np.testing.assert_allclose(t.grad, fd_grad(scalar, x), atol=1e-7)


def test_layer_norm_grad():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((3, 8))
    g = rng.standard_normal(8)
    b = rng.standard_normal(8)
    tx, tg, tb = ad.parameter(x.copy()), ad.parameter(g.copy()), ad.parameter(b.copy())
    ad.mean(ad.layer_norm(tx, tg, tb)).backward()

    def scalar_x(v):
        mu = v.mean(-1, keepdims=True)
        var = v.var(-1, keepdims=True)
        return np.mean((v - mu) / np.sqrt(var + 1e-5) * g + b)
    np.testing.assert_allclose(tx.grad, fd_grad(scalar_x, x), atol=1e-6)


def test_masked_cross_entropy_matches_manual():
    rng = np.random.default_rng(6)
    logits = rng.standard_normal((5, 11))
    targets = rng.integers(0, 11, 5)
    weights = np.array([1.0, 0.0, 1.0, 1.0, 0.0])
    t = ad.parameter(logits.copy())
    loss = ad.masked_cross_entropy(t, targets, weights)
    # manual per-position log-softmax oracle
    m = logits - logits.max(-1, keepdims=True)
    logp = m - np.log(np.exp(m).sum(-1, keepdims=True))
    want = -(logp[np.arange(5), targets] * weights).sum() / weights.sum()
    assert abs(loss.data - want) <= 1e-12
    loss.backward()

    def scalar(v):
        m = v - v.max(-1, keepdims=True)
        lp = m - np.log(np.exp(m).sum(-1, keepdims=True))
        return -(lp[np.arange(5), targets] * weights).sum() / weights.sum()
    np.testing.assert_allclose(t.grad, fd_grad(scalar, logits), atol=1e-7)


def test_embedding_grad_accumulates_repeats():
    table = ad.parameter(np.random.default_rng(7).standard_normal((10, 4)))
    ids = np.array([2, 2, 5])
    out = ad.embedding(table, ids)
    ad.mean(out).backward()
    want = np.zeros((10, 4))
    want[2] = 2 / 12
    want[5] = 1 / 12
    np.testing.assert_allclose(table.grad, want, atol=1e-15)


def test_conv2d_grads():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((1, 1, 8, 8))
    w = rng.standard_normal((2, 1, 3, 3))
    b = rng.standard_normal(2)
    tx, tw, tb = ad.parameter(x.copy()), ad.parameter(w.copy()), ad.parameter(b.copy())
    out = ad.conv2d(tx, tw, tb)
    assert out.data.shape == (1, 2, 4, 4)  # stride 2, pad 1
    ad.mean(out).backward()
    num_w = fd_grad(lambda v: np.mean(
        ad.conv2d(ad.Tensor(x), ad.Tensor(v), ad.Tensor(b)).data), w)
    num_x = fd_grad(lambda v: np.mean(
        ad.conv2d(ad.Tensor(v), ad.Tensor(w), ad.Tensor(b)).data), x)
    np.testing.assert_allclose(tw.grad, num_w, atol=1e-7)
    np.testing.assert_allclose(tx.grad, num_x, atol=1e-7)


def test_diamond_graph_accumulates_both_paths():
    x = ad.parameter(np.array([2.0]))
    y = ad.add(ad.mul(x, x), x)  # x^2 + x -> d/dx = 2x + 1 = 5
    ad.mean(y).backward()
    np.testing.assert_allclose(x.grad, [5.0], atol=1e-12)


def test_gather_rows_grad():
    t = ad.parameter(np.arange(12, dtype=float).reshape(4, 3))
    out = ad.gather_rows(t, np.array([1, 1, 3]))
    ad.mean(out).backward()
    want = np.zeros((4, 3))
    want[1] = 2 / 9
    want[3] = 1 / 9
    np.testing.assert_allclose(t.grad, want, atol=1e-15)
