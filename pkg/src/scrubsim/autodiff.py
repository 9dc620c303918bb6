"""Minimal reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray and records its parents plus a backward
closure; `backward()` walks the tape in reverse topological order. Only
the operations the feature encoder and the decoder policy need are
provided. Everything is float64 so analytic gradients can be checked
against central finite differences tightly.
"""

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=float)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar")
            grad = np.ones_like(self.data)
        topo, seen = [], set()

        def visit(t):
            if id(t) in seen or not t.requires_grad:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            topo.append(t)

        visit(self)
        self._accumulate(np.asarray(grad, dtype=float))
        for t in reversed(topo):
            if t._backward is not None:
                t._backward(t.grad)

    def zero_grad(self):
        self.grad = None

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return add(self, mul_scalar(_wrap(other), -1.0))

    def __mul__(self, other):
        if np.isscalar(other):
            return mul_scalar(self, other)
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __neg__(self):
        return mul_scalar(self, -1.0)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data):
    return Tensor(np.array(data, dtype=float), requires_grad=True)


def _unbroadcast(g, shape):
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitive operations

def add(a, b):
    out = Tensor(a.data + b.data, parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    out._backward = backward
    return out


def mul(a, b):
    out = Tensor(a.data * b.data, parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    out._backward = backward
    return out


def mul_scalar(a, s):
    out = Tensor(a.data * s, parents=(a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * s)

    out._backward = backward
    return out


def matmul(a, b):
    out = Tensor(a.data @ b.data, parents=(a, b))

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.shape))

    out._backward = backward
    return out


def tanh(a):
    y = np.tanh(a.data)
    out = Tensor(y, parents=(a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - y * y))

    out._backward = backward
    return out


def reshape(a, shape):
    out = Tensor(a.data.reshape(shape), parents=(a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    out._backward = backward
    return out


def transpose(a, axes):
    out = Tensor(np.transpose(a.data, axes), parents=(a,))
    inv = np.argsort(axes)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.transpose(g, inv))

    out._backward = backward
    return out


def mean(a, axis=None, keepdims=False):
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims), parents=(a,))
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])

    def backward(g):
        if not a.requires_grad:
            return
        if axis is not None and not keepdims:
            g = np.expand_dims(g, tuple(np.atleast_1d(axis)))
        a._accumulate(np.broadcast_to(g, a.shape) / n)

    out._backward = backward
    return out


def concatenate(tensors, axis=0):
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), parents=tuple(tensors))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, o0, o1 in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(o0, o1)
                t._accumulate(g[tuple(idx)])

    out._backward = backward
    return out


def embedding(table, ids):
    """Row gather: table (V, D), ids int array -> (len(ids), D)."""
    ids = np.asarray(ids, dtype=np.int64)
    out = Tensor(table.data[ids], parents=(table,))

    def backward(g):
        if table.requires_grad:
            acc = np.zeros_like(table.data)
            np.add.at(acc, ids, g)
            table._accumulate(acc)

    out._backward = backward
    return out


def softmax(a, axis=-1):
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, parents=(a,))

    def backward(g):
        if a.requires_grad:
            dot = (g * y).sum(axis=axis, keepdims=True)
            a._accumulate(y * (g - dot))

    out._backward = backward
    return out


def masked_cross_entropy(logits, targets, weights):
    """Mean of per-position cross-entropies weighted by `weights`.

    logits (T, V), targets (T,) int ids, weights (T,) with sum > 0; the
    result is sum_t w_t * ce_t / sum_t w_t.
    """
    targets = np.asarray(targets, dtype=np.int64)
    weights = np.asarray(weights, dtype=float)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    ce = lse - z[np.arange(len(targets)), targets]
    wsum = weights.sum()
    out = Tensor(np.array((ce * weights).sum() / wsum), parents=(logits,))
    probs = np.exp(z) / np.exp(z).sum(axis=-1, keepdims=True)

    def backward(g):
        if logits.requires_grad:
            grad = probs * (weights / wsum)[:, None]
            grad[np.arange(len(targets)), targets] -= weights / wsum
            logits._accumulate(g * grad)

    out._backward = backward
    return out


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    s = np.sqrt(var + eps)
    xhat = (x.data - mu) / s
    out = Tensor(xhat * gain.data + bias.data, parents=(x, gain, bias))

    def backward(g):
        if bias.requires_grad:
            bias._accumulate(_unbroadcast(g, bias.shape))
        if gain.requires_grad:
            gain._accumulate(_unbroadcast(g * xhat, gain.shape))
        if x.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x._accumulate((dxhat - m1 - xhat * m2) / s)

    out._backward = backward
    return out


def gather_rows(a, idx):
    """Select rows along the first axis: a (T, ...) -> (len(idx), ...)."""
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(a.data[idx], parents=(a,))

    def backward(g):
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            np.add.at(acc, idx, g)
            a._accumulate(acc)

    out._backward = backward
    return out


def _patches(x, k, stride, pad):
    """(N, C, H, W) -> strided view (N, Ho, Wo, C, k, k)."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    view = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    return x, view[:, :, ::stride, ::stride].transpose(0, 2, 3, 1, 4, 5)


def conv2d(x, w, b, stride=2, pad=1):
    """x (N, Cin, H, W), w (Cout, Cin, k, k), b (Cout,) -> (N, Cout, Ho, Wo)."""
    k = w.shape[2]
    xp, pat = _patches(x.data, k, stride, pad)
    n, ho, wo = pat.shape[0], pat.shape[1], pat.shape[2]
    cols = pat.reshape(n, ho, wo, -1)
    wmat = w.data.reshape(w.shape[0], -1)
    y = cols @ wmat.T + b.data
    out = Tensor(y.transpose(0, 3, 1, 2), parents=(x, w, b))

    def backward(g):
        gt = g.transpose(0, 2, 3, 1)              # (N, Ho, Wo, Cout)
        if b.requires_grad:
            b._accumulate(gt.sum(axis=(0, 1, 2)))
        if w.requires_grad:
            gw = np.einsum("nhwo,nhwc->oc", gt, cols)
            w._accumulate(gw.reshape(w.shape))
        if x.requires_grad:
            gcols = gt @ wmat                     # (N, Ho, Wo, Cin*k*k)
            gx = np.zeros_like(xp)
            gp = gcols.reshape(n, ho, wo, x.shape[1], k, k)
            for i in range(ho):
                for j in range(wo):
                    gx[:, :, i * stride:i * stride + k, j * stride:j * stride + k] += gp[:, i, j]
            if pad:
                gx = gx[:, :, pad:-pad, pad:-pad]
            x._accumulate(gx)

    out._backward = backward
    return out


def finite_difference(f, param, step=1e-5):
    """Central finite differences of scalar f() w.r.t. every entry of param."""
    grad = np.zeros_like(param.data)
    flat = param.data.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f()
        flat[i] = orig - step
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return grad
