"""Dense fp64 tensors with reverse-mode automatic differentiation.

Every op returns a new :class:`Tensor`; when any input requires a gradient
(and recording is enabled) the output remembers its parents and a closure
mapping the output gradient to one gradient per parent. :func:`backward`
orders the reachable graph into a :class:`GradTape` and replays it in
reverse.
"""
import threading
from contextlib import contextmanager

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError, NumericError

DTYPE = np.float64

_state = threading.local()


def grad_enabled():
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.op = None

    # -- introspection ------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return self.data.shape[0]

    # -- operators ----------------------------------------------------------
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

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data):
    return Tensor(data, requires_grad=True)


def _make(data, parents, backward, op):
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        out.op = op
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- tape and backward -------------------------------------------------------

class GradTape:
    """Operations reachable from a root, in execution (topological) order."""

    def __init__(self, root):
        order, seen = [], set()
        stack = [(root, False)]
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
        self.records = order

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def reverse(self):
        return reversed(self.records)


def backward(loss, grad=None):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Leaves accumulate across calls; interior nodes get this call's gradient.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor")
    if grad is None and loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not on the tape (no input requires grad)")
    tape = GradTape(loss)
    seed = np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=DTYPE)
    grads = {id(loss): seed}
    for node in tape.reverse():
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._parents:
            node.grad = g
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                k = id(p)
                if k in grads:
                    grads[k] = grads[k] + pg
                else:
                    grads[k] = pg
        else:
            node.grad = g.copy() if node.grad is None else node.grad + g
    return tape


# -- elementwise ------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)), "div")


def relu(x):
    x = as_tensor(x)
    pos = x.data > 0
    return _make(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,), "relu")


def sigmoid(x):
    x = as_tensor(x)
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    e = np.exp(x.data[~pos])
    out[~pos] = e / (1.0 + e)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x):
    x = as_tensor(x)
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


# -- shape ------------------------------------------------------------------

def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x, axes=None):
    x = as_tensor(x)
    if axes is None:
        axes = tuple(range(x.ndim))[::-1]
    inv = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def swapaxes(x, a1, a2):
    x = as_tensor(x)
    return _make(np.swapaxes(x.data, a1, a2), (x,), lambda g: (np.swapaxes(g, a1, a2),), "swapaxes")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw, "concat")


def broadcast_to(x, shape):
    x = as_tensor(x)
    old = x.shape
    return _make(np.broadcast_to(x.data, shape).copy(), (x,), lambda g: (_unbroadcast(g, old),), "broadcast")


def getitem(x, idx):
    x = as_tensor(x)

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(x.data[idx], (x,), bw, "getitem")


def take_rows(table, ids):
    """Gather rows of a 2-D ``table`` with an integer index array of any shape."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    n, d = table.shape

    def bw(g):
        flat = ids.reshape(-1)
        gg = g.reshape(-1, d)
        full = np.zeros((n, d))
        np.add.at(full, flat, gg)
        return (full,)

    return _make(table.data[ids], (table,), bw, "take_rows")


# -- reductions -------------------------------------------------------------

def tsum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), bw, "sum")


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis, keepdims) * (1.0 / n)


# -- linear algebra ---------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    sa, sb = a.shape, b.shape

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), sa)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, sb)
        return ga, gb

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def linear(x, w, b=None):
    """``x @ w + b`` for 2-D ``w`` of shape (in, out), any leading dims on ``x``."""
    x, w = as_tensor(x), as_tensor(w)
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear shape mismatch: {x.shape} @ {w.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ w.data
    if b is not None:
        b = as_tensor(b)
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _make(out.reshape(lead + (w.shape[1],)), parents, bw, "linear")


# -- fused nonlinear kernels ------------------------------------------------

def softmax(x, axis=-1, mask=None):
    """Max-subtracted softmax. ``mask`` (broadcastable bool) marks allowed entries."""
    x = as_tensor(x)
    z = x.data if mask is None else np.where(mask, x.data, -np.inf)
    top = z.max(axis=axis, keepdims=True)
    if np.isnan(top).any():
        raise NumericError("softmax received NaN input")
    e = np.exp(z - top)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), bw, "softmax")


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), bw, "log_softmax")


def layer_norm(x, gamma, beta, eps=1e-5):
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    d = x.shape[-1]

    def bw(g):
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    assert gamma.shape == (d,)
    return _make(out, (x, gamma, beta), bw, "layer_norm")


def cross_entropy(logits, targets, ignore_index=None):
    """Mean over counted positions of -log softmax(logits)[target].

    ``logits`` is (..., V); ``targets`` is an int array of the leading shape.
    Positions equal to ``ignore_index`` are excluded from the mean.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    v = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise DimensionError(f"targets shape {targets.shape} does not match logits {logits.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        bad = targets[(targets < 0) | (targets >= v)][0]
        raise IndexError(f"target id {bad} out of range for {v} classes")
    z = logits.data.reshape(-1, v)
    t = targets.reshape(-1)
    keep = np.ones(t.shape, dtype=bool) if ignore_index is None else t != ignore_index
    count = max(int(keep.sum()), 1)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(t.size)
    loss = -(logp[rows, t] * keep).sum() / count

    def bw(g):
        p = np.exp(logp)
        p[rows, t] -= 1.0
        p *= (keep / count)[:, None]
        return ((p * g).reshape(logits.shape),)

    return _make(np.asarray(loss), (logits,), bw, "cross_entropy")


def bce_with_logits(logits, targets):
    """Binary cross-entropy averaged over every element."""
    logits = as_tensor(logits)
    y = np.asarray(targets, dtype=DTYPE)
    z = logits.data
    loss = (np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))).mean()
    n = z.size

    def bw(g):
        p = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
        return (g * (p - y) / n,)

    return _make(np.asarray(loss), (logits,), bw, "bce")


def conv2d(x, w, b=None, stride=1, pad=0):
    """NCHW convolution (cross-correlation) via im2col."""
    x, w = as_tensor(x), as_tensor(w)
    n, c, h, wd = x.shape
    cout, cin, kh, kw = w.shape
    if cin != c:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape}, weight {w.shape}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    cols = kernels.im2col(x.data, kh, kw, stride, pad)
    wmat = w.data.reshape(cout, -1)
    out = cols @ wmat.T
    if b is not None:
        b = as_tensor(b)
        out = out + b.data
    out4 = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n, ho * wo, cout)
        gx = kernels.col2im(g2 @ wmat, x.shape, kh, kw, stride, pad) if x.requires_grad else None
        gw = (g2.reshape(-1, cout).T @ cols.reshape(-1, cols.shape[-1])).reshape(w.shape) if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=(0, 1))

    return _make(np.ascontiguousarray(out4), parents, bw, "conv2d")


def adaptive_avg_pool2d(x, out_hw):
    """Average over the standard adaptive bins; a plain reshape-mean when sizes divide."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    oh, ow = out_hw
    if h % oh == 0 and w % ow == 0:
        fh, fw = h // oh, w // ow
        out = x.data.reshape(n, c, oh, fh, ow, fw).mean(axis=(3, 5))

        def bw(g):
            return (np.repeat(np.repeat(g, fh, axis=2), fw, axis=3) / (fh * fw),)

        return _make(out, (x,), bw, "avgpool")
    hb = [(i * h // oh, -((-(i + 1) * h) // oh)) for i in range(oh)]
    wb = [(j * w // ow, -((-(j + 1) * w) // ow)) for j in range(ow)]
    out = np.empty((n, c, oh, ow))
    for i, (h0, h1) in enumerate(hb):
        for j, (w0, w1) in enumerate(wb):
            out[:, :, i, j] = x.data[:, :, h0:h1, w0:w1].mean(axis=(2, 3))

    def bw_general(g):
        gx = np.zeros_like(x.data)
        for i, (h0, h1) in enumerate(hb):
            for j, (w0, w1) in enumerate(wb):
                gx[:, :, h0:h1, w0:w1] += g[:, :, i:i + 1, j:j + 1] / ((h1 - h0) * (w1 - w0))
        return (gx,)

    return _make(out, (x,), bw_general, "avgpool")
