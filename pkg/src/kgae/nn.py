"""Layers built on :mod:`kgae.tensor`."""
import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import Tensor


class Module:
    """Parameter container; every ``Tensor`` attribute is a parameter."""

    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            if isinstance(val, Tensor):
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{key}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self):
        """Ordered name -> Tensor map; a tensor reachable twice is listed once."""
        out, seen = {}, set()
        for name, p in self.named_parameters():
            if id(p) not in seen:
                seen.add(id(p))
                out[name] = p
        return out

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad = None


def init_weight(rng, fan_in, fan_out):
    return T.parameter(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out)))


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True):
        self.w = init_weight(rng, d_in, d_out)
        if bias:
            self.b = T.parameter(np.zeros(d_out))
        else:
            self.b = None

    def __call__(self, x):
        return T.linear(x, self.w, self.b)


class LayerNorm(Module):
    def __init__(self, d):
        self.gamma = T.parameter(np.ones(d))
        self.beta = T.parameter(np.zeros(d))

    def __call__(self, x):
        return T.layer_norm(x, self.gamma, self.beta)


class FeedForward(Module):
    """FC-ReLU-FC."""

    def __init__(self, d_in, d_hidden, d_out, rng):
        self.fc1 = Linear(d_in, d_hidden, rng)
        self.fc2 = Linear(d_hidden, d_out, rng)

    def __call__(self, x):
        return self.fc2(T.relu(self.fc1(x)))


def _split_heads(t, heads):
    # (..., N, d) -> (..., H, N, d/H)
    shape = t.shape
    t = T.reshape(t, shape[:-1] + (heads, shape[-1] // heads))
    return T.swapaxes(t, -2, -3)


def _merge_heads(t):
    # (..., H, N, dh) -> (..., N, H*dh)
    t = T.swapaxes(t, -2, -3)
    shape = t.shape
    return T.reshape(t, shape[:-2] + (shape[-2] * shape[-1],))


class MultiHeadAttention(Module):
    """softmax(x Wq (y Wk)^T / sqrt(d_head)) y Wv, per head, then an output map."""

    def __init__(self, d, heads, rng):
        if heads < 1 or d % heads:
            raise ConfigError(f"head count {heads} does not divide model width {d}")
        self.heads = heads
        self.wq = init_weight(rng, d, d)
        self.wk = init_weight(rng, d, d)
        self.wv = init_weight(rng, d, d)
        self.wo = init_weight(rng, d, d)

    def project_kv(self, y):
        return (_split_heads(T.linear(y, self.wk), self.heads),
                _split_heads(T.linear(y, self.wv), self.heads))

    def attend(self, x, k, v, mask=None, return_weights=False):
        q = _split_heads(T.linear(x, self.wq), self.heads)
        q = q * (1.0 / np.sqrt(q.shape[-1]))
        scores = T.matmul(q, T.swapaxes(k, -1, -2))
        weights = T.softmax(scores, axis=-1, mask=mask)
        out = T.linear(_merge_heads(T.matmul(weights, v)), self.wo)
        return (out, weights) if return_weights else out

    def __call__(self, x, y, mask=None, return_weights=False):
        k, v = self.project_kv(y)
        return self.attend(x, k, v, mask=mask, return_weights=return_weights)


def sinusoid_table(n_pos, d):
    pos = np.arange(n_pos)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def causal_mask(n):
    return np.tril(np.ones((n, n), dtype=bool))
