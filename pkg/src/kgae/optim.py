"""Adam with bias correction, plus global-norm gradient clipping."""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ContractError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state):
    """Update every tensor in ``params`` (name -> Tensor) from its ``.grad``.

    Parameters are modified in place; the moment buffers in ``state`` are
    created on first sight of a name.
    """
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"parameter {name!r} has no gradient")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        kernels.adam_update(p.data, p.grad, state.m[name], state.v[name], state.lr, state.beta1,
                            state.beta2, state.eps, state.weight_decay, bc1, bc2)
    return params, state


def clip_grad_norm(params, max_norm):
    """Scale all grads so their joint L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    total = float(np.sqrt(sum(float((p.grad * p.grad).sum()) for p in params.values() if p.grad is not None)))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return total
