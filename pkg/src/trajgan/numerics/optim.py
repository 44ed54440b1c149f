"""Adam, global-norm clipping and parameter initialisation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import DimensionError, Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """In-place bias-corrected Adam update of ``params`` (name -> Tensor).

    Returns ``(params, state)`` for convenience.
    """
    for name, p in params.items():
        if grads[name].shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {grads[name].shape}, expected {p.shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads, max_norm):
    """Scale all gradients down together if their joint L2 norm exceeds ``max_norm``."""
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def init_weight(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape))


def init_bias(shape):
    return Tensor(np.zeros(shape))
