"""First-order parameter updates.

Both rules work on dicts of numpy arrays keyed by parameter name and return
new arrays; ``apply`` writes them back into Tensor parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def sgd_step(params: dict, grads: dict, lr: float) -> dict:
    return {k: p - lr * grads[k] if grads.get(k) is not None else p for k, p in params.items()}


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> dict:
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** state.t
    bias2 = 1.0 - b2 ** state.t
    out = {}
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            out[k] = p
            continue
        m = state.m.get(k, np.zeros_like(p))
        v = state.v.get(k, np.zeros_like(p))
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[k], state.v[k] = m, v
        m_hat = m / bias1
        v_hat = v / bias2
        out[k] = (p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype)
    return out


def apply(tensors: dict, values: dict):
    for k, t in tensors.items():
        t.data = values[k]
