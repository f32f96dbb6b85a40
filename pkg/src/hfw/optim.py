"""Adam with bias correction, over name-keyed parameter dicts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    """Fresh state with zero first/second moments matching params' shapes."""
    st = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    for name, p in params.items():
        st.m[name] = np.zeros_like(p)
        st.v[name] = np.zeros_like(p)
    return st


def adam_step(params, grads, state):
    """One update over all entries of params, in place; returns (params, state).

    Zero gradient for a parameter with zero accumulated moments leaves it
    bitwise unchanged.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        if name not in grads:
            raise KeyError("no gradient for parameter %r" % name)
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError("gradient shape %s does not match parameter %r shape %s"
                             % (g.shape, name, p.shape))
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if not m.any() and not v.any():
            continue
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
