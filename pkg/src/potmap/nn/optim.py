"""Bias-corrected Adam on a parameter store."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    """First/second moment buffers and the shared step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_store(cls, store) -> "AdamState":
        m = {name: np.zeros_like(store.values[name])
             for name in store.trainable_names()}
        v = {name: np.zeros_like(store.values[name])
             for name in store.trainable_names()}
        return cls(m=m, v=v, step=0)


def adam_step(store, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    """One in-place Adam update over every trainable parameter."""
    state.step += 1
    t = state.step
    correct1 = 1.0 - beta1 ** t
    correct2 = 1.0 - beta2 ** t
    for name in store.trainable_names():
        g = grads[name]
        if g.shape != store.values[name].shape:
            raise ValueError(f"gradient shape mismatch for {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / correct1
        v_hat = v / correct2
        store.values[name] -= (lr * m_hat
                               / (np.sqrt(v_hat) + eps)).astype(
                                   store.values[name].dtype)
    return state
