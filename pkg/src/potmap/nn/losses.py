"""Pointwise training losses with analytic gradients."""

from __future__ import annotations

import numpy as np


def loss(pred: np.ndarray, target: np.ndarray, kind: str):
    """Mean absolute or mean squared error over all elements.

    Returns (value, gradient w.r.t. pred). The MAE subgradient at zero
    difference is zero.
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    n = diff.size
    if kind == "mae":
        return float(np.abs(diff).mean()), np.sign(diff) / n
    if kind == "mse":
        return float((diff * diff).mean()), 2.0 * diff / n
    raise ValueError(f"unknown loss kind {kind!r}")


def multi_head_loss(preds: dict, targets: dict, kind: str):
    """Single mean over batch, heads, and space.

    All head maps contribute with equal per-element weight; returns
    (value, per-head gradient dict).
    """
    if sorted(preds) != sorted(targets):
        raise ValueError(f"head mismatch {sorted(preds)} vs {sorted(targets)}")
    total = sum(preds[name].size for name in preds)
    value = 0.0
    grads = {}
    for name in preds:
        diff = preds[name] - targets[name]
        if kind == "mae":
            value += float(np.abs(diff).sum())
            grads[name] = np.sign(diff) / total
        elif kind == "mse":
            value += float((diff * diff).sum())
            grads[name] = 2.0 * diff / total
        else:
            raise ValueError(f"unknown loss kind {kind!r}")
    return value / total, grads
