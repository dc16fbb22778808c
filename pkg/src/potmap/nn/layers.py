"""Convolution, batch-norm, and activation kernels with exact backwards.

Data layout is (batch, channels, *spatial). Convolutions are stride-1
cross-correlations with circular indexing on every spatial axis, so output
maps keep the input extents on any lattice size; gather indices are cached
per (extents, kernel).
"""

from __future__ import annotations

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

_INDEX_CACHE: dict[tuple, np.ndarray] = {}


def _circular_indices(extents: tuple[int, ...], k: int) -> np.ndarray:
    """Flat gather indices of shape (*extents, k**dim) for one patch each."""
    key = (extents, k)
    hit = _INDEX_CACHE.get(key)
    if hit is not None:
        return hit
    offsets = np.arange(k) - k // 2
    if len(extents) == 1:
        (L,) = extents
        idx = (np.arange(L)[:, None] + offsets[None, :]) % L
        idx = idx.reshape(L, k)
    else:
        H, W = extents
        rows = (np.arange(H)[:, None] + offsets[None, :]) % H
        cols = (np.arange(W)[:, None] + offsets[None, :]) % W
        # (H, W, k, k) -> flat site index r * W + c
        idx = (rows[:, None, :, None] * W + cols[None, :, None, :])
        idx = idx.reshape(H, W, k * k)
    idx = np.ascontiguousarray(idx, dtype=np.intp)
    _INDEX_CACHE[key] = idx
    return idx


def _gather_patches(x: np.ndarray, k: int) -> np.ndarray:
    """(B, C, *sp) -> (B * prod(sp), C * k**dim) patch matrix."""
    batch, chans = x.shape[:2]
    extents = x.shape[2:]
    idx = _circular_indices(extents, k)
    flat = x.reshape(batch, chans, -1)
    taps = idx.shape[-1]
    patches = flat[:, :, idx.reshape(-1)]
    patches = patches.reshape(batch, chans, -1, taps)
    patches = patches.transpose(0, 2, 1, 3)
    return np.ascontiguousarray(patches).reshape(-1, chans * taps)


def conv_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray,
                 cache: bool = False):
    """Circular cross-correlation.

    weights: (C_out, C_in, k) or (C_out, C_in, k, k); bias: (C_out,).
    Returns y (and the patch matrix when cache is requested for backward).
    """
    dim = weights.ndim - 2
    if x.ndim != dim + 2:
        raise ValueError(f"input rank {x.ndim} does not match {dim}D kernel")
    if x.shape[1] != weights.shape[1]:
        raise ValueError(f"input channels {x.shape[1]} != kernel input "
                         f"channels {weights.shape[1]}")
    k = weights.shape[2]
    if k % 2 == 0:
        raise ValueError("kernel size must be odd")
    batch = x.shape[0]
    extents = x.shape[2:]
    c_out = weights.shape[0]
    patches = _gather_patches(x, k)
    w_mat = weights.reshape(c_out, -1).T
    y = patches @ w_mat
    y += bias
    y = y.reshape(batch, *extents, c_out)
    y = np.moveaxis(y, -1, 1)
    y = np.ascontiguousarray(y)
    if cache:
        return y, patches
    return y


def conv_backward(grad_out: np.ndarray, x_shape, weights: np.ndarray,
                  patches: np.ndarray):
    """Gradients of conv_forward w.r.t. (input, weights, bias).

    grad_out: (B, C_out, *sp); patches: the forward's cached patch matrix.
    """
    c_out = weights.shape[0]
    k = weights.shape[2]
    dim = weights.ndim - 2
    g = np.moveaxis(grad_out, 1, -1).reshape(-1, c_out)
    grad_b = g.sum(axis=0)
    grad_w = (patches.T @ g).T.reshape(weights.shape)
    # input gradient: correlate grad_out with the flipped, channel-swapped
    # kernel (the exact adjoint of circular cross-correlation)
    w_t = np.swapaxes(weights, 0, 1)
    flip_axes = tuple(range(2, 2 + dim))
    w_t = np.flip(w_t, axis=flip_axes)
    zero_bias = np.zeros(w_t.shape[0], dtype=grad_out.dtype)
    grad_x = conv_forward(grad_out, np.ascontiguousarray(w_t), zero_bias)
    return grad_x, grad_w, grad_b


def relu_forward(x: np.ndarray, cache: bool = False):
    y = np.maximum(x, 0)
    if cache:
        return y, x > 0
    return y


def relu_backward(grad_out: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return grad_out * mask


def batchnorm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                      running_mean: np.ndarray, running_var: np.ndarray,
                      mode: str, cache: bool = False):
    """Per-channel normalization over batch and space.

    Train mode normalizes with biased batch statistics and updates the
    running buffers in place (momentum 0.1); eval mode uses the running
    buffers. Requires batch size >= 2 in train mode.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    axes = (0,) + tuple(range(2, x.ndim))
    shape = (1, -1) + (1,) * (x.ndim - 2)
    if mode == "train":
        if x.shape[0] < 2:
            raise ValueError("batch norm needs batch size >= 2 in train mode")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= 1.0 - BN_MOMENTUM
        running_mean += BN_MOMENTUM * mean
        running_var *= 1.0 - BN_MOMENTUM
        running_var += BN_MOMENTUM * var
    else:
        mean = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    x_hat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    y = gamma.reshape(shape) * x_hat + beta.reshape(shape)
    if cache:
        return y, (x_hat, inv_std, mode)
    return y


def batchnorm_backward(grad_out: np.ndarray, gamma: np.ndarray, bn_cache):
    """Gradients w.r.t. (input, gamma, beta)."""
    x_hat, inv_std, mode = bn_cache
    axes = (0,) + tuple(range(2, grad_out.ndim))
    shape = (1, -1) + (1,) * (grad_out.ndim - 2)
    grad_beta = grad_out.sum(axis=axes)
    grad_gamma = (grad_out * x_hat).sum(axis=axes)
    g_hat = grad_out * gamma.reshape(shape)
    if mode == "eval":
        return g_hat * inv_std.reshape(shape), grad_gamma, grad_beta
    term = (g_hat
            - g_hat.mean(axis=axes).reshape(shape)
            - x_hat * (g_hat * x_hat).mean(axis=axes).reshape(shape))
    return term * inv_std.reshape(shape), grad_gamma, grad_beta
