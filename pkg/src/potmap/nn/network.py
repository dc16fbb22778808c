"""Network topology, parameter store, and full forward/backward passes.

The trunk is a stem convolution (kernel 5) followed by body blocks (kernel
3): residual blocks carry two convolutions plus a skip connection, plain
blocks one convolution. Every head is a kernel-1 convolution from the
shared trunk to a single output map. Strides are one, there is no pooling,
and all convolutions wrap periodically, so the network maps any lattice
extents to equally sized observable maps.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .layers import (batchnorm_backward, batchnorm_forward, conv_backward,
                     conv_forward, relu_backward, relu_forward)

STEM_KERNEL = 5
BODY_KERNEL = 3


@dataclass(frozen=True)
class NetworkSpec:
    dim: int
    input_channel_names: tuple[str, ...]
    head_names: tuple[str, ...]
    channels: int
    n_blocks: int
    residual: bool = True
    batchnorm: bool = True
    stem_kernel: int = STEM_KERNEL
    body_kernel: int = BODY_KERNEL

    def __post_init__(self):
        object.__setattr__(self, "input_channel_names",
                           tuple(self.input_channel_names))
        object.__setattr__(self, "head_names", tuple(self.head_names))
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        if not self.head_names:
            raise ValueError("at least one head is required")
        if not self.input_channel_names:
            raise ValueError("at least one input channel is required")
        if self.stem_kernel != STEM_KERNEL or self.body_kernel != BODY_KERNEL:
            raise ValueError("kernel sizes are fixed: stem 5, body 3")
        if self.channels < 1 or self.n_blocks < 0:
            raise ValueError("channels >= 1 and n_blocks >= 0 required")

    @property
    def input_channels(self) -> int:
        return len(self.input_channel_names)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkSpec":
        data = dict(data)
        data["input_channel_names"] = tuple(data["input_channel_names"])
        data["head_names"] = tuple(data["head_names"])
        return cls(**data)


def reference_spec_1d() -> NetworkSpec:
    """1D reference: 64 residual blocks, 120 channels, four heads."""
    return NetworkSpec(dim=1, input_channel_names=("v_minus_mu",),
                       head_names=("density", "density_corr", "current",
                                   "current_corr"),
                       channels=120, n_blocks=64, residual=True)


def reference_spec_2d() -> NetworkSpec:
    """2D reference: plain 20-layer, 200-channel trunk, density head."""
    return NetworkSpec(dim=2,
                       input_channel_names=("v_minus_mu", "u_onsite",
                                            "u_neighbor", "sector"),
                       head_names=("density",),
                       channels=200, n_blocks=19, residual=False)


def tiny_spec(dim: int = 1, input_channel_names=("v_minus_mu",),
              head_names=("density",), channels: int = 16,
              n_blocks: int = 4, residual: bool = True,
              batchnorm: bool = True) -> NetworkSpec:
    """Small spec for tests and CI."""
    return NetworkSpec(dim=dim, input_channel_names=input_channel_names,
                       head_names=head_names, channels=channels,
                       n_blocks=n_blocks, residual=residual,
                       batchnorm=batchnorm)


class ParameterStore:
    """Ordered named arrays plus trainability flags."""

    def __init__(self):
        self.values: dict[str, np.ndarray] = {}
        self._trainable: dict[str, bool] = {}

    def add(self, name: str, value: np.ndarray, trainable: bool) -> None:
        if name in self.values:
            raise ValueError(f"duplicate parameter {name!r}")
        self.values[name] = value
        self._trainable[name] = trainable

    def names(self) -> list[str]:
        return list(self.values)

    def trainable_names(self) -> list[str]:
        return [n for n, t in self._trainable.items() if t]

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def astype(self, dtype) -> "ParameterStore":
        out = ParameterStore()
        for name, value in self.values.items():
            out.add(name, value.astype(dtype), self._trainable[name])
        return out

    def copy(self) -> "ParameterStore":
        out = ParameterStore()
        for name, value in self.values.items():
            out.add(name, value.copy(), self._trainable[name])
        return out

    @property
    def dtype(self):
        return next(iter(self.values.values())).dtype


def _conv_units(spec: NetworkSpec):
    """(name, in_channels, out_channels, kernel, has_bn) for every conv."""
    units = [("stem", spec.input_channels, spec.channels, spec.stem_kernel,
              spec.batchnorm)]
    for i in range(spec.n_blocks):
        if spec.residual:
            units.append((f"block{i}.conv1", spec.channels, spec.channels,
                          spec.body_kernel, spec.batchnorm))
            units.append((f"block{i}.conv2", spec.channels, spec.channels,
                          spec.body_kernel, spec.batchnorm))
        else:
            units.append((f"block{i}.conv", spec.channels, spec.channels,
                          spec.body_kernel, spec.batchnorm))
    for head in spec.head_names:
        units.append((f"head.{head}", spec.channels, 1, 1, False))
    return units


def initialize_parameters(spec: NetworkSpec, seed: int,
                          dtype=np.float32) -> ParameterStore:
    """Kaiming fan-in normal weights, zero biases, unit batch norms."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2_0539]))
    store = ParameterStore()
    for name, c_in, c_out, k, has_bn in _conv_units(spec):
        shape = (c_out, c_in) + (k,) * spec.dim
        fan_in = c_in * k ** spec.dim
        std = np.sqrt(2.0 / fan_in)
        store.add(f"{name}.w",
                  (rng.standard_normal(shape) * std).astype(dtype), True)
        store.add(f"{name}.b", np.zeros(c_out, dtype=dtype), True)
        if has_bn:
            bn = name.replace("conv", "bn") if ".conv" in name else f"{name}.bn"
            store.add(f"{bn}.gamma", np.ones(c_out, dtype=dtype), True)
            store.add(f"{bn}.beta", np.zeros(c_out, dtype=dtype), True)
            store.add(f"{bn}.mean", np.zeros(c_out, dtype=dtype), False)
            store.add(f"{bn}.var", np.ones(c_out, dtype=dtype), False)
    return store


def _bn_name(conv_name: str) -> str:
    return (conv_name.replace("conv", "bn") if ".conv" in conv_name
            else f"{conv_name}.bn")


class Network:
    """Stateless forward/backward executor over a spec and store."""

    def __init__(self, spec: NetworkSpec, store: ParameterStore):
        self.spec = spec
        self.store = store

    # -- building blocks ----------------------------------------------------

    def _unit_forward(self, x, conv_name, mode, with_bn, with_relu, caches):
        w = self.store[f"{conv_name}.w"]
        b = self.store[f"{conv_name}.b"]
        y, patches = conv_forward(x, w, b, cache=True)
        entry = {"name": conv_name, "x_shape": x.shape, "patches": patches}
        if with_bn:
            bn = _bn_name(conv_name)
            y, bn_cache = batchnorm_forward(
                y, self.store[f"{bn}.gamma"], self.store[f"{bn}.beta"],
                self.store[f"{bn}.mean"], self.store[f"{bn}.var"],
                mode, cache=True)
            entry["bn"] = bn_cache
        if with_relu:
            # distance of pre-activations to the ReLU kink; lets callers
            # verify a point is locally smooth before finite differencing
            entry["relu_margin"] = float(np.min(np.abs(y))) if y.size else 0.0
            y, mask = relu_forward(y, cache=True)
            entry["relu_mask"] = mask
        caches.append(entry)
        return y

    def _unit_backward(self, grad, entry, grads):
        name = entry["name"]
        if "relu_mask" in entry:
            grad = relu_backward(grad, entry["relu_mask"])
        if "bn" in entry:
            bn = _bn_name(name)
            grad, g_gamma, g_beta = batchnorm_backward(
                grad, self.store[f"{bn}.gamma"], entry["bn"])
            grads[f"{bn}.gamma"] = grads.get(f"{bn}.gamma", 0) + g_gamma
            grads[f"{bn}.beta"] = grads.get(f"{bn}.beta", 0) + g_beta
        grad_x, g_w, g_b = conv_backward(grad, entry["x_shape"],
                                         self.store[f"{name}.w"],
                                         entry["patches"])
        grads[f"{name}.w"] = grads.get(f"{name}.w", 0) + g_w
        grads[f"{name}.b"] = grads.get(f"{name}.b", 0) + g_b
        return grad_x

    # -- public passes ------------------------------------------------------

    def forward(self, x: np.ndarray, mode: str = "eval",
                want_cache: bool = False):
        """Head maps for a batch of input channel stacks.

        x: (B, C_in, *extents) with any spatial extents; heads come back as
        (B, *extents) maps keyed by head name.
        """
        spec = self.spec
        if x.ndim != spec.dim + 2:
            raise ValueError(f"input rank {x.ndim} for a {spec.dim}D network")
        if x.shape[1] != spec.input_channels:
            raise ValueError(f"expected {spec.input_channels} input "
                             f"channels, got {x.shape[1]}")
        x = np.ascontiguousarray(x, dtype=self.store.dtype)
        caches = []
        t = self._unit_forward(x, "stem", mode, spec.batchnorm, True, caches)
        for i in range(spec.n_blocks):
            if spec.residual:
                u = self._unit_forward(t, f"block{i}.conv1", mode,
                                       spec.batchnorm, True, caches)
                u = self._unit_forward(u, f"block{i}.conv2", mode,
                                       spec.batchnorm, False, caches)
                s = t + u
                margin = float(np.min(np.abs(s))) if s.size else 0.0
                t, mask = relu_forward(s, cache=True)
                caches.append({"name": f"block{i}.skip", "relu_mask": mask,
                               "relu_margin": margin})
            else:
                t = self._unit_forward(t, f"block{i}.conv", mode,
                                       spec.batchnorm, True, caches)
        heads = {}
        for head in spec.head_names:
            y = self._unit_forward(t, f"head.{head}", mode, False, False,
                                   caches)
            heads[head] = y[:, 0]
        if want_cache:
            return heads, caches
        return heads

    def backward(self, caches: list, head_grads: dict):
        """Parameter gradients and the input-channel gradient.

        head_grads maps head name -> (B, *extents) gradient of the loss
        w.r.t. that head's output map.
        """
        spec = self.spec
        caches = list(caches)
        grads: dict[str, np.ndarray] = {}
        grad_trunk = None
        for head in reversed(spec.head_names):
            entry = caches.pop()
            if entry["name"] != f"head.{head}":
                raise ValueError("backward called with a mismatched cache")
            g = head_grads[head][:, None]
            g_x = self._unit_backward(np.ascontiguousarray(
                g, dtype=self.store.dtype), entry, grads)
            grad_trunk = g_x if grad_trunk is None else grad_trunk + g_x
        for i in reversed(range(spec.n_blocks)):
            if spec.residual:
                skip = caches.pop()
                grad_s = relu_backward(grad_trunk, skip["relu_mask"])
                g = self._unit_backward(grad_s, caches.pop(), grads)
                g = self._unit_backward(g, caches.pop(), grads)
                grad_trunk = grad_s + g
            else:
                grad_trunk = self._unit_backward(grad_trunk, caches.pop(),
                                                 grads)
        grad_input = self._unit_backward(grad_trunk, caches.pop(), grads)
        if caches:
            raise ValueError("cache not fully consumed; forward/backward "
                             "structure mismatch")
        return grads, grad_input

    # -- fused inference ----------------------------------------------------

    def fused_parameters(self) -> dict:
        """Conv weights with eval-mode batch norms folded in."""
        from .layers import BN_EPS
        fused = {}
        for name, c_in, c_out, k, has_bn in _conv_units(self.spec):
            w = self.store[f"{name}.w"].copy()
            b = self.store[f"{name}.b"].copy()
            if has_bn:
                bn = _bn_name(name)
                gamma = self.store[f"{bn}.gamma"]
                beta = self.store[f"{bn}.beta"]
                mean = self.store[f"{bn}.mean"]
                var = self.store[f"{bn}.var"]
                scale = gamma / np.sqrt(var + BN_EPS)
                w *= scale.reshape((-1,) + (1,) * (w.ndim - 1))
                b = (b - mean) * scale + beta
            fused[name] = (w, b)
        return fused

    def forward_fused(self, x: np.ndarray, fused: dict) -> dict:
        """Eval-mode forward using folded parameters (inference path)."""
        spec = self.spec
        x = np.ascontiguousarray(x, dtype=self.store.dtype)
        t = relu_forward(conv_forward(x, *fused["stem"]))
        for i in range(spec.n_blocks):
            if spec.residual:
                u = relu_forward(conv_forward(t, *fused[f"block{i}.conv1"]))
                u = conv_forward(u, *fused[f"block{i}.conv2"])
                t = relu_forward(t + u)
            else:
                t = relu_forward(conv_forward(t, *fused[f"block{i}.conv"]))
        return {head: conv_forward(t, *fused[f"head.{head}"])[:, 0]
                for head in spec.head_names}
