"""Gradient-based inversion: find a potential producing a target density.

Unconstrained latent variables are mapped through a scaled and shifted
sigmoid onto the allowed potential range, so every iterate stays inside the
bounds the network was trained on. Adam descends on the latents; multiple
seeded restarts guard against poor basins, and the best iterate ever seen
is returned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import ModelParams
from .nn import Network, multi_head_loss
from .predict import Predictor
from .sampling import _scalar_transform


@dataclass
class InversionConfig:
    target_density: np.ndarray
    v_lo: float
    v_hi: float
    mu: float
    params: ModelParams | None = None
    sector: float = 1.0
    steps: int = 400
    lr: float = 0.05
    restarts: int = 4
    seed: int = 0
    init_noise_frac: float = 0.01
    symmetrize: bool = True   # invert the reflection-averaged predictor
    optimize_params: bool = False
    u_bounds: tuple[float, float] | None = None
    uprime_bounds: tuple[float, float] | None = None

    def __post_init__(self):
        if not self.v_lo < self.v_hi:
            raise ValueError("need v_lo < v_hi")
        if self.steps < 0 or self.restarts < 1:
            raise ValueError("steps >= 0 and restarts >= 1 required")
        if self.optimize_params and not (self.u_bounds
                                         and self.uprime_bounds):
            raise ValueError("joint inversion needs u_bounds and "
                             "uprime_bounds")


@dataclass
class InversionResult:
    potential: np.ndarray
    predicted_density: np.ndarray
    loss: float
    loss_trace: list[float]             # best-so-far, non-increasing
    restart_losses: list[float]
    params: ModelParams | None = None
    mu: float = 0.0


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _logit(p):
    p = np.clip(p, 1e-9, 1 - 1e-9)
    return np.log(p / (1.0 - p))


class _AdamArrays:
    """Minimal Adam over a dict of latent arrays."""

    def __init__(self, shapes):
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}
        self.t = 0

    def step(self, values, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.t += 1
        c1 = 1.0 - beta1 ** self.t
        c2 = 1.0 - beta2 ** self.t
        for key, g in grads.items():
            self.m[key] = beta1 * self.m[key] + (1 - beta1) * g
            self.v[key] = beta2 * self.v[key] + (1 - beta2) * g * g
            values[key] = values[key] - lr * (self.m[key] / c1) / (
                np.sqrt(self.v[key] / c2) + eps)
        return values


def invert(predictor: Predictor, cfg: InversionConfig) -> InversionResult:
    """Recover a potential whose predicted density matches the target."""
    target = np.asarray(cfg.target_density, dtype=np.float64)
    extents = target.shape
    spec = predictor.spec
    if "density" not in spec.head_names:
        raise ValueError("inversion requires a density head")
    trained = predictor.training_ranges()
    v_max = trained.get("v_max")
    if v_max is not None and (cfg.v_lo < -v_max - 1e-9
                              or cfg.v_hi > v_max + 1e-9):
        raise ValueError(
            f"inversion bounds [{cfg.v_lo}, {cfg.v_hi}] exceed the "
            f"potential range +-{v_max} the model was trained on")
    net = Network(spec, predictor.store)
    span = cfg.v_hi - cfg.v_lo
    channel_index = spec.input_channel_names.index("v_minus_mu")

    # reflection orbit matching the production predictor
    orbits = [[]]
    if cfg.symmetrize:
        orbits.append([("reflect", 0)])
        if spec.dim == 2:
            orbits += [[("reflect", 1)], [("reflect", 0), ("reflect", 1)]]
    n_orb = len(orbits)

    def apply_ops(arr, ops):
        for op in ops:
            arr = _scalar_transform(arr, op)
        return arr

    def evaluate(latents):
        """Loss of the (orbit-averaged) predicted density and its gradient
        with respect to the stacked input channels, per orbit variant."""
        v = cfg.v_lo + span * _sigmoid(latents["z"])
        assert np.all(v >= cfg.v_lo) and np.all(v <= cfg.v_hi)
        params = cfg.params
        if cfg.optimize_params:
            u = cfg.u_bounds[0] + (cfg.u_bounds[1] - cfg.u_bounds[0]) \
                * float(_sigmoid(latents["zu"]))
            up = cfg.uprime_bounds[0] \
                + (cfg.uprime_bounds[1] - cfg.uprime_bounds[0]) \
                * float(_sigmoid(latents["zup"]))
            params = ModelParams(J=params.J, U=u, Uprime=up,
                                 statistics=params.statistics,
                                 n_max=params.n_max)
        x = predictor.assemble_channels(v, cfg.mu, params, cfg.sector)
        batch = np.stack([np.stack([apply_ops(c, ops) for c in x])
                          for ops in orbits])
        heads, caches = net.forward(batch, mode="eval", want_cache=True)
        # orbit-average in the original frame (density is a scalar map, so
        # mapping back is the plain inverse transform)
        mean_dens = sum(
            apply_ops(heads["density"][j], list(reversed(orbits[j])))
            for j in range(n_orb)) / n_orb
        value, grad = multi_head_loss({"density": mean_dens[None]},
                                      {"density": target[None]}, "mse")
        if not np.isfinite(value):
            raise FloatingPointError("non-finite inversion loss")
        # push the gradient back onto each variant (reflections are their
        # own adjoints on scalar maps)
        g = grad["density"][0] / n_orb
        dens_grads = np.stack([apply_ops(g, orbits[j]) for j in range(n_orb)])
        zero_grads = {h: np.zeros_like(heads[h]) for h in spec.head_names}
        zero_grads["density"] = dens_grads
        _, grad_x = net.backward(caches, zero_grads)
        # grad wrt the unreflected channels: undo each variant's transform
        grad_channels = np.zeros_like(grad_x[0], dtype=np.float64)
        for j in range(n_orb):
            for c in range(grad_x.shape[1]):
                grad_channels[c] += apply_ops(grad_x[j, c],
                                              list(reversed(orbits[j])))
        return value, v, params, grad_channels

    best = None
    trace: list[float] = []
    restart_losses: list[float] = []
    for restart in range(cfg.restarts):
        rng = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, restart]))
        mid = cfg.v_lo + 0.5 * span
        v_init = mid + cfg.init_noise_frac * span * rng.standard_normal(extents)
        latents = {"z": _logit((v_init - cfg.v_lo) / span)}
        if cfg.optimize_params:
            latents["zu"] = np.zeros(())
            latents["zup"] = np.zeros(())
        adam = _AdamArrays({k: v.shape for k, v in latents.items()})
        local_best = np.inf
        for _step in range(max(cfg.steps, 1)):
            value, v, params, grad_channels = evaluate(latents)
            if best is None or value < best[0]:
                best = (value, v.copy(), params, cfg.mu)
            local_best = min(local_best, value)
            trace.append(best[0])
            if cfg.steps == 0:
                break
            sig = _sigmoid(latents["z"])
            grad_v = grad_channels[channel_index].astype(np.float64)
            grads = {"z": grad_v * span * sig * (1.0 - sig)}
            if cfg.optimize_params:
                gu = float(grad_channels[
                    spec.input_channel_names.index("u_onsite")].sum())
                gup = float(grad_channels[
                    spec.input_channel_names.index("u_neighbor")].sum())
                su = _sigmoid(latents["zu"])
                sup = _sigmoid(latents["zup"])
                grads["zu"] = np.asarray(
                    gu * (cfg.u_bounds[1] - cfg.u_bounds[0]) * su * (1 - su))
                grads["zup"] = np.asarray(
                    gup * (cfg.uprime_bounds[1] - cfg.uprime_bounds[0])
                    * sup * (1 - sup))
            latents = adam.step(latents, grads, cfg.lr)
        restart_losses.append(float(local_best))

    loss, v_star, params_star, mu = best
    predicted = predictor.predict(v_star, mu, params_star,
                                  cfg.sector)["density"]
    return InversionResult(potential=v_star, predicted_density=predicted,
                           loss=float(loss), loss_trace=trace,
                           restart_losses=restart_losses,
                           params=params_star, mu=mu)
