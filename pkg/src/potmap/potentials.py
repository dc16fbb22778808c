"""Random and named potential landscapes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import LatticeGeometry, PotentialField, make_geometry


def white_noise_potential(rng: np.random.Generator, n_sites: int,
                          v_max: float) -> PotentialField:
    """i.i.d. uniform values on [-v_max, v_max] over a 1D chain."""
    if v_max <= 0:
        raise ValueError("v_max must be positive")
    geom = make_geometry(1, [n_sites])
    return PotentialField(geom, rng.uniform(-v_max, v_max, n_sites))


@dataclass(frozen=True)
class ColoredNoiseConfig:
    """Gaussian spectral envelope exp(-|k|^2 / (2 k_c^2)) and target
    amplitude: after rescaling, max V - min V = 2 A and mean V = 0."""

    k_c: float = 2 * np.pi / 4
    amplitude: float = 1.0

    def __post_init__(self):
        if self.k_c <= 0:
            raise ValueError("k_c must be positive")
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")


def colored_noise_potential(rng: np.random.Generator, extents,
                            cfg: ColoredNoiseConfig) -> PotentialField:
    """Smooth random field from random Fourier amplitudes.

    Complex Gaussian amplitudes are damped by the spectral envelope; the
    real part of the inverse FFT (equivalent to conjugate symmetrizing)
    gives the field, which is shifted to zero mean and scaled to the exact
    target peak-to-peak range.
    """
    extents = tuple(int(e) for e in extents)
    geom = make_geometry(len(extents), extents)
    if cfg.amplitude == 0.0:
        return PotentialField(geom, np.zeros(extents))
    amps = (rng.standard_normal(extents) + 1j * rng.standard_normal(extents))
    k_sq = np.zeros(extents)
    for axis, ext in enumerate(extents):
        k_axis = 2 * np.pi * np.fft.fftfreq(ext)
        shape = [1] * len(extents)
        shape[axis] = ext
        k_sq = k_sq + (k_axis ** 2).reshape(shape)
    amps *= np.exp(-k_sq / (2 * cfg.k_c ** 2))
    field = np.fft.ifftn(amps).real
    field = field - field.mean()
    spread = field.max() - field.min()
    if spread < 1e-300:
        return PotentialField(geom, np.zeros(extents))
    field *= 2 * cfg.amplitude / spread
    return PotentialField(geom, field)


def step_well_potential(geom: LatticeGeometry, depth: float,
                        width: int | None = None,
                        offset: int | None = None) -> PotentialField:
    """Square well of the given depth (V = -depth inside, 0 outside).

    In 2D the well is a centered rectangle spanning `width` sites per axis.
    """
    vals = np.zeros(geom.extents)
    if geom.dim == 1:
        (L,) = geom.extents
        w = width if width is not None else L // 2
        x0 = offset if offset is not None else (L - w) // 2
        for i in range(w):
            vals[(x0 + i) % L] = -depth
    else:
        slices = []
        for ext in geom.extents:
            w = width if width is not None else ext // 2
            x0 = (ext - w) // 2
            slices.append(slice(x0, x0 + w))
        vals[tuple(slices)] = -depth
    return PotentialField(geom, vals)


def harmonic_potential(geom: LatticeGeometry, curvature: float) -> PotentialField:
    """Trap 0.5 * curvature * r^2 measured from the lattice center."""
    grids = np.meshgrid(*(np.arange(e, dtype=float) for e in geom.extents),
                        indexing="ij")
    r_sq = np.zeros(geom.extents)
    for g, ext in zip(grids, geom.extents):
        r_sq += (g - (ext - 1) / 2) ** 2
    return PotentialField(geom, 0.5 * curvature * r_sq)
