"""Lattice geometry, neighbor tables, and shared model-parameter types.

Sites are indexed row-major (axis 0 slowest). All boundaries are periodic.
On an axis of extent 2 the two hop directions reach the same site; the
neighbor list keeps the duplicate on purpose, so that bond sums over
(site, positive direction) count every Hamiltonian bond exactly once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FERMION = "fermion"
BOSON = "boson"


@dataclass(frozen=True)
class LatticeGeometry:
    """Periodic 1D chain or 2D rectangular lattice."""

    dim: int
    extents: tuple[int, ...]

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if len(self.extents) != self.dim:
            raise ValueError("extents length must equal dim")
        if any(ext < 2 for ext in self.extents):
            raise ValueError(f"every extent must be >= 2, got {self.extents}")
        object.__setattr__(self, "extents", tuple(int(e) for e in self.extents))

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.extents))

    def site_index(self, coords) -> int:
        """Row-major site index of a coordinate tuple (axis 0 slowest)."""
        coords = tuple(int(c) for c in coords)
        if len(coords) != self.dim:
            raise ValueError("coordinate rank mismatch")
        idx = 0
        for c, ext in zip(coords, self.extents):
            if not 0 <= c < ext:
                raise ValueError(f"coordinate {coords} outside extents {self.extents}")
            idx = idx * ext + c
        return idx

    def site_coords(self, site: int) -> tuple[int, ...]:
        if not 0 <= site < self.n_sites:
            raise ValueError(f"site {site} out of range")
        coords = []
        for ext in reversed(self.extents):
            coords.append(site % ext)
            site //= ext
        return tuple(reversed(coords))

    def shift_site(self, site: int, axis: int, step: int) -> int:
        """Site reached by moving `step` lattice units along `axis`, wrapping."""
        coords = list(self.site_coords(site))
        coords[axis] = (coords[axis] + step) % self.extents[axis]
        return self.site_index(coords)

    def positive_bonds(self) -> list[tuple[int, int, int]]:
        """All (site, neighbor, axis) bonds in positive axis directions.

        Each bond appears once per (site, axis); on extent-2 axes this
        intentionally lists the same undirected pair twice, matching the
        lattice sums of the Hamiltonians.
        """
        bonds = []
        for s in range(self.n_sites):
            for d in range(self.dim):
                bonds.append((s, self.shift_site(s, d, +1), d))
        return bonds


def make_geometry(dim: int, extents) -> LatticeGeometry:
    return LatticeGeometry(dim, tuple(extents))


def neighbors(geom: LatticeGeometry, site: int) -> list[int]:
    """Sorted nearest neighbors of `site`, duplicated on extent-2 axes."""
    if not 0 <= site < geom.n_sites:
        raise ValueError(f"site {site} out of range for {geom.extents}")
    out = []
    for d in range(geom.dim):
        out.append(geom.shift_site(site, d, +1))
        out.append(geom.shift_site(site, d, -1))
    return sorted(out)


def checkerboard_parity(geom: LatticeGeometry, site: int) -> int:
    """(-1)**(x0 + x1) for 2D even-extent lattices."""
    if geom.dim != 2:
        raise ValueError("checkerboard parity requires a 2D geometry")
    if any(ext % 2 for ext in geom.extents):
        raise ValueError(
            f"checkerboard parity needs even extents, got {geom.extents}"
        )
    x0, x1 = geom.site_coords(site)
    return 1 if (x0 + x1) % 2 == 0 else -1


def checkerboard_pattern(geom: LatticeGeometry) -> np.ndarray:
    """Array of checkerboard parities over all sites, extents-shaped."""
    vals = np.array(
        [checkerboard_parity(geom, s) for s in range(geom.n_sites)], dtype=np.float64
    )
    return vals.reshape(geom.extents)


@dataclass(frozen=True)
class ModelParams:
    """Coupling constants of the lattice model.

    J is the hopping amplitude, U the interaction strength (onsite for
    bosons, nearest-neighbor for 1D fermions), Uprime the nearest-neighbor
    interaction of the 2D boson model.
    """

    J: float
    U: float
    statistics: str
    n_max: int
    Uprime: float | None = None

    def __post_init__(self):
        if self.J <= 0:
            raise ValueError("J must be positive")
        if self.statistics not in (FERMION, BOSON):
            raise ValueError(f"unknown statistics {self.statistics!r}")
        if self.statistics == FERMION and self.n_max != 1:
            raise ValueError("fermions require n_max = 1")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")


def fermion_params(J: float = 1.0, U: float = 0.0) -> ModelParams:
    return ModelParams(J=J, U=U, statistics=FERMION, n_max=1)


def boson_params(J: float = 1.0, U: float = 0.0, Uprime: float = 0.0,
                 n_max: int = 3) -> ModelParams:
    return ModelParams(J=J, U=U, Uprime=Uprime, statistics=BOSON, n_max=n_max)


@dataclass(frozen=True)
class PotentialField:
    """Real onsite potential over a lattice, stored extents-shaped."""

    geometry: LatticeGeometry
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != self.geometry.extents:
            if vals.size == self.geometry.n_sites:
                vals = vals.reshape(self.geometry.extents)
            else:
                raise ValueError(
                    f"potential shape {vals.shape} does not match extents "
                    f"{self.geometry.extents}"
                )
        if not np.all(np.isfinite(vals)):
            raise ValueError("potential values must be finite")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


def flat_potential(geom: LatticeGeometry, value: float = 0.0) -> PotentialField:
    return PotentialField(geom, np.full(geom.extents, float(value)))
