"""Fixed particle-number occupation bases for fermion and boson sectors.

Configurations are stored as an occupation table plus a sorted array of
mixed-radix codes (radix n_max + 1), so that a configuration can be ranked
with a binary search. Sector sizes are counted without enumeration, which
lets callers reject oversized sectors cheaply.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations

import numpy as np

from .lattice import FERMION, LatticeGeometry

DEFAULT_SECTOR_CAP = 50_000_000


class SectorTooLargeError(Exception):
    """Raised when a requested sector exceeds the configured size cap."""


@lru_cache(maxsize=4096)
def sector_dimension(n_sites: int, n_particles: int, n_max: int) -> int:
    """Number of occupation vectors with given total and per-site cap."""
    if n_particles < 0 or n_particles > n_sites * n_max:
        return 0
    counts = np.zeros(n_particles + 1, dtype=object)
    counts[0] = 1
    for _ in range(n_sites):
        new = np.zeros(n_particles + 1, dtype=object)
        for total in range(n_particles + 1):
            c = counts[total]
            if c:
                for occ in range(min(n_max, n_particles - total) + 1):
                    new[total + occ] += c
        counts = new
    return int(counts[n_particles])


def _enumerate_bounded(n_sites: int, n_particles: int, n_max: int) -> np.ndarray:
    """All bounded compositions of n_particles over n_sites, lexicographic."""
    out = []
    occ = [0] * n_sites

    def fill(pos: int, remaining: int):
        if pos == n_sites - 1:
            if remaining <= n_max:
                occ[pos] = remaining
                out.append(tuple(occ))
            return
        hi = min(n_max, remaining)
        # remaining particles must fit on the sites still to the right
        lo = max(0, remaining - (n_sites - 1 - pos) * n_max)
        for n in range(lo, hi + 1):
            occ[pos] = n
            fill(pos + 1, remaining - n)
        occ[pos] = 0

    fill(0, n_particles)
    return np.array(out, dtype=np.uint8).reshape(len(out), n_sites)


@dataclass
class SectorBasis:
    """Complete occupation basis of one fixed-N sector.

    occupations has shape (size, n_sites); codes is sorted ascending and
    aligned with occupations, so np.searchsorted ranks a configuration.
    """

    geometry: LatticeGeometry
    n_particles: int
    statistics: str
    n_max: int
    occupations: np.ndarray = field(repr=False)
    codes: np.ndarray = field(repr=False)

    _prefix: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.occupations.shape[0]

    @property
    def n_sites(self) -> int:
        return self.geometry.n_sites

    @property
    def radix(self) -> int:
        return self.n_max + 1

    def code_of(self, occupation) -> int:
        occ = np.asarray(occupation, dtype=np.uint64)
        weights = self.radix ** np.arange(self.n_sites, dtype=np.uint64)
        return int((occ * weights).sum())

    def index_of(self, occupation) -> int:
        """Rank of an occupation vector; raises KeyError if absent."""
        code = self.code_of(occupation)
        pos = int(np.searchsorted(self.codes, code))
        if pos >= self.size or self.codes[pos] != code:
            raise KeyError(f"configuration {tuple(occupation)} not in sector")
        return pos

    def lookup_codes(self, codes: np.ndarray) -> np.ndarray:
        """Vectorized rank lookup; caller guarantees codes are members."""
        return np.searchsorted(self.codes, codes)

    def occupation_prefix(self) -> np.ndarray:
        """prefix[s, x] = number of particles strictly left of site x.

        Used for fermionic hop signs; cached after first call.
        """
        if self._prefix is None:
            cums = np.cumsum(self.occupations, axis=1, dtype=np.int64)
            prefix = np.empty_like(cums)
            prefix[:, 0] = 0
            prefix[:, 1:] = cums[:, :-1]
            self._prefix = prefix
        return self._prefix


def build_basis(geom: LatticeGeometry, n_particles: int, statistics: str,
                n_max: int, sector_cap: int = DEFAULT_SECTOR_CAP) -> SectorBasis:
    """Enumerate the fixed-N sector, sorted by mixed-radix code."""
    if statistics == FERMION and n_max != 1:
        raise ValueError("fermions require n_max = 1")
    n_sites = geom.n_sites
    if not 0 <= n_particles <= n_max * n_sites:
        raise ValueError(
            f"N={n_particles} outside [0, {n_max * n_sites}] for {n_sites} sites"
        )
    dim = sector_dimension(n_sites, n_particles, n_max)
    if dim > sector_cap:
        raise SectorTooLargeError(
            f"sector N={n_particles} on {n_sites} sites has {dim} configurations "
            f"(cap {sector_cap})"
        )

    if statistics == FERMION:
        occ = np.zeros((dim, n_sites), dtype=np.uint8)
        for row, sites in enumerate(combinations(range(n_sites), n_particles)):
            occ[row, list(sites)] = 1
    else:
        occ = _enumerate_bounded(n_sites, n_particles, n_max)

    weights = (n_max + 1) ** np.arange(n_sites, dtype=np.uint64)
    codes = (occ.astype(np.uint64) * weights).sum(axis=1)
    order = np.argsort(codes, kind="stable")
    return SectorBasis(
        geometry=geom,
        n_particles=n_particles,
        statistics=statistics,
        n_max=n_max,
        occupations=np.ascontiguousarray(occ[order]),
        codes=np.ascontiguousarray(codes[order]),
    )
