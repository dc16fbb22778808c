"""Exact ground states and observable maps via matrix-free sparse Lanczos.

The Hamiltonian acts as

    H = -J * (hops over all directed bonds)
        + interaction terms (diagonal in the occupation basis)
        + sum_x V(x) n(x)

with fermionic signs from the ordered-mode convention. The hop connection
graph of a sector depends only on (statistics, n_max, extents, N), so it is
built once per sector and reused across potentials; the per-sample part of
the operator is purely diagonal.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .basis import (DEFAULT_SECTOR_CAP, SectorBasis, SectorTooLargeError,
                    build_basis, sector_dimension)
from .lattice import FERMION, LatticeGeometry, ModelParams, PotentialField

DEGENERACY_GAP = 1e-8


class NonConvergenceError(Exception):
    """Lanczos failed to reach the requested residual."""


class DegenerateGroundStateError(Exception):
    """Observables were requested for a (near-)degenerate ground state."""


# ---------------------------------------------------------------------------
# hop connection structure


@dataclass
class HopStructure:
    """Sparse connection data of all directed hop moves in one sector.

    Directed move 2*b   applies a^dag(u) a(v) for positive bond b = (u, v),
    directed move 2*b+1 applies a^dag(v) a(u). Entry arrays are grouped by
    move, delimited by offsets.
    """

    bonds: list[tuple[int, int, int]]
    src: np.ndarray
    dst: np.ndarray
    amp: np.ndarray
    offsets: np.ndarray
    bond_pair_sum: np.ndarray      # per state: sum over bonds of n_u * n_v
    onsite_pair_sum: np.ndarray    # per state: sum_x n_x (n_x - 1)

    @property
    def nnz(self) -> int:
        return self.src.shape[0]

    def apply_move(self, move: int, psi: np.ndarray) -> np.ndarray:
        """Vector a^dag(x) a(y) |psi> for one directed move."""
        lo, hi = self.offsets[move], self.offsets[move + 1]
        out = np.zeros_like(psi)
        np.add.at(out, self.dst[lo:hi], self.amp[lo:hi] * psi[self.src[lo:hi]])
        return out

    def row_abs_sum(self) -> np.ndarray:
        """Per-state sum of |hop amplitudes| (for Gershgorin bounds)."""
        return np.bincount(self.dst, weights=np.abs(self.amp),
                           minlength=self.bond_pair_sum.shape[0])


def _build_hop_structure(basis: SectorBasis) -> HopStructure:
    geom = basis.geometry
    occ = basis.occupations
    codes_i64 = basis.codes.astype(np.int64)
    weights = [(basis.n_max + 1) ** s for s in range(basis.n_sites)]
    fermion = basis.statistics == FERMION
    prefix = basis.occupation_prefix() if fermion else None

    bonds = geom.positive_bonds()
    srcs, dsts, amps = [], [], []
    offsets = [0]
    for (u, v, _axis) in bonds:
        for x, y in ((u, v), (v, u)):       # a^dag(x) a(y)
            allowed = (occ[:, y] > 0) & (occ[:, x] < basis.n_max)
            idx = np.nonzero(allowed)[0]
            if idx.size:
                tgt_codes = codes_i64[idx] + (weights[x] - weights[y])
                dst = basis.lookup_codes(tgt_codes.astype(np.uint64))
                if fermion:
                    exponent = prefix[idx, y] + prefix[idx, x] - (y < x)
                    amp = 1.0 - 2.0 * (exponent & 1)
                else:
                    amp = np.sqrt(occ[idx, y].astype(np.float64)
                                  * (occ[idx, x] + 1.0))
                srcs.append(idx.astype(np.int32))
                dsts.append(dst.astype(np.int32))
                amps.append(np.asarray(amp, dtype=np.float64))
            offsets.append(offsets[-1] + idx.size)

    occ_f = occ.astype(np.float64)
    bond_pair = np.zeros(basis.size)
    for (u, v, _axis) in bonds:
        bond_pair += occ_f[:, u] * occ_f[:, v]
    onsite_pair = (occ_f * (occ_f - 1.0)).sum(axis=1)

    def cat(parts, dtype):
        return np.concatenate(parts) if parts else np.empty(0, dtype=dtype)

    return HopStructure(
        bonds=bonds,
        src=cat(srcs, np.int32),
        dst=cat(dsts, np.int32),
        amp=cat(amps, np.float64),
        offsets=np.asarray(offsets, dtype=np.int64),
        bond_pair_sum=bond_pair,
        onsite_pair_sum=onsite_pair,
    )


_HOP_CACHE: OrderedDict[tuple, HopStructure] = OrderedDict()
_HOP_CACHE_NNZ_BUDGET = 20_000_000


def hop_structure(basis: SectorBasis) -> HopStructure:
    """Connection structure for a sector, cached across potentials."""
    key = (basis.statistics, basis.n_max, basis.geometry.extents,
           basis.n_particles)
    hit = _HOP_CACHE.get(key)
    if hit is not None:
        _HOP_CACHE.move_to_end(key)
        return hit
    structure = _build_hop_structure(basis)
    if structure.nnz <= _HOP_CACHE_NNZ_BUDGET:
        _HOP_CACHE[key] = structure
        total = sum(s.nnz for s in _HOP_CACHE.values())
        while total > _HOP_CACHE_NNZ_BUDGET and len(_HOP_CACHE) > 1:
            _, evicted = _HOP_CACHE.popitem(last=False)
            total -= evicted.nnz
    return structure


# ---------------------------------------------------------------------------
# Hamiltonian application


class SectorHamiltonian:
    """H restricted to one fixed-N sector, applied matrix-free."""

    def __init__(self, params: ModelParams, V: PotentialField,
                 basis: SectorBasis, hops: HopStructure | None = None):
        if V.geometry.extents != basis.geometry.extents:
            raise ValueError("potential geometry does not match basis")
        self.params = params
        self.basis = basis
        self.hops = hops if hops is not None else hop_structure(basis)
        occ_f = basis.occupations.astype(np.float64)
        diag = occ_f @ V.flat
        if params.statistics == FERMION:
            diag += params.U * self.hops.bond_pair_sum
        else:
            diag += 0.5 * params.U * self.hops.onsite_pair_sum
            if params.Uprime:
                diag += params.Uprime * self.hops.bond_pair_sum
        self.diagonal = diag

    @property
    def dim(self) -> int:
        return self.basis.size

    def apply(self, psi: np.ndarray) -> np.ndarray:
        if psi.shape != (self.dim,):
            raise ValueError(f"vector shape {psi.shape} != ({self.dim},)")
        out = self.diagonal * psi
        if self.hops.nnz:
            out -= self.params.J * np.bincount(
                self.hops.dst, weights=self.hops.amp * psi[self.hops.src],
                minlength=self.dim)
        return out

    def spectrum_upper_bound(self) -> float:
        """Gershgorin bound on the largest eigenvalue."""
        return float(np.max(self.diagonal
                            + self.params.J * self.hops.row_abs_sum()))


def apply_hamiltonian(params: ModelParams, V: PotentialField,
                      basis: SectorBasis, psi: np.ndarray) -> np.ndarray:
    """H |psi> in the sector basis."""
    return SectorHamiltonian(params, V, basis).apply(
        np.asarray(psi, dtype=np.float64))


# ---------------------------------------------------------------------------
# Lanczos


def _lanczos_cycle(apply_fn, v0, m_max, tol):
    """One Lanczos run with full reorthogonalization (twice-over CGS).

    Returns (ritz_value, ritz_vector, n_steps).
    """
    dim = v0.shape[0]
    m_max = min(m_max, dim)
    block = np.empty((m_max, dim))
    block[0] = v0 / np.linalg.norm(v0)
    alphas, betas = [], []
    w = apply_fn(block[0])
    alphas.append(float(block[0] @ w))
    w -= alphas[0] * block[0]
    m = 1
    while m < m_max:
        for _pass in range(2):
            view = block[:m]
            w -= view.T @ (view @ w)
        beta = float(np.linalg.norm(w))
        if beta < 1e-14:
            break
        block[m] = w / beta
        betas.append(beta)
        w = apply_fn(block[m]) - beta * block[m - 1]
        alphas.append(float(block[m] @ w))
        w -= alphas[-1] * block[m]
        m += 1
        if m % 8 == 0:
            theta, s = eigh_tridiagonal(np.asarray(alphas), np.asarray(betas),
                                        select="i", select_range=(0, 0))
            if abs(np.linalg.norm(w) * s[-1, 0]) <= 0.1 * tol:
                break
    if len(alphas) == 1:
        theta = np.array([alphas[0]])
        s = np.ones((1, 1))
    else:
        theta, s = eigh_tridiagonal(np.asarray(alphas), np.asarray(betas),
                                    select="i", select_range=(0, 0))
    ritz = block[:m].T @ s[:, 0]
    ritz /= np.linalg.norm(ritz)
    return float(theta[0]), ritz, m


def lowest_eigenpair(apply_fn, dim: int, tol: float = 1e-10,
                     max_iter: int = 2000, m_max: int | None = None,
                     seed: int = 7) -> tuple[float, np.ndarray, float, int]:
    """Lowest eigenpair of a Hermitian operator given as apply_fn.

    Restarted Lanczos, fully reorthogonalized inside each cycle. Returns
    (energy, vector, residual_norm, iterations); raises NonConvergenceError
    when the residual never reaches tolerance within the iteration budget.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if dim == 1:
        e = float(apply_fn(np.ones(1))[0])
        return e, np.ones(1), 0.0, 1
    if m_max is None:
        # keep the stored Krylov block near or below ~250 MB
        m_max = int(min(max(40, 30_000_000 // max(dim, 1)), 300))
    rng = np.random.default_rng(np.random.SeedSequence([seed, dim]))
    v = rng.standard_normal(dim)
    total = 0
    energy, resid = math.inf, math.inf
    for _cycle in range(max(1, math.ceil(max_iter / m_max))):
        energy, v, steps = _lanczos_cycle(apply_fn, v, m_max, tol)
        total += steps
        resid = float(np.linalg.norm(apply_fn(v) - energy * v))
        scale = max(1.0, abs(energy))
        if resid <= max(tol, 30 * np.finfo(float).eps * scale):
            return energy, v, resid, total
        if total >= max_iter:
            break
    raise NonConvergenceError(
        f"Lanczos residual {resid:.3e} above tol {tol:.3e} "
        f"after {total} iterations (dim {dim})")


# ---------------------------------------------------------------------------
# ground states, observables, energy scans


@dataclass
class GroundState:
    energy: float
    amplitudes: np.ndarray = field(repr=False)
    degeneracy_flag: bool
    residual_norm: float
    n_iterations: int
    second_energy: float | None = None


@dataclass
class EnergyTable:
    """Ground energies over a contiguous particle-number range."""

    n_start: int
    energies: np.ndarray

    def __contains__(self, n) -> bool:
        return self.n_start <= n < self.n_start + len(self.energies)

    def energy(self, n: int) -> float:
        if n not in self:
            hi = self.n_start + len(self.energies) - 1
            raise KeyError(f"N={n} not in table [{self.n_start}, {hi}]")
        return float(self.energies[n - self.n_start])

    def as_dict(self) -> dict[int, float]:
        return {self.n_start + i: float(e) for i, e in enumerate(self.energies)}


@dataclass
class ObservableSet:
    """Spatial observable maps of one ground state.

    density has the lattice extents; the bond-resolved maps carry a leading
    direction axis (one entry per positive lattice axis). current[d][x] is
    the expectation of i J (a^dag(x) a(x+e_d) - h.c.), i.e. the bond current
    in the +d direction based at x; current_corr[d][x] correlates the bond
    currents based at x and at x + e_d.
    """

    geometry: LatticeGeometry
    density: np.ndarray
    nn_density_corr: np.ndarray
    current: np.ndarray
    nn_current_corr: np.ndarray

    def head_map(self, name: str) -> np.ndarray:
        """Named scalar map; direction-resolved heads use axis-0 slices."""
        if name == "density":
            return self.density
        table = {
            "density_corr": self.nn_density_corr,
            "current": self.current,
            "current_corr": self.nn_current_corr,
        }
        for prefix, arr in table.items():
            if name == prefix:
                return arr[0]
            if name.startswith(prefix + "_ax"):
                return arr[int(name[len(prefix) + 3:])]
        raise KeyError(f"unknown observable head {name!r}")


def _second_energy(ham: SectorHamiltonian, energy: float, vec: np.ndarray,
                   tol: float, max_iter: int) -> float:
    """Lowest eigenvalue orthogonal to vec (sees degenerate partners)."""
    lift = ham.spectrum_upper_bound() + 1.0

    def deflated(psi):
        overlap = vec @ psi
        psi_perp = psi - overlap * vec
        out = ham.apply(psi_perp)
        out -= (vec @ out) * vec
        return out + lift * overlap * vec

    e2, _v, _r, _i = lowest_eigenpair(deflated, ham.dim, tol=tol,
                                      max_iter=max_iter, seed=11)
    return e2


def ground_state(params: ModelParams, V: PotentialField, basis: SectorBasis,
                 tol: float = 1e-10, max_iter: int = 2000,
                 check_degeneracy: bool = True) -> GroundState:
    """Lowest eigenpair of the sector Hamiltonian.

    The degeneracy flag comes from a second, deflated Lanczos pass; a single
    Krylov sequence cannot see degenerate partners of its own eigenvector.
    """
    if basis.size == 0:
        raise ValueError("empty sector basis")
    ham = SectorHamiltonian(params, V, basis)
    energy, vec, resid, iters = lowest_eigenpair(ham.apply, ham.dim,
                                                 tol=tol, max_iter=max_iter)
    second = None
    degenerate = False
    if check_degeneracy and ham.dim > 1:
        second = _second_energy(ham, energy, vec, tol=max(1e-9, tol),
                                max_iter=max_iter)
        degenerate = (second - energy) < DEGENERACY_GAP
    return GroundState(energy=energy, amplitudes=vec,
                       degeneracy_flag=degenerate, residual_norm=resid,
                       n_iterations=iters, second_energy=second)


def measure_observables(state: GroundState, basis: SectorBasis,
                        params: ModelParams) -> ObservableSet:
    """Exact expectation maps of density, bond correlators, and currents."""
    if state.degeneracy_flag:
        raise DegenerateGroundStateError(
            "observable maps are ill-defined for a degenerate ground state")
    geom = basis.geometry
    psi = state.amplitudes
    weight = psi * psi
    occ_f = basis.occupations.astype(np.float64)
    density = weight @ occ_f

    hops = hop_structure(basis)
    ndir = geom.dim
    dens_corr = np.zeros((ndir, geom.n_sites))
    current = np.zeros((ndir, geom.n_sites))
    curr_corr = np.zeros((ndir, geom.n_sites))

    # B_b |psi> for every positive bond b = (u, v), with
    # B_b = a^dag(u) a(v) - a^dag(v) a(u)  (real antisymmetric matrix)
    b_psi = np.empty((len(hops.bonds), basis.size))
    bond_at = {}
    for b, (u, v, d) in enumerate(hops.bonds):
        b_psi[b] = hops.apply_move(2 * b, psi) - hops.apply_move(2 * b + 1, psi)
        bond_at[(u, d)] = b

    for b, (u, v, d) in enumerate(hops.bonds):
        dens_corr[d, u] = weight @ (occ_f[:, u] * occ_f[:, v])
        # <I(b)> = i J <psi|B_b|psi>; for real psi the bilinear vanishes by
        # antisymmetry, so this evaluates the honest zero
        current[d, u] = params.J * float(psi @ b_psi[b])
        # <I(b) I(b')> = J^2 (B_b psi) . (B_b' psi) for real psi
        b2 = bond_at[(v, d)]
        curr_corr[d, u] = params.J ** 2 * float(b_psi[b] @ b_psi[b2])

    ext = geom.extents
    return ObservableSet(
        geometry=geom,
        density=density.reshape(ext),
        nn_density_corr=dens_corr.reshape((ndir,) + ext),
        current=current.reshape((ndir,) + ext),
        nn_current_corr=curr_corr.reshape((ndir,) + ext),
    )


def energy_scan(params: ModelParams, V: PotentialField, geom: LatticeGeometry,
                n_range, tol: float = 1e-10,
                sector_cap: int = DEFAULT_SECTOR_CAP) -> EnergyTable:
    """Converged ground energy for every N in a contiguous range."""
    ns = list(n_range)
    if not ns or ns != list(range(ns[0], ns[-1] + 1)):
        raise ValueError("n_range must be a contiguous ascending range")
    energies = np.empty(len(ns))
    for i, n in enumerate(ns):
        try:
            basis = build_basis(geom, n, params.statistics, params.n_max,
                                sector_cap=sector_cap)
            ham = SectorHamiltonian(params, V, basis)
            e, _v, _r, _i = lowest_eigenpair(ham.apply, ham.dim, tol=tol)
        except (SectorTooLargeError, NonConvergenceError) as exc:
            raise type(exc)(f"energy scan at N={n}: {exc}") from exc
        energies[i] = e
    return EnergyTable(n_start=ns[0], energies=energies)


def sample_chemical_potential(table: EnergyTable, n: int,
                              rng: np.random.Generator) -> tuple[float, bool]:
    """Uniform mu on [E(N)-E(N-1), E(N+1)-E(N)].

    Returns (mu, flagged); flagged marks an empty interval (non-convex
    energy table), where the midpoint is returned instead of a draw.
    """
    lo = table.energy(n) - table.energy(n - 1)
    hi = table.energy(n + 1) - table.energy(n)
    if hi < lo:
        return 0.5 * (lo + hi), True
    if hi == lo:
        return lo, False
    return float(rng.uniform(lo, hi)), False


@dataclass
class GrandCanonicalResult:
    n_star: int
    state: GroundState
    table: EnergyTable
    tie_flag: bool
    mu: float

    @property
    def grand_energy(self) -> float:
        return self.state.energy - self.mu * self.n_star


def grand_canonical_ground(params: ModelParams, V: PotentialField,
                           geom: LatticeGeometry, mu: float,
                           tol: float = 1e-10,
                           sector_cap: int = DEFAULT_SECTOR_CAP,
                           check_degeneracy: bool = True) -> GrandCanonicalResult:
    """Sector minimizing E(N) - mu N, scanned from N = 0 upward.

    The scan stops once the grand potential has risen on two consecutive
    sectors past the running minimum, or after a single rise larger than
    4 max(J, 1) (beyond any kinetic reshuffling). Ties resolve to the
    smaller N and set tie_flag.
    """
    if not np.isfinite(mu):
        raise ValueError("mu must be finite")
    n_cap = params.n_max * geom.n_sites
    energies: list[float] = []
    best = None    # (n, omega, energy, vec, resid, iters)
    rises = 0
    for n in range(n_cap + 1):
        dim = sector_dimension(geom.n_sites, n, params.n_max)
        if dim > sector_cap:
            raise SectorTooLargeError(
                f"grand-canonical scan needs sector N={n} with {dim} "
                f"configurations (cap {sector_cap})")
        basis = build_basis(geom, n, params.statistics, params.n_max,
                            sector_cap=sector_cap)
        ham = SectorHamiltonian(params, V, basis)
        e, vec, resid, iters = lowest_eigenpair(ham.apply, ham.dim, tol=tol)
        energies.append(e)
        omega = e - mu * n
        if best is None or omega < best[1] - 1e-10:
            best = (n, omega, e, vec, resid, iters)
            rises = 0
        else:
            rises += 1
            if rises >= 2 or (omega - best[1]) > 4.0 * max(params.J, 1.0):
                break

    n_star, best_omega, e0, vec, resid, iters = best
    omegas = np.asarray(energies) - mu * np.arange(len(energies))
    others = np.delete(omegas, n_star)
    tie = bool(others.size and np.min(np.abs(others - best_omega)) <= 1e-10)

    second = None
    degenerate = False
    if check_degeneracy:
        basis = build_basis(geom, n_star, params.statistics, params.n_max,
                            sector_cap=sector_cap)
        ham = SectorHamiltonian(params, V, basis)
        if ham.dim > 1:
            second = _second_energy(ham, e0, vec, tol=max(1e-9, tol),
                                    max_iter=2000)
            degenerate = (second - e0) < DEGENERACY_GAP
    state = GroundState(energy=e0, amplitudes=vec, degeneracy_flag=degenerate,
                        residual_norm=resid, n_iterations=iters,
                        second_energy=second)
    return GrandCanonicalResult(n_star=n_star, state=state,
                                table=EnergyTable(0, np.asarray(energies)),
                                tie_flag=tie, mu=mu)
