"""Self-consistent Hartree-Fock for 1D spinless fermions.

The nearest-neighbor interaction U n(x) n(x+1) is decoupled into Hartree
terms U <n(x+-1)> n(x) and the Fock exchange -U <a^dag(x+1) a(x)> a^dag(x)
a(x+1) + h.c.; the reported energy is the exact expectation value of the
full Hamiltonian in the converged Slater determinant (so it is variational
whether or not self-consistency was reached).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ed import ObservableSet
from .lattice import FERMION, LatticeGeometry, ModelParams, PotentialField


@dataclass
class MeanFields:
    densities: np.ndarray
    bond_coherences: np.ndarray   # tau[b] = <a^dag(u) a(v)> per positive bond


@dataclass
class HFResult:
    fields: MeanFields
    observables: ObservableSet
    energy: float
    converged: bool
    iterations: int
    residual: float
    degenerate_fermi: bool
    orbital_energies: np.ndarray = field(repr=False)
    density_matrix: np.ndarray = field(repr=False)


def _slater_energy(h0, rho, U, bonds):
    e = float(np.sum(h0 * rho))
    for (u, v, _d) in bonds:
        e += U * (rho[u, u] * rho[v, v] - rho[u, v] * rho[v, u])
    return e


def _wick_observables(geom, rho, J):
    n = np.diag(rho)
    ndir = geom.dim
    sites = geom.n_sites
    dens_corr = np.zeros((ndir, sites))
    current = np.zeros((ndir, sites))
    curr_corr = np.zeros((ndir, sites))

    def pair(a, b, c, d):
        # <a^dag_a a_b a^dag_c a_d> by Wick's theorem
        return rho[a, b] * rho[c, d] + rho[a, d] * ((b == c) - rho[c, b])

    for u in range(sites):
        for dax in range(ndir):
            v = geom.shift_site(u, dax, +1)
            dens_corr[dax, u] = pair(u, u, v, v)
            current[dax, u] = 0.0  # i J (rho_uv - rho_vu) = 0 for real rho
            p, q = v, geom.shift_site(v, dax, +1)
            curr_corr[dax, u] = -J ** 2 * (
                pair(u, v, p, q) - pair(u, v, q, p)
                - pair(v, u, p, q) + pair(v, u, q, p))
    ext = geom.extents
    return ObservableSet(
        geometry=geom,
        density=n.copy().reshape(ext),
        nn_density_corr=dens_corr.reshape((ndir,) + ext),
        current=current.reshape((ndir,) + ext),
        nn_current_corr=curr_corr.reshape((ndir,) + ext),
    )


def hf_solve(params: ModelParams, V: PotentialField, geom: LatticeGeometry,
             n_particles: int, mixing: float = 0.3, tol: float = 1e-8,
             max_iter: int = 500) -> HFResult:
    """Iterated mean-field ground state of the 1D fermion chain.

    Starts from the U=0 solution and mixes the density and bond-coherence
    fields linearly until the largest field change drops below tol. On
    non-convergence the best-so-far fields are returned with converged
    False rather than raising.
    """
    if params.statistics != FERMION or geom.dim != 1:
        raise ValueError("Hartree-Fock supports the 1D fermion model only")
    L = geom.n_sites
    if not 0 <= n_particles <= L:
        raise ValueError(f"N={n_particles} outside [0, {L}]")
    if not 0 < mixing <= 1:
        raise ValueError("mixing must be in (0, 1]")

    bonds = geom.positive_bonds()
    h0 = np.diag(V.flat.astype(float))
    for (u, v, _d) in bonds:
        h0[u, v] -= params.J
        h0[v, u] -= params.J

    def fill(h):
        """Density matrix from the N lowest orbitals.

        An exactly degenerate Fermi shell is occupied fractionally (equal
        weight across the shell projector): that choice is deterministic
        and basis independent, unlike picking single LAPACK eigenvectors
        inside the shell, and it keeps symmetric instances symmetric.
        """
        eps, orbitals = np.linalg.eigh(h)
        degenerate = (n_particles not in (0, L)
                      and eps[n_particles] - eps[n_particles - 1] < 1e-12)
        if not degenerate:
            occ = orbitals[:, :n_particles]
            return occ @ occ.T, eps, False
        shell = np.abs(eps - eps[n_particles - 1]) < 1e-12
        below = (~shell) & (np.arange(L) < n_particles)
        n_below = int(below.sum())
        frac = (n_particles - n_below) / int(shell.sum())
        rho = (orbitals[:, below] @ orbitals[:, below].T
               + frac * orbitals[:, shell] @ orbitals[:, shell].T)
        return rho, eps, True

    rho, eps, degenerate = fill(h0)
    dens = np.diag(rho).copy()
    taus = np.array([rho[u, v] for (u, v, _d) in bonds])

    converged = False
    residual = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        h = h0.copy()
        for b, (u, v, _d) in enumerate(bonds):
            h[u, u] += params.U * dens[v]
            h[v, v] += params.U * dens[u]
            h[u, v] -= params.U * taus[b]
            h[v, u] -= params.U * taus[b]
        rho, eps, degenerate = fill(h)
        new_dens = np.diag(rho).copy()
        new_taus = np.array([rho[u, v] for (u, v, _d) in bonds])
        residual = max(np.max(np.abs(new_dens - dens)),
                       np.max(np.abs(new_taus - taus)) if len(taus) else 0.0)
        dens = (1 - mixing) * dens + mixing * new_dens
        taus = (1 - mixing) * taus + mixing * new_taus
        if residual < tol:
            converged = True
            dens, taus = new_dens, new_taus
            break

    energy = _slater_energy(h0, rho, params.U, bonds)
    observables = _wick_observables(geom, rho, params.J)
    return HFResult(
        fields=MeanFields(densities=dens, bond_coherences=taus),
        observables=observables,
        energy=energy,
        converged=converged,
        iterations=it,
        residual=residual,
        degenerate_fermi=degenerate,
        orbital_energies=eps,
        density_matrix=rho,
    )
