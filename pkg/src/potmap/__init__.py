"""Lattice-model surrogate pipeline: exact solvers, datasets, networks."""

__version__ = "0.1.0"
