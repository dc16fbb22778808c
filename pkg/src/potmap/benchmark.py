"""Wall-clock comparison of the exact oracle against network inference.

Pinned protocol: the oracle task at extent L is one training-sample
equivalent on the 1D fermion model at half filling (energy scan over
{N-1, N, N+1}, ground state, all observable maps) for a fresh random
potential per repeat; the network task is one fused eval-mode forward at
batch size one. Both sides get one untimed warm-up; medians are reported.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .basis import build_basis
from .ed import energy_scan, ground_state, measure_observables
from .lattice import fermion_params, make_geometry
from .potentials import white_noise_potential
from .predict import Predictor


@dataclass
class BenchmarkRow:
    extent: int
    oracle_seconds: float | None
    nn_seconds: float | None

    @property
    def ratio(self) -> float | None:
        if self.oracle_seconds is None or self.nn_seconds is None:
            return None
        return self.oracle_seconds / self.nn_seconds


def _oracle_once(extent: int, seed: int, U: float, v_max: float,
                 tol: float) -> float:
    from . import ed
    ed._HOP_CACHE.clear()   # charge each instance its full cold solve cost
    rng = np.random.default_rng(np.random.SeedSequence([seed, extent]))
    geom = make_geometry(1, [extent])
    V = white_noise_potential(rng, extent, v_max)
    params = fermion_params(U=U)
    n = extent // 2
    t0 = time.perf_counter()
    energy_scan(params, V, geom, range(n - 1, n + 2), tol=tol)
    basis = build_basis(geom, n, "fermion", 1)
    state = ground_state(params, V, basis, tol=tol)
    measure_observables(state, basis, params)
    return time.perf_counter() - t0


def _nn_once(predictor: Predictor, V: np.ndarray) -> float:
    t0 = time.perf_counter()
    predictor.predict(V, 0.0)
    return time.perf_counter() - t0


def benchmark(model_path: str, oracle_extents, nn_extents, repeats: int = 5,
              seed: int = 0, U: float = 1.5, v_max: float = 12.0,
              tol: float = 1e-10) -> dict:
    """Median oracle and inference timings plus their ratios.

    A single-repeat run is reported with low_confidence set. Oracle
    failures (oversized sectors) are recorded as absent data points.
    """
    predictor = Predictor.load(model_path)
    timings: dict[int, dict] = {}
    for extent in sorted(set(oracle_extents) | set(nn_extents)):
        timings[extent] = {"oracle": None, "nn": None}

    for extent in sorted(set(oracle_extents)):
        try:
            _oracle_once(extent, seed, U, v_max, tol)  # warm-up
            times = [_oracle_once(extent, seed + 1 + r, U, v_max, tol)
                     for r in range(repeats)]
            timings[extent]["oracle"] = float(np.median(times))
        except Exception as exc:      # sector caps, non-convergence
            timings[extent]["oracle_error"] = str(exc)

    for extent in sorted(set(nn_extents)):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 5, extent]))
        V = rng.uniform(-v_max, v_max, extent)
        _nn_once(predictor, V)        # warm-up builds index caches
        times = [_nn_once(predictor, V) for _ in range(repeats)]
        timings[extent]["nn"] = float(np.median(times))

    rows = [BenchmarkRow(extent=e, oracle_seconds=t.get("oracle"),
                         nn_seconds=t.get("nn"))
            for e, t in sorted(timings.items())]
    ratios = [(r.extent, r.ratio) for r in rows if r.ratio is not None]
    headline = None
    oracle_rows = [r for r in rows if r.oracle_seconds is not None]
    nn_rows = [r for r in rows if r.nn_seconds is not None]
    if oracle_rows and nn_rows:
        top_oracle = oracle_rows[-1]
        top_nn = nn_rows[-1]
        headline = {
            "oracle_extent": top_oracle.extent,
            "oracle_seconds": top_oracle.oracle_seconds,
            "nn_extent": top_nn.extent,
            "nn_seconds": top_nn.nn_seconds,
            "speedup": top_oracle.oracle_seconds / top_nn.nn_seconds,
        }
    return {
        "protocol": ("oracle: 1D fermion sample pipeline at half filling "
                     "(3-sector energy scan + ground state incl. degeneracy "
                     "check + observables), fresh random potential and cold "
                     "solver state per repeat; nn: one production predict() "
                     "call (fused path, reflection-symmetrized); medians "
                     "after one warm-up"),
        "repeats": repeats,
        "low_confidence": repeats < 2,
        "rows": [{"extent": r.extent, "oracle_seconds": r.oracle_seconds,
                  "nn_seconds": r.nn_seconds, "ratio": r.ratio}
                 for r in rows],
        "ratios": ratios,
        "headline": headline,
    }
