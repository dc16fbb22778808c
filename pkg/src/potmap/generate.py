"""Dataset generation: random instances solved exactly, written in order.

Every sample is a pure function of (seed, index, attempt): workers draw an
independent generator per attempt, so parallel and serial runs produce
byte-identical files. Degenerate ground states and oversized sectors retry
with a fresh attempt stream; a sample that exhausts its attempts is logged
and skipped, never aborting the run.
"""

from __future__ import annotations

import json
import multiprocessing
import os
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from .basis import SectorTooLargeError, build_basis
from .dataset import DatasetWriter
from .ed import (NonConvergenceError, energy_scan, grand_canonical_ground,
                 ground_state, measure_observables, sample_chemical_potential)
from .lattice import fermion_params, make_geometry
from .potentials import (ColoredNoiseConfig, colored_noise_potential,
                         white_noise_potential)
from .sampling import (CHANNELS_1D, CHANNELS_2D, HEADS_1D, HEADS_2D,
                       ParamRanges, TrainingSample, checkerboard_channel,
                       sample_model_params)


@dataclass
class Fermion1DGenConfig:
    seed: int
    count: int
    extents: list[int] = field(default_factory=lambda: list(range(5, 13)))
    extent_weights: list[float] | None = None   # None: uniform draw
    J: float = 1.0
    U: float = 1.5
    v_max: float = 12.0
    tol: float = 1e-10
    max_attempts: int = 60

    kind: str = "fermion1d"

    def __post_init__(self):
        if (self.extent_weights is not None
                and len(self.extent_weights) != len(self.extents)):
            raise ValueError("extent_weights length must match extents")


@dataclass
class GeometryPolicyEntry:
    extents: tuple[int, int]
    n_max: int
    weight: float
    mu_over_u: tuple[float, float] = (-0.5, 3.0)


@dataclass
class Boson2DGenConfig:
    seed: int
    count: int
    geometry_policy: list[GeometryPolicyEntry] = field(default_factory=lambda: [
        GeometryPolicyEntry(extents=(2, 4), n_max=3, weight=0.85),
        GeometryPolicyEntry(extents=(2, 6), n_max=2, weight=0.15,
                            mu_over_u=(-0.5, 0.75)),
    ])
    four_j_over_u: tuple[float, float] = (0.05, 1.0)
    four_up_over_u: tuple[float, float] = (0.75, 1.75)
    k_c: float = float(2 * np.pi / 4)
    sector_cap: int = 300_000
    tol: float = 1e-10
    max_attempts: int = 60

    kind: str = "boson2d"


def config_from_dict(data: dict):
    data = dict(data)
    kind = data.pop("kind")
    if kind == "fermion1d":
        return Fermion1DGenConfig(**data)
    if kind == "boson2d":
        if "geometry_policy" in data:
            data["geometry_policy"] = [
                GeometryPolicyEntry(extents=tuple(e["extents"]),
                                    n_max=e["n_max"], weight=e["weight"],
                                    mu_over_u=tuple(e.get("mu_over_u",
                                                          (-0.5, 3.0))))
                for e in data["geometry_policy"]]
        for key in ("four_j_over_u", "four_up_over_u"):
            if key in data:
                data[key] = tuple(data[key])
        return Boson2DGenConfig(**data)
    raise ValueError(f"unknown generation task kind {kind!r}")


def _f32(arr) -> np.ndarray:
    return np.ascontiguousarray(arr, dtype=np.float32)


def make_sample_1d(cfg: Fermion1DGenConfig, index: int):
    """Sample index -> TrainingSample or (None, reason)."""
    params = fermion_params(J=cfg.J, U=cfg.U)
    weights = None
    if cfg.extent_weights is not None:
        weights = np.asarray(cfg.extent_weights, dtype=float)
        weights = weights / weights.sum()
    reasons = []
    for attempt in range(cfg.max_attempts):
        rng = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, index, attempt]))
        L = int(rng.choice(cfg.extents, p=weights))
        geom = make_geometry(1, [L])
        V = white_noise_potential(rng, L, cfg.v_max)
        n = int(rng.integers(1, L))
        try:
            table = energy_scan(params, V, geom, range(n - 1, n + 2),
                                tol=cfg.tol)
            mu, interval_flagged = sample_chemical_potential(table, n, rng)
            basis = build_basis(geom, n, "fermion", 1)
            state = ground_state(params, V, basis, tol=cfg.tol)
            if state.degeneracy_flag:
                reasons.append("degenerate")
                continue
            obs = measure_observables(state, basis, params)
        except NonConvergenceError:
            reasons.append("nonconvergence")
            continue
        v32 = _f32(V.values)
        sample = TrainingSample(
            extents=(L,),
            channels={"v_minus_mu": v32 - np.float32(mu)},
            targets={
                "density": _f32(obs.density),
                "density_corr": _f32(obs.nn_density_corr[0]),
                "current": _f32(obs.current[0]),
                "current_corr": _f32(obs.nn_current_corr[0]),
            },
            extras={"potential": v32},
            metadata={
                "index": index, "attempts": attempt, "statistics": "fermion",
                "j": cfg.J, "u": cfg.U, "n": n, "mu": float(mu),
                "energy": state.energy,
                "mu_interval_flagged": interval_flagged,
                "retry_reasons": reasons,
            })
        sample.validate()
        return sample, None
    return None, f"exhausted {cfg.max_attempts} attempts: {reasons[-3:]}"


def make_sample_2d(cfg: Boson2DGenConfig, index: int):
    weights = np.array([e.weight for e in cfg.geometry_policy], dtype=float)
    weights /= weights.sum()
    reasons = []
    for attempt in range(cfg.max_attempts):
        rng = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, index, attempt]))
        entry = cfg.geometry_policy[int(rng.choice(len(weights), p=weights))]
        geom = make_geometry(2, entry.extents)
        ranges = ParamRanges(four_j_over_u=cfg.four_j_over_u,
                             four_up_over_u=cfg.four_up_over_u,
                             mu_over_u=entry.mu_over_u)
        params, mu = sample_model_params(rng, ranges, n_max=entry.n_max)
        amplitude = float(rng.uniform(0.0, abs(mu) / 2.0))
        V = colored_noise_potential(
            rng, entry.extents,
            ColoredNoiseConfig(k_c=cfg.k_c, amplitude=amplitude))
        try:
            result = grand_canonical_ground(params, V, geom, mu,
                                            tol=cfg.tol,
                                            sector_cap=cfg.sector_cap)
            if result.state.degeneracy_flag:
                reasons.append("degenerate")
                continue
            basis = build_basis(geom, result.n_star, "boson", entry.n_max,
                                sector_cap=cfg.sector_cap)
            obs = measure_observables(result.state, basis, params)
        except SectorTooLargeError:
            reasons.append("sector_cap")
            continue
        except NonConvergenceError:
            reasons.append("nonconvergence")
            continue
        v32 = _f32(V.values)
        sector = checkerboard_channel(obs.density, geom)
        sample = TrainingSample(
            extents=entry.extents,
            channels={
                "v_minus_mu": v32 - np.float32(mu),
                "u_onsite": np.full(entry.extents, params.U, dtype=np.float32),
                "u_neighbor": np.full(entry.extents, params.Uprime,
                                      dtype=np.float32),
                "sector": _f32(sector),
            },
            targets={"density": _f32(obs.density)},
            extras={"potential": v32},
            metadata={
                "index": index, "attempts": attempt, "statistics": "boson",
                "n_max": entry.n_max, "j": params.J, "u": params.U,
                "uprime": params.Uprime, "mu": float(mu),
                "amplitude": amplitude, "n": result.n_star,
                "energy": result.state.energy, "tie_flag": result.tie_flag,
                "retry_reasons": reasons,
            })
        sample.validate()
        return sample, None
    return None, f"exhausted {cfg.max_attempts} attempts: {reasons[-3:]}"


def _manifest_for(cfg) -> dict:
    if cfg.kind == "fermion1d":
        channel_names, head_names = list(CHANNELS_1D), list(HEADS_1D)
    else:
        channel_names, head_names = list(CHANNELS_2D), list(HEADS_2D)
    manifest = {
        "task": cfg.kind,
        "seed": cfg.seed,
        "requested": cfg.count,
        "channel_names": channel_names,
        "head_names": head_names,
        "extra_tensor_names": ["potential"],
        "config": json.loads(json.dumps(asdict(cfg))),
    }
    return manifest


def _make_sample(args):
    cfg, index = args
    if cfg.kind == "fermion1d":
        return index, make_sample_1d(cfg, index)
    return index, make_sample_2d(cfg, index)


def generate_dataset(cfg, out_dir: str, workers: int = 1,
                     progress=None) -> str:
    """Write `cfg.count` samples (minus logged failures) to out_dir."""
    writer = DatasetWriter(out_dir, _manifest_for(cfg))
    failures = []
    retries = 0

    def consume(index, outcome):
        nonlocal retries
        sample, failure = outcome
        if sample is None:
            failures.append({"index": index, "reason": failure})
        else:
            retries += sample.metadata["attempts"]
            writer.append(sample)
        if progress and (index + 1) % progress == 0:
            print(f"[gen-data] {index + 1}/{cfg.count}", file=sys.stderr,
                  flush=True)

    jobs = ((cfg, i) for i in range(cfg.count))
    if workers > 1 and cfg.count > 1:
        with multiprocessing.Pool(workers) as pool:
            for index, outcome in pool.imap(_make_sample, jobs, chunksize=4):
                consume(index, outcome)
    else:
        for job in jobs:
            index, outcome = _make_sample(job)
            consume(index, outcome)

    writer.finalize()
    report = {"failures": failures, "total_retries": retries,
              "written": writer.count, "requested": cfg.count}
    with open(os.path.join(out_dir, "generation_report.json"), "w",
              encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=1)
    return out_dir
