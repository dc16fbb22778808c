"""Training-sample assembly, parameter sampling, and symmetry augmentation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lattice import (LatticeGeometry, ModelParams, boson_params,
                      checkerboard_pattern)

CHANNELS_1D = ("v_minus_mu",)
CHANNELS_2D = ("v_minus_mu", "u_onsite", "u_neighbor", "sector")
HEADS_1D = ("density", "density_corr", "current", "current_corr")
HEADS_2D = ("density",)


@dataclass
class TrainingSample:
    """One (input channels -> target maps) pair plus bookkeeping.

    All maps are float32 and share the lattice extents; `extras` carries
    reference tensors (the raw potential) that are stored but not fed to
    the network.
    """

    extents: tuple[int, ...]
    channels: dict[str, np.ndarray]
    targets: dict[str, np.ndarray]
    extras: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def validate(self) -> None:
        for name, arr in {**self.channels, **self.targets,
                          **self.extras}.items():
            if arr.shape != self.extents:
                raise ValueError(f"map {name!r} has shape {arr.shape}, "
                                 f"expected {self.extents}")
        if "sector" in self.channels:
            vals = np.unique(self.channels["sector"])
            if not np.all(np.isin(vals, [-1.0, 1.0])):
                raise ValueError("sector channel must be a +-1 pattern")


@dataclass(frozen=True)
class ParamRanges:
    """Uniform sampling ranges of the 2D model, in the paper's scaled units."""

    four_j_over_u: tuple[float, float] = (0.05, 1.0)
    four_up_over_u: tuple[float, float] = (0.75, 1.75)
    mu_over_u: tuple[float, float] = (-0.5, 3.0)

    def __post_init__(self):
        for lo, hi in (self.four_j_over_u, self.four_up_over_u,
                       self.mu_over_u):
            if not lo <= hi:
                raise ValueError("ranges must be ordered lo <= hi")
        if self.four_j_over_u[0] <= 0:
            raise ValueError("4J/U must stay positive")


def sample_model_params(rng: np.random.Generator,
                        ranges: ParamRanges = ParamRanges(),
                        n_max: int = 3) -> tuple[ModelParams, float]:
    """Draw (params, mu) for the 2D boson model with J fixed to one.

    4J/U and 4U'/U are drawn uniformly, fixing U and U'; mu is uniform on
    [lo*U, hi*U]. The 1D task uses fixed couplings instead, with mu coming
    from the ground-energy differences.
    """
    fj = rng.uniform(*ranges.four_j_over_u)
    fup = rng.uniform(*ranges.four_up_over_u)
    u = 4.0 / fj
    uprime = fup * u / 4.0
    mu = rng.uniform(ranges.mu_over_u[0] * u, ranges.mu_over_u[1] * u)
    return boson_params(J=1.0, U=u, Uprime=uprime, n_max=n_max), mu


def checkerboard_channel(density: np.ndarray,
                         geom: LatticeGeometry) -> np.ndarray:
    """Sector channel s * (-1)^(x0+x1), s following the density.

    s is the sign of the staggered overlap of the density (+1 on an exact
    tie), so the channel marks the checkerboard variant most correlated
    with the observed density.
    """
    pattern = checkerboard_pattern(geom)
    overlap = float((np.asarray(density) * pattern).sum())
    s = -1.0 if overlap < 0 else 1.0
    return s * pattern


# ---------------------------------------------------------------------------
# symmetry augmentation
#
# A symmetry op is one of
#   ("translate", (shifts...))      per-axis cyclic shifts
#   ("reflect", axis)               x_axis -> -x_axis (mod extent)
#   ("rot90",)                      2D square lattices only
#
# Scalar site maps transform as arrays. Bond-based maps (density_corr,
# current, current_corr along direction d, based at site x) follow the bond
# images; reflections along the bond axis shift the base site and flip the
# current's sign, and rot90 permutes the direction axes.


def _scalar_transform(arr, op):
    kind = op[0]
    if kind == "translate":
        return np.roll(arr, op[1], axis=tuple(range(arr.ndim)))
    if kind == "reflect":
        axis = op[1]
        return np.roll(np.flip(arr, axis=axis), 1, axis=axis)
    if kind == "rot90":
        return np.rot90(arr, k=1).copy()
    raise ValueError(f"unknown symmetry op {op!r}")


def _bond_transform(maps_by_dir, op, odd_under_reversal, span):
    """Transform a tuple of per-direction bond maps.

    maps_by_dir[d] lives on `span` consecutive sites starting at the base x
    (span 1: single bond (x, x+e_d); span 2: the adjacent bond pair used by
    the current correlator). When a transform reverses the bond direction,
    the image's base shifts back by `span` sites, and vector quantities
    (odd_under_reversal) flip sign per reversed bond.
    """
    kind = op[0]
    ndim = maps_by_dir[0].ndim
    if kind == "translate":
        return tuple(_scalar_transform(m, op) for m in maps_by_dir)
    if kind == "reflect":
        axis = op[1]
        out = []
        for d, m in enumerate(maps_by_dir):
            t = _scalar_transform(m, op)
            if d == axis:
                t = np.roll(t, -span, axis=axis)
                if odd_under_reversal:
                    t = -t
            out.append(t)
        return tuple(out)
    if kind == "rot90":
        if ndim != 2:
            raise ValueError("rot90 applies to 2D maps")
        # +e_0 bonds map to +e_1 bonds; +e_1 bonds map to reversed -e_0
        # bonds whose base drops along axis 0
        new_1 = _scalar_transform(maps_by_dir[0], op)
        new_0 = np.roll(_scalar_transform(maps_by_dir[1], op), -span, axis=0)
        if odd_under_reversal:
            new_0 = -new_0
        return (new_0, new_1)
    raise ValueError(f"unknown symmetry op {op!r}")


# head family -> (sign flips under bond reversal, base span in sites)
_BOND_HEAD_KINDS = {"density_corr": (False, 1), "current": (True, 1),
                    "current_corr": (False, 2)}


def _split_head_name(name):
    for prefix in _BOND_HEAD_KINDS:
        if name == prefix:
            return prefix, 0
        if name.startswith(prefix + "_ax"):
            return prefix, int(name[len(prefix) + 3:])
    return None, None


def transform_head_maps(maps: dict, op) -> dict:
    """Transform a dict of named observable maps under one symmetry op.

    Scalar maps transform as arrays; bond-based head families (density
    correlator, current, current correlator, with optional _ax suffixes)
    follow the bond rules, permuting direction members together.
    """
    out = {}
    families = {}
    for name, arr in maps.items():
        prefix, d = _split_head_name(name)
        if prefix is None:
            out[name] = _scalar_transform(arr, op)
        else:
            families.setdefault(prefix, {})[d] = (name, arr)
    for prefix, members in families.items():
        dirs = sorted(members)
        stack = tuple(members[d][1] for d in dirs)
        odd, span = _BOND_HEAD_KINDS[prefix]
        transformed = _bond_transform(stack, op, odd, span)
        for d, new_map in zip(dirs, transformed):
            out[members[d][0]] = new_map
    return out


def augment(sample: TrainingSample, op) -> TrainingSample:
    """Apply one symmetry op consistently to all channels and targets."""
    kind = op[0]
    if kind == "translate" and len(op[1]) != len(sample.extents):
        raise ValueError("translation shift rank mismatch")
    if kind == "reflect" and not 0 <= op[1] < len(sample.extents):
        raise ValueError("reflection axis out of range")
    if kind == "rot90":
        if len(sample.extents) != 2 or sample.extents[0] != sample.extents[1]:
            raise ValueError("rot90 requires square 2D extents")

    channels = {k: _scalar_transform(v, op) for k, v in sample.channels.items()}
    extras = {k: _scalar_transform(v, op) for k, v in sample.extras.items()}
    targets = transform_head_maps(sample.targets, op)

    meta = dict(sample.metadata)
    meta.setdefault("augmentations", [])
    meta["augmentations"] = meta["augmentations"] + [list(op[:1]) + list(op[1:])]
    return TrainingSample(extents=sample.extents, channels=channels,
                          targets=targets, extras=extras, metadata=meta)


def inverse_ops(op) -> list:
    """Op sequence undoing `op` (rot90 inverts as three quarter turns)."""
    kind = op[0]
    if kind == "translate":
        return [("translate", tuple(-s for s in op[1]))]
    if kind == "reflect":
        return [op]
    if kind == "rot90":
        return [("rot90",)] * 3
    if kind == "identity":
        return [op]
    raise ValueError(f"unknown symmetry op {op!r}")


def symmetry_group(extents) -> list:
    """Ops used for on-the-fly augmentation on a given geometry."""
    ndim = len(extents)
    ops = [("identity",)]
    if ndim == 1:
        ops.append(("reflect", 0))
    else:
        ops.extend([("reflect", 0), ("reflect", 1)])
        for s0 in range(extents[0]):
            for s1 in range(extents[1]):
                if (s0, s1) != (0, 0):
                    ops.append(("translate", (s0, s1)))
        if extents[0] == extents[1]:
            ops.append(("rot90",))
    return ops


def apply_augmentation(sample: TrainingSample, op) -> TrainingSample:
    if op[0] == "identity":
        return sample
    return augment(sample, op)
