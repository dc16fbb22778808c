"""Command-line interface: the full pipeline as subcommands.

Every run writes a resolved-config snapshot next to its outputs. Results
land in files (and on stdout as JSON when --json is given); progress goes
to stderr. Exit codes: 0 success, 1 runtime failure (with a JSON error
record on stderr), 2 usage errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import __version__
from .basis import build_basis
from .dataset import load_dataset
from .ed import energy_scan, ground_state, measure_observables
from .generate import config_from_dict, generate_dataset
from .hartree_fock import hf_solve
from .invert import InversionConfig, invert
from .lattice import ModelParams, PotentialField, fermion_params, \
    flat_potential, make_geometry
from .nn import reference_spec_1d, reference_spec_2d, tiny_spec
from .potentials import harmonic_potential, step_well_potential
from .predict import Predictor, phase_scan
from .trainer import TrainConfig, evaluate, learning_curve, train


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if dataclasses.is_dataclass(obj):
        return dataclasses.asdict(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _write_json(path, payload):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True,
                  default=_json_default)
        fh.write("\n")


def _snapshot_config(out_dir, args):
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    resolved["potmap_version"] = __version__
    _write_json(os.path.join(out_dir, "resolved_config.json"), resolved)


def _emit(args, payload):
    if getattr(args, "json", False):
        json.dump(payload, sys.stdout, default=_json_default, sort_keys=True)
        sys.stdout.write("\n")


def _load_config_file(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _parse_extents(text):
    parts = [int(p) for p in text.lower().replace("x", ",").split(",") if p]
    return tuple(parts)


def _parse_grid(text):
    lo, hi, num = text.split(":")
    return np.linspace(float(lo), float(hi), int(num))


def _build_potential(args, geom):
    kind = args.potential
    if kind == "flat":
        return flat_potential(geom, getattr(args, "level", 0.0))
    if kind == "step":
        return step_well_potential(geom, depth=args.depth, width=args.width)
    if kind == "harmonic":
        return harmonic_potential(geom, curvature=args.curvature)
    if kind == "file":
        data = np.asarray(json.load(open(args.potential_file)), dtype=float)
        return PotentialField(geom, data)
    raise ValueError(f"unknown potential {kind!r}")


def _spec_from_args(args, manifest):
    preset = args.spec_preset
    task = manifest["task"]
    channels_1d = tuple(manifest["channel_names"])
    if preset == "reference":
        return reference_spec_1d() if task == "fermion1d" \
            else reference_spec_2d()
    dim = 1 if task == "fermion1d" else 2
    heads = tuple(args.heads.split(",")) if args.heads else (
        tuple(manifest["head_names"]))
    return tiny_spec(dim=dim, input_channel_names=channels_1d,
                     head_names=heads, channels=args.channels,
                     n_blocks=args.blocks, residual=not args.plain)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args):
    if args.config:
        data = _load_config_file(args.config)
    else:
        data = {"kind": args.kind}
    for key, value in (("seed", args.seed), ("count", args.count)):
        if value is not None:
            data[key] = value
    data.setdefault("seed", 0)
    data.setdefault("count", 0)
    cfg = config_from_dict(data)
    generate_dataset(cfg, args.out, workers=args.workers,
                     progress=args.progress)
    _snapshot_config(args.out, args)
    ds = load_dataset(args.out)
    payload = {"out": args.out, "count": len(ds), "task": ds.manifest["task"]}
    ds.close()
    _emit(args, payload)
    return 0


def cmd_train(args):
    ds = load_dataset(args.dataset)
    manifest = ds.manifest
    ds.close()
    spec = _spec_from_args(args, manifest)
    cfg = TrainConfig(dataset_path=args.dataset, out_dir=args.out, spec=spec,
                      loss_kind=args.loss, lr=args.lr,
                      batch_size=args.batch_size, epochs=args.epochs,
                      validation_fraction=args.val_fraction, seed=args.seed,
                      augment=args.augment, resume_from=args.resume_from,
                      max_train_samples=args.max_train_samples)
    result = train(cfg)
    _snapshot_config(args.out, args)
    payload = {"best_model": result.best_model_path,
               "best_epoch": result.best_epoch,
               "best_val_loss": result.best_val_loss,
               "metrics": result.metrics_path}
    _emit(args, payload)
    return 0


def cmd_eval(args):
    report = evaluate(args.model, args.dataset, loss_kind=args.loss)
    if args.out:
        _write_json(os.path.join(args.out, "eval.json"), report)
        _snapshot_config(args.out, args)
    _emit(args, report)
    return 0


def cmd_learning_curve(args):
    ds = load_dataset(args.dataset)
    manifest = ds.manifest
    ds.close()
    spec = _spec_from_args(args, manifest)
    cfg = TrainConfig(dataset_path=args.dataset, out_dir=args.out, spec=spec,
                      loss_kind=args.loss, lr=args.lr,
                      batch_size=args.batch_size, epochs=args.epochs,
                      validation_fraction=args.val_fraction, seed=args.seed,
                      augment=args.augment)
    sizes = [int(s) for s in args.sizes.split(",")]
    rows = learning_curve(cfg, sizes=sizes, repeats=args.repeats,
                          test_fraction=args.test_fraction,
                          curve_seed=args.curve_seed)
    _write_json(os.path.join(args.out, "learning_curve.json"), rows)
    if args.csv:
        with open(os.path.join(args.out, "learning_curve.csv"), "w") as fh:
            fh.write("size,mean,sigma\n")
            for row in rows:
                fh.write(f"{row['size']},{row['mean']},{row['sigma']}\n")
    _snapshot_config(args.out, args)
    _emit(args, rows)
    return 0


def _params_from_args(args):
    if args.U is None:
        return None
    return ModelParams(J=1.0, U=args.U, Uprime=args.Uprime,
                       statistics="boson", n_max=args.n_max) \
        if args.Uprime is not None else fermion_params(U=args.U)


def cmd_predict(args):
    predictor = Predictor.load(args.model)
    dim = predictor.spec.dim
    extents = _parse_extents(args.extents)
    if len(extents) != dim:
        raise ValueError(f"extents {extents} do not match a {dim}D model")
    geom = make_geometry(dim, extents)
    V = _build_potential(args, geom)
    heads = predictor.predict(V, args.mu, _params_from_args(args),
                              sector=args.sector)
    payload = {"extents": list(extents), "mu": args.mu,
               "heads": {k: v for k, v in heads.items()}}
    if args.out:
        _write_json(os.path.join(args.out, "prediction.json"), payload)
        if args.csv:
            for name, arr in heads.items():
                np.savetxt(os.path.join(args.out, f"{name}.csv"),
                           np.asarray(arr).reshape(extents[0], -1),
                           delimiter=",")
        _snapshot_config(args.out, args)
    _emit(args, payload)
    return 0


def cmd_phase_scan(args):
    predictor = Predictor.load(args.model)
    result = phase_scan(predictor, _parse_grid(args.mu_grid),
                        _parse_grid(args.j_grid),
                        four_up_over_u=args.four_up_over_u,
                        extents=_parse_extents(args.extents))
    payload = {
        "mu_over_u": result.mu_over_u, "four_j_over_u": result.four_j_over_u,
        "four_up_over_u": result.four_up_over_u,
        "order_parameter": result.order_parameter,
        "order_parameter_both": result.order_parameter_both,
        "retained_sector": result.retained_sector,
        "out_of_range": result.out_of_range.astype(int),
    }
    if args.out:
        _write_json(os.path.join(args.out, "phase_scan.json"), payload)
        if args.csv:
            np.savetxt(os.path.join(args.out, "order_parameter.csv"),
                       result.order_parameter, delimiter=",")
        _snapshot_config(args.out, args)
    _emit(args, payload)
    return 0


def cmd_invert(args):
    predictor = Predictor.load(args.model)
    target = np.asarray(json.load(open(args.target)), dtype=float)
    cfg = InversionConfig(target_density=target, v_lo=args.v_lo,
                          v_hi=args.v_hi, mu=args.mu,
                          params=_params_from_args(args), sector=args.sector,
                          steps=args.steps, lr=args.lr,
                          restarts=args.restarts, seed=args.seed)
    result = invert(predictor, cfg)
    payload = {"loss": result.loss, "potential": result.potential,
               "predicted_density": result.predicted_density,
               "restart_losses": result.restart_losses,
               "loss_trace_tail": result.loss_trace[-10:]}
    if args.out:
        _write_json(os.path.join(args.out, "inversion.json"), payload)
        if args.csv:
            np.savetxt(os.path.join(args.out, "potential.csv"),
                       np.asarray(result.potential).reshape(
                           result.potential.shape[0], -1), delimiter=",")
        _snapshot_config(args.out, args)
    _emit(args, payload)
    return 0


def cmd_bench(args):
    from .benchmark import benchmark
    report = benchmark(args.model,
                       oracle_extents=[int(s) for s in
                                       args.oracle_extents.split(",")],
                       nn_extents=[int(s) for s in
                                   args.nn_extents.split(",")],
                       repeats=args.repeats, seed=args.seed)
    if args.out:
        _write_json(os.path.join(args.out, "benchmark.json"), report)
        if args.csv:
            with open(os.path.join(args.out, "benchmark.csv"), "w") as fh:
                fh.write("extent,oracle_seconds,nn_seconds,ratio\n")
                for row in report["rows"]:
                    fh.write(f"{row['extent']},{row['oracle_seconds']},"
                             f"{row['nn_seconds']},{row['ratio']}\n")
        _snapshot_config(args.out, args)
    _emit(args, report)
    return 0


def cmd_compare(args):
    """ED vs Hartree-Fock vs (optionally) the network on one potential."""
    geom = make_geometry(1, [args.L])
    V = _build_potential(args, geom)
    params = fermion_params(U=args.U)
    n = args.N if args.N is not None else args.L // 2
    table = energy_scan(params, V, geom, range(max(n - 1, 0), n + 2))
    if args.mu is None:
        # midpoint of the grand-canonical stability interval of N
        lo = table.energy(n) - table.energy(n - 1)
        hi = table.energy(n + 1) - table.energy(n)
        mu = 0.5 * (lo + hi)
    else:
        mu = args.mu
    basis = build_basis(geom, n, "fermion", 1)
    state = ground_state(params, V, basis)
    obs = measure_observables(state, basis, params)
    hf = hf_solve(params, V, geom, n)
    report = {
        "L": args.L, "N": n, "U": args.U, "mu": mu,
        "potential": V.values,
        "ed": {"energy": state.energy, "density": obs.density},
        "hf": {"energy": hf.energy, "density": hf.observables.density,
               "converged": hf.converged},
        "hf_vs_ed_density_mae":
            float(np.mean(np.abs(hf.observables.density - obs.density))),
    }
    if args.model:
        predictor = Predictor.load(args.model)
        nn_heads = predictor.predict(V, mu)
        report["nn"] = {"density": nn_heads["density"]}
        report["nn_vs_ed_density_mae"] = float(
            np.mean(np.abs(nn_heads["density"] - obs.density)))
    if args.out:
        _write_json(os.path.join(args.out, "compare.json"), report)
        if args.csv:
            cols = [obs.density, hf.observables.density]
            names = "ed,hf"
            if args.model:
                cols.append(np.asarray(report["nn"]["density"]))
                names += ",nn"
            np.savetxt(os.path.join(args.out, "densities.csv"),
                       np.column_stack(cols), delimiter=",",
                       header=names, comments="")
        _snapshot_config(args.out, args)
    _emit(args, report)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(
        prog="potmap",
        description="Exact-solver datasets, convolutional surrogates, and "
                    "inverse design for lattice models in random potentials")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--out", required=out_required,
                       help="output directory")
        p.add_argument("--json", action="store_true",
                       help="print results as JSON on stdout")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("gen-data", help="generate an exact-solver dataset")
    p.add_argument("--config", help="JSON generation config")
    p.add_argument("--kind", choices=["fermion1d", "boson2d"],
                   default="fermion1d")
    p.add_argument("--count", type=int)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--progress", type=int, default=0,
                   help="log every N samples to stderr")
    common(p)
    p.set_defaults(func=cmd_gen_data, seed=None)

    p = sub.add_parser("train", help="train a network on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--spec-preset", choices=["custom", "reference"],
                   default="custom")
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--blocks", type=int, default=8)
    p.add_argument("--plain", action="store_true",
                   help="plain conv blocks instead of residual blocks")
    p.add_argument("--heads", help="comma list; default: all dataset heads")
    p.add_argument("--loss", choices=["mae", "mse"], default="mae")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--augment", action="store_true")
    p.add_argument("--resume-from")
    p.add_argument("--max-train-samples", type=int)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--loss", choices=["mae", "mse"])
    common(p, out_required=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("learning-curve",
                       help="test error vs training-set size")
    p.add_argument("--dataset", required=True)
    p.add_argument("--sizes", required=True, help="comma list of sizes")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--curve-seed", type=int, default=517)
    p.add_argument("--spec-preset", choices=["custom", "reference"],
                   default="custom")
    p.add_argument("--channels", type=int, default=24)
    p.add_argument("--blocks", type=int, default=6)
    p.add_argument("--plain", action="store_true")
    p.add_argument("--heads")
    p.add_argument("--loss", choices=["mae", "mse"], default="mae")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--augment", action="store_true")
    p.add_argument("--csv", action="store_true")
    common(p)
    p.set_defaults(func=cmd_learning_curve)

    def potential_flags(p):
        p.add_argument("--potential",
                       choices=["flat", "step", "harmonic", "file"],
                       default="flat")
        p.add_argument("--depth", type=float, default=3.0)
        p.add_argument("--width", type=int, default=None)
        p.add_argument("--curvature", type=float, default=0.1)
        p.add_argument("--level", type=float, default=0.0)
        p.add_argument("--potential-file")

    p = sub.add_parser("predict", help="network prediction for a potential")
    p.add_argument("--model", required=True)
    p.add_argument("--extents", required=True, help="e.g. 40 or 4x4")
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--U", type=float)
    p.add_argument("--Uprime", type=float)
    p.add_argument("--n-max", type=int, default=3)
    p.add_argument("--sector", type=float, default=1.0)
    p.add_argument("--csv", action="store_true")
    potential_flags(p)
    common(p, out_required=False)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("phase-scan",
                       help="flat-potential order-parameter grid")
    p.add_argument("--model", required=True)
    p.add_argument("--mu-grid", required=True, help="lo:hi:n in mu/U")
    p.add_argument("--j-grid", required=True, help="lo:hi:n in 4J/U")
    p.add_argument("--four-up-over-u", type=float, default=1.0)
    p.add_argument("--extents", default="4x4")
    p.add_argument("--csv", action="store_true")
    common(p, out_required=False)
    p.set_defaults(func=cmd_phase_scan)

    p = sub.add_parser("invert",
                       help="recover a potential for a target density")
    p.add_argument("--model", required=True)
    p.add_argument("--target", required=True,
                   help="JSON file holding the target density map")
    p.add_argument("--v-lo", type=float, required=True)
    p.add_argument("--v-hi", type=float, required=True)
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--U", type=float)
    p.add_argument("--Uprime", type=float)
    p.add_argument("--n-max", type=int, default=3)
    p.add_argument("--sector", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--restarts", type=int, default=4)
    p.add_argument("--csv", action="store_true")
    common(p, out_required=False)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("bench", help="oracle vs inference wall-clock")
    p.add_argument("--model", required=True)
    p.add_argument("--oracle-extents", default="8,12,16")
    p.add_argument("--nn-extents", default="8,12,16,40")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--csv", action="store_true")
    common(p, out_required=False)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("compare",
                       help="ED vs HF vs NN on a named potential")
    p.add_argument("--L", type=int, default=14)
    p.add_argument("--N", type=int)
    p.add_argument("--U", type=float, default=1.5)
    p.add_argument("--mu", type=float)
    p.add_argument("--model")
    p.add_argument("--csv", action="store_true")
    potential_flags(p)
    common(p, out_required=False)
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:
        record = {"error": str(exc), "type": type(exc).__name__,
                  "command": args.command}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
