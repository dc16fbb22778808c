"""Training loop, evaluation, checkpointing, and learning-curve runs.

Mixed-extent datasets are bucketed by extents into homogeneous mini-batches
(circular convolutions never see padding); bucket batches are interleaved
by a seeded shuffle each epoch. The checkpoint with the smallest validation
loss is kept alongside the last epoch's checkpoint.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, load_dataset
from .nn import (AdamState, Network, NetworkSpec, adam_step,
                 initialize_parameters, load_model, load_optimizer_state,
                 multi_head_loss, save_model, save_optimizer_state)
from .sampling import apply_augmentation, symmetry_group


class TrainingAbort(Exception):
    """Non-finite loss or outputs during an optimizer step."""


@dataclass
class TrainConfig:
    dataset_path: str
    out_dir: str
    spec: NetworkSpec
    loss_kind: str = "mae"
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 10
    validation_fraction: float = 0.1
    seed: int = 0
    augment: bool = False
    resume_from: str | None = None
    max_train_samples: int | None = None
    keep_last: bool = True
    checkpoint_every: int = 0   # additionally keep every k-th epoch (0: off)

    def __post_init__(self):
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation fraction must be in (0, 1)")
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2 (batch-norm)")
        if self.loss_kind not in ("mae", "mse"):
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint cadence must be >= 0")


@dataclass
class TrainResult:
    best_model_path: str
    last_model_path: str
    metrics_path: str
    metrics: list[dict]
    best_epoch: int
    best_val_loss: float


def _materialize(dataset: Dataset, spec: NetworkSpec):
    """Decode all samples once, after checking channel/head compatibility."""
    channel_names = dataset.manifest["channel_names"]
    if tuple(channel_names) != tuple(spec.input_channel_names):
        raise ValueError(
            f"dataset channels {channel_names} do not match the network's "
            f"{list(spec.input_channel_names)}")
    missing = set(spec.head_names) - set(dataset.manifest["head_names"])
    if missing:
        raise ValueError(f"dataset lacks target heads {sorted(missing)}")
    return list(dataset)


def _split_indices(n: int, fraction: float, seed: int):
    order = np.random.default_rng(
        np.random.SeedSequence([seed, 91])).permutation(n)
    n_val = max(1, int(round(fraction * n)))
    return order[n_val:], order[:n_val]


def _bucket_by_extents(samples, indices):
    buckets: dict[tuple, list[int]] = {}
    for i in indices:
        buckets.setdefault(samples[i].extents, []).append(int(i))
    return buckets


def _stack_batch(samples, indices, spec, rng=None):
    chosen = [samples[i] for i in indices]
    if rng is not None:
        ops_for = {}
        augmented = []
        for s in chosen:
            ops = ops_for.setdefault(s.extents, symmetry_group(s.extents))
            op = ops[int(rng.integers(len(ops)))]
            augmented.append(apply_augmentation(s, op))
        chosen = augmented
    x = np.stack([np.stack([s.channels[c] for c in spec.input_channel_names])
                  for s in chosen]).astype(np.float32)
    targets = {h: np.stack([s.targets[h] for s in chosen]).astype(np.float32)
               for h in spec.head_names}
    return x, targets


def _epoch_batches(buckets, batch_size, rng):
    batches = []
    for extents in sorted(buckets):
        members = np.asarray(buckets[extents])
        order = rng.permutation(len(members))
        for lo in range(0, len(members), batch_size):
            chunk = members[order[lo:lo + batch_size]]
            if len(chunk) >= 2:
                batches.append(chunk)
    rng.shuffle(batches)
    return batches


def _validation_metrics(net, samples, indices, spec, loss_kind):
    """Mean per-head error over a sample set (eval mode) plus density MAE."""
    buckets = _bucket_by_extents(samples, indices)
    sums = {h: 0.0 for h in spec.head_names}
    counts = {h: 0 for h in spec.head_names}
    for extents in sorted(buckets):
        x, targets = _stack_batch(samples, buckets[extents], spec)
        heads = net.forward(x, mode="eval")
        for h in spec.head_names:
            diff = heads[h] - targets[h]
            err = np.abs(diff) if loss_kind == "mae" else diff * diff
            sums[h] += float(err.sum())
            counts[h] += diff.size
    per_head = {h: sums[h] / max(counts[h], 1) for h in spec.head_names}
    total = sum(sums.values()) / max(sum(counts.values()), 1)
    if "density" in spec.head_names and loss_kind == "mae":
        density_mae = per_head["density"]
    elif "density" in spec.head_names:
        density_mae = _density_mae(net, samples, indices, spec)
    else:
        density_mae = None
    return total, per_head, density_mae


def _density_mae(net, samples, indices, spec):
    buckets = _bucket_by_extents(samples, indices)
    total, count = 0.0, 0
    for extents in sorted(buckets):
        x, targets = _stack_batch(samples, buckets[extents], spec)
        diff = net.forward(x, mode="eval")["density"] - targets["density"]
        total += float(np.abs(diff).sum())
        count += diff.size
    return total / max(count, 1)


def _fit(config: TrainConfig, samples, train_idx, val_idx,
         manifest_info: dict) -> TrainResult:
    spec = config.spec
    if config.resume_from:
        loaded_spec, store, _extra = load_model(config.resume_from)
        if loaded_spec != spec:
            raise ValueError("resume checkpoint spec differs from config")
        opt_path = config.resume_from + ".adam"
        if os.path.exists(opt_path):
            state, _ = load_optimizer_state(opt_path, store)
        else:
            state = AdamState.for_store(store)
    else:
        store = initialize_parameters(spec, seed=config.seed)
        state = AdamState.for_store(store)
    net = Network(spec, store)

    os.makedirs(config.out_dir, exist_ok=True)
    buckets = _bucket_by_extents(samples, train_idx)
    metrics: list[dict] = []
    metrics_path = os.path.join(config.out_dir, "metrics.jsonl")
    best_path = os.path.join(config.out_dir, "best.model")
    last_path = os.path.join(config.out_dir, "last.model")

    def save(path, epoch, val_loss):
        extra = {"epoch": epoch, "val_loss": val_loss,
                 "loss_kind": config.loss_kind,
                 "dataset_manifest": manifest_info,
                 "train_seed": config.seed,
                 "n_train": int(len(train_idx))}
        save_model(spec, store, path, extra=extra)
        save_optimizer_state(state, store, path + ".adam",
                             hyper={"lr": config.lr})

    best_val, best_epoch = np.inf, -1
    with open(metrics_path, "w", encoding="utf-8") as log:
        for epoch in range(config.epochs):
            t0 = time.perf_counter()
            rng = np.random.default_rng(
                np.random.SeedSequence([config.seed, 7, epoch]))
            aug_rng = rng if config.augment else None
            batch_losses = []
            for b, batch in enumerate(
                    _epoch_batches(buckets, config.batch_size, rng)):
                x, targets = _stack_batch(samples, batch, spec, rng=aug_rng)
                heads, caches = net.forward(x, mode="train", want_cache=True)
                value, head_grads = multi_head_loss(heads, targets,
                                                    config.loss_kind)
                if not np.isfinite(value):
                    raise TrainingAbort(
                        f"non-finite loss at epoch {epoch} batch {b}")
                grads, _ = net.backward(caches, head_grads)
                adam_step(store, grads, state, lr=config.lr)
                batch_losses.append(value)
            val_loss, per_head, density_mae = _validation_metrics(
                net, samples, val_idx, spec, config.loss_kind)
            if not np.isfinite(val_loss):
                raise TrainingAbort(f"non-finite validation loss at epoch "
                                    f"{epoch}")
            record = {
                "epoch": epoch,
                "train_loss": float(np.mean(batch_losses))
                              if batch_losses else None,
                "val_loss": val_loss,
                "val_loss_per_head": per_head,
                "val_density_mae": density_mae,
                "n_train": int(len(train_idx)),
                "seconds": round(time.perf_counter() - t0, 3),
            }
            metrics.append(record)
            log.write(json.dumps(record, sort_keys=True) + "\n")
            log.flush()
            if val_loss < best_val:
                best_val, best_epoch = val_loss, epoch
                save(best_path, epoch, val_loss)
            if (config.checkpoint_every
                    and (epoch + 1) % config.checkpoint_every == 0):
                save(os.path.join(config.out_dir, f"epoch{epoch}.model"),
                     epoch, val_loss)

    if best_epoch < 0:
        # zero-epoch run (or no improvement recorded): store the current
        # parameters with their validation loss
        val_loss, _ph, _mae = _validation_metrics(net, samples, val_idx,
                                                  spec, config.loss_kind)
        best_val = val_loss
        save(best_path, -1, val_loss)
    if config.keep_last:
        last_val = metrics[-1]["val_loss"] if metrics else float(best_val)
        save(last_path, config.epochs - 1, last_val)
    return TrainResult(best_model_path=best_path, last_model_path=last_path,
                       metrics_path=metrics_path, metrics=metrics,
                       best_epoch=best_epoch, best_val_loss=float(best_val))


def train(config: TrainConfig) -> TrainResult:
    """Train on a dataset with a seeded validation split."""
    dataset = load_dataset(config.dataset_path)
    samples = _materialize(dataset, config.spec)
    manifest_info = {k: dataset.manifest.get(k)
                     for k in ("task", "seed", "channel_names", "head_names",
                               "config")}
    dataset.close()
    train_idx, val_idx = _split_indices(len(samples),
                                        config.validation_fraction,
                                        config.seed)
    if config.max_train_samples is not None:
        train_idx = train_idx[:config.max_train_samples]
    if len(train_idx) == 0:
        raise ValueError("no training samples after split")
    return _fit(config, samples, train_idx, val_idx, manifest_info)


def evaluate(model, dataset, indices=None, loss_kind: str | None = None):
    """Per-head mean error of a model over a dataset or index subset.

    `model` is a checkpoint path or a (spec, store, extra) triple.
    """
    if isinstance(model, (str, os.PathLike)):
        spec, store, extra = load_model(str(model))
    else:
        spec, store, extra = model
    if loss_kind is None:
        loss_kind = extra.get("loss_kind", "mae")
    close_after = False
    if isinstance(dataset, (str, os.PathLike)):
        dataset = load_dataset(str(dataset))
        close_after = True
    net = Network(spec, store)
    samples = _materialize(dataset, spec)
    if close_after:
        dataset.close()
    if indices is None:
        indices = np.arange(len(samples))
    total, per_head, density_mae = _validation_metrics(
        net, samples, np.asarray(indices), spec, loss_kind)
    return {"loss": total, "per_head": per_head, "density_mae": density_mae,
            "loss_kind": loss_kind, "n_samples": int(len(indices))}


def learning_curve(config: TrainConfig, sizes, repeats: int,
                   test_fraction: float = 0.1, curve_seed: int = 517):
    """Test error vs training-set size over repeated runs.

    One fixed shuffle (curve_seed) splits off a held-out test set; training
    subsets are nested prefixes of the remaining pool. Each (size, repeat)
    trains a fresh model with a repeat-dependent seed; rows report the mean
    and standard deviation of the held-out error.
    """
    dataset = load_dataset(config.dataset_path)
    samples = _materialize(dataset, config.spec)
    manifest_info = {k: dataset.manifest.get(k)
                     for k in ("task", "seed", "channel_names", "head_names")}
    dataset.close()
    n = len(samples)
    order = np.random.default_rng(
        np.random.SeedSequence([curve_seed, 23])).permutation(n)
    n_test = max(1, int(round(test_fraction * n)))
    test_idx = order[:n_test]
    pool = order[n_test:]
    sizes = sorted(int(s) for s in sizes)
    if sizes[-1] > len(pool):
        raise ValueError(f"size {sizes[-1]} exceeds the training pool "
                         f"({len(pool)})")

    rows = []
    for size in sizes:
        errors = []
        for rep in range(repeats):
            sub_cfg = TrainConfig(
                dataset_path=config.dataset_path,
                out_dir=os.path.join(config.out_dir, f"size{size}_rep{rep}"),
                spec=config.spec, loss_kind=config.loss_kind, lr=config.lr,
                batch_size=config.batch_size, epochs=config.epochs,
                validation_fraction=config.validation_fraction,
                seed=config.seed + 1009 * rep, augment=config.augment,
                keep_last=False)
            subset = pool[:size]
            split = np.random.default_rng(
                np.random.SeedSequence([sub_cfg.seed, 91])).permutation(size)
            n_val = max(1, int(round(sub_cfg.validation_fraction * size)))
            result = _fit(sub_cfg, samples, subset[split[n_val:]],
                          subset[split[:n_val]], manifest_info)
            spec_store = load_model(result.best_model_path)
            net = Network(spec_store[0], spec_store[1])
            total, _ph, _mae = _validation_metrics(
                net, samples, test_idx, config.spec, config.loss_kind)
            errors.append(total)
        rows.append({"size": size, "mean": float(np.mean(errors)),
                     "sigma": float(np.std(errors)) if repeats > 1 else 0.0,
                     "errors": [float(e) for e in errors]})
    return rows
