"""Epoch loop, metrics files and checkpoints."""

import csv
import io
import json
import time
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import TTLBPError
from ..topology import init_weights, partition_blocks
from .config import TrainConfig
from .core import OpCounter, evaluate, run_forward, init_state, train_batch
from .optim import lr_schedule

CHECKPOINT_VERSION = 1


class TrainingDiverged(TTLBPError, RuntimeError):
    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}


def time_major(x, T):
    """Batch of samples -> ``[T, B, ...]`` inputs.

    ``[B, C, H, W]`` images are presented identically at every step;
    ``[B, T', C, H, W]`` frame sequences are cut to their first ``T`` frames.
    """
    if x.ndim == 4:
        return np.broadcast_to(x[None], (T,) + x.shape)
    if x.ndim == 5:
        if x.shape[1] < T:
            raise TTLBPError(f"sequences have {x.shape[1]} frames, need T={T}")
        return np.ascontiguousarray(x[:, :T].transpose(1, 0, 2, 3, 4))
    raise TTLBPError(f"unsupported input rank {x.ndim}")


@dataclass
class TrainResult:
    weights: object
    plan: object
    metrics: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)

    @property
    def final_train_accuracy(self):
        return self.metrics[-1]["train_acc"] if self.metrics else float("nan")


def accuracy(arch, plan, weights, x, y, config, batch_size=None):
    if x is None or len(x) == 0:
        return float("nan")
    batch_size = batch_size or config.batch_size
    correct = 0
    for i in range(0, len(x), batch_size):
        xb = time_major(x[i:i + batch_size], config.T)
        correct += int(np.sum(evaluate(xb, y[i:i + batch_size], weights, arch, plan, config) == y[i:i + batch_size]))
    return correct / len(x)


def fit(arch, dataset, config, out_dir=None, on_epoch=None):
    """Train for ``config.epochs`` epochs; optionally write metrics and a checkpoint.

    Metrics rows hold per-block mean loss (over batches and intervals) and
    train/test accuracy. Wall-clock times go to a separate file so that the
    metrics file is reproducible byte for byte.
    """
    plan = partition_blocks(arch, config.n, config.classifier_mode)
    weights = init_weights(arch, plan, config.seed, config.init_scale, config.np_dtype)
    seeds = np.random.SeedSequence([config.seed, 7]).spawn(2)
    shuffle_rng = np.random.default_rng(seeds[0])
    dropout_rng = np.random.default_rng(seeds[1])
    result = TrainResult(weights, plan)
    x, y = dataset.train_x, np.asarray(dataset.train_y)
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        lr = lr_schedule(epoch, config.learning_rate, config.lr_decay_factor, config.lr_decay_every)
        order = shuffle_rng.permutation(len(x))
        losses = []
        correct = 0
        for i in range(0, len(x), config.batch_size):
            idx = order[i:i + config.batch_size]
            xb = time_major(x[idx], config.T)
            res = train_batch(xb, y[idx], weights, arch, plan, config, rng=dropout_rng, lr=lr)
            if not np.all(np.isfinite(res.losses)):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}",
                                       {"epoch": epoch, "batch_start": i, "losses": res.losses.tolist()})
            losses.append(res.losses)
            correct += int(np.sum(res.predictions() == y[idx]))
        block_loss = np.concatenate(losses).mean(axis=0)
        row = {"epoch": epoch, "lr": lr}
        row.update({f"loss_block{b}": float(v) for b, v in enumerate(block_loss)})
        row["train_acc"] = correct / len(x)
        row["test_acc"] = accuracy(arch, plan, weights, dataset.test_x, dataset.test_y, config)
        row["config_hash"] = config.digest()
        result.metrics.append(row)
        result.wall_times.append({"epoch": epoch, "wall_s": time.perf_counter() - t0})
        if on_epoch is not None:
            on_epoch(row)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(result.metrics, out / "metrics.csv")
        write_metrics_csv(result.wall_times, out / "timing.csv")
        save_checkpoint(out / "checkpoint.npz", weights, config.epochs, config, arch)
    return result


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics_csv(rows, path):
    if not rows:
        Path(path).write_text("")
        return
    fields = list(rows[0].keys())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_fmt(r.get(f, "")) for f in fields])
    Path(path).write_text(buf.getvalue())


def read_metrics_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    out = []
    for r in rows:
        conv = {}
        for k, v in r.items():
            if k == "config_hash":
                conv[k] = v
                continue
            try:
                conv[k] = int(v)
            except ValueError:
                try:
                    conv[k] = float(v)
                except ValueError:
                    conv[k] = v
        out.append(conv)
    return out


def save_checkpoint(path, weights, epoch, config, arch):
    """Versioned ``.npz``: every weight/momentum array plus a ``meta.json`` entry."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "epoch": int(epoch),
        "config": config.to_dict(),
        "config_hash": config.digest(),
        "arch": arch.to_dict(),
        "frozen": list(weights.frozen),
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        stamp = (1980, 1, 1, 0, 0, 0)
        zf.writestr(zipfile.ZipInfo("meta.json", date_time=stamp), json.dumps(meta, sort_keys=True))
        for name, arr in weights.arrays():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=stamp), buf.getvalue())


def load_checkpoint(path):
    """Returns ``(weights, meta)``."""
    from ..topology import NetworkArch, WeightSet

    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise TTLBPError(f"unsupported checkpoint version {meta.get('version')}")
        arrays = {n[:-4]: np.lib.format.read_array(io.BytesIO(zf.read(n))) for n in zf.namelist() if n.endswith(".npy")}
    arch = NetworkArch.from_dict(meta["arch"])
    nl = len(arch.layers)
    nb = len(meta["frozen"])
    weights = WeightSet(
        [arrays.get(f"W{i}") for i in range(nl)],
        [arrays[f"Wc{b}"] for b in range(nb)],
        list(meta["frozen"]),
        [arrays.get(f"vW{i}") for i in range(nl)],
        [arrays.get(f"vWc{b}") for b in range(nb)],
    )
    return weights, meta


def harvest_sparsity(arch, plan, weights, x, config, batch_size=None):
    """Mean input density per layer and per classifier from a forward pass over ``x``."""
    counter = OpCounter()
    batch_size = batch_size or config.batch_size
    for i in range(0, len(x), batch_size):
        xb = time_major(x[i:i + batch_size], config.T).astype(config.np_dtype)
        states = init_state(arch, plan, xb.shape[1], config.np_dtype)
        run_forward(states, weights, xb, arch, plan, config.lif, counter=counter)
    layers = [d / counter.steps for d in counter.layer_input_density]
    classifiers = [d / counter.steps for d in counter.classifier_input_density]
    return layers, classifiers
