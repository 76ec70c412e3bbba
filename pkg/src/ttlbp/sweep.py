"""(k, n) design-space sweeps: cost tables and accuracy+cost FoM rankings."""

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import costmodel
from .engine.trainer import accuracy, fit, harvest_sparsity
from .topology import TRAINABLE, normalize_mode, partition_blocks

COST_COLUMNS = [
    "k", "n", "classifier_mode", "T", "batch_size", "memory_cost",
    "reads_forward", "writes_forward", "reads_backward_mid", "writes_backward_mid",
    "reads_backward_end", "writes_backward_end", "additions_forward", "additions_backward",
    "macs_backward", "memory_access_total", "additions_total", "macs_total",
    "ratio_memory", "ratio_memory_access", "ratio_additions", "ratio_macs",
    "accuracy", "accuracy_loss", "fom",
]


def worker_count():
    try:
        return max(1, int(os.environ.get("TTLBP_THREADS", "1")))
    except ValueError:
        return 1


def cost_row(arch, k, n, mode, T, batch_size, sparsity=None, classifier_sparsity=None):
    plan = partition_blocks(arch, n, mode)
    inputs = costmodel.CostInputs(arch, plan, k, T, batch_size, sparsity, classifier_sparsity)
    return costmodel.estimate(inputs)


def cost_table(arch, ks, ns, modes, T, batch_size, sparsity=None, classifier_sparsity=None, accuracies=None):
    """One row per (k, n, mode), each normalized against that mode's BPTT row (k=T, n=all).

    ``accuracies`` maps ``(k, n, mode)`` to an accuracy in [0, 1]; when given,
    rows get the accuracy loss against BPTT and the FoM.
    """
    full = arch.num_trainable
    rows = []
    for mode in [normalize_mode(m) for m in modes]:
        base = cost_row(arch, T, full, mode, T, batch_size, sparsity, classifier_sparsity)
        base_acc = None if accuracies is None else accuracies.get((T, full, mode))
        for k in ks:
            for n in ns:
                rep = costmodel.normalize(cost_row(arch, k, n, mode, T, batch_size, sparsity, classifier_sparsity), base)
                row = _flatten(rep)
                if accuracies is not None and (k, n, mode) in accuracies and base_acc is not None:
                    acc = accuracies[(k, n, mode)]
                    row["accuracy"] = acc
                    row["accuracy_loss"] = base_acc - acc
                    r = rep.ratios
                    row["fom"] = costmodel.fom(base_acc - acc, r["memory"], r["memory_access"], r["additions"], r["macs"])
                rows.append(row)
    return rows


def _flatten(report):
    d = report.to_dict()
    ratios = d.pop("ratios")
    d.pop("fom")
    for name, v in ratios.items():
        d[f"ratio_{name}"] = v
    d.setdefault("accuracy", "")
    d.setdefault("accuracy_loss", "")
    d.setdefault("fom", "")
    return d


def write_csv(rows, path, columns=None):
    columns = columns or (list(rows[0].keys()) if rows else [])
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({c: (repr(v) if isinstance(v, float) else v) for c, v in r.items()})
    Path(path).write_text(buf.getvalue())


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if hasattr(o, "to_dict"):
        return o.to_dict()
    if hasattr(o, "tolist"):
        return o.tolist()
    raise TypeError(type(o))


def rank(rows):
    """Sort by FoM (smaller first), ties by smaller k then smaller n; flag the best row."""
    def key(r):
        f = r.get("fom")
        f = math.inf if f in ("", None) or (isinstance(f, float) and math.isnan(f)) else f
        return (f, r["k"], r["n"])

    ranked = sorted(rows, key=key)
    for i, r in enumerate(ranked):
        r["rank"] = i + 1
        r["best"] = int(i == 0 and r.get("fom") not in ("", None))
    return ranked


def _train_cell(arch, dataset, base_config, k, n, mode, harvest):
    cfg = base_config.replace(k=k, n=n, classifier_mode=mode)
    result = fit(arch, dataset, cfg)
    if dataset.test_x is not None:
        acc = accuracy(arch, result.plan, result.weights, dataset.test_x, dataset.test_y, cfg)
    else:
        acc = result.final_train_accuracy
    sparsity = harvest_sparsity(arch, result.plan, result.weights, dataset.train_x, cfg) if harvest else None
    return acc, sparsity


def run_sweep(arch, dataset, base_config, grid, modes=(TRAINABLE,), harvest=False, workers=None):
    """Train every ``(k, n)`` cell, join with cost estimates, rank by FoM.

    The BPTT cell ``(T, all layers)`` is the normalization baseline and is
    trained even if absent from ``grid`` (it then is not part of the table).
    A failing cell is reported with its error and the sweep continues.
    """
    T = base_config.T
    full = arch.num_trainable
    modes = [normalize_mode(m) for m in modes]
    cells = [(k, n, m) for m in modes for (k, n) in grid]
    needed = list(dict.fromkeys(cells + [(T, full, m) for m in modes]))
    workers = workers or worker_count()

    def job(cell):
        try:
            return cell, _train_cell(arch, dataset, base_config, *cell, harvest), None
        except Exception as e:  # reported per cell
            return cell, (float("nan"), None), f"{type(e).__name__}: {e}"

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(job, needed))
    else:
        outcomes = [job(c) for c in needed]
    results = {cell: (acc, sp, err) for cell, (acc, sp), err in outcomes}

    rows = []
    for mode in modes:
        base_acc, base_sp, _ = results[(T, full, mode)]
        layer_sp, cls_sp = base_sp if base_sp else (None, None)
        base_cost = cost_row(arch, T, full, mode, T, base_config.batch_size, layer_sp, cls_sp)
        for (k, n, m) in cells:
            if m != mode:
                continue
            acc, sp, err = results[(k, n, m)]
            layer_sp, cls_sp = sp if sp else (None, None)
            try:
                rep = costmodel.normalize(
                    cost_row(arch, k, n, m, T, base_config.batch_size, layer_sp, cls_sp), base_cost)
                row = _flatten(rep)
            except Exception as e:
                row = {"k": k, "n": n, "classifier_mode": m}
                err = err or f"{type(e).__name__}: {e}"
            row["accuracy"] = acc
            row["accuracy_loss"] = base_acc - acc
            if err is None and "ratio_memory" in row:
                row["fom"] = costmodel.fom(base_acc - acc, row["ratio_memory"], row["ratio_memory_access"],
                                           row["ratio_additions"], row["ratio_macs"])
            else:
                row["fom"] = float("nan")
            row["error"] = err or ""
            rows.append(row)
    return rank(rows)


SWEEP_COLUMNS = ["rank", "best"] + COST_COLUMNS + ["error"]
