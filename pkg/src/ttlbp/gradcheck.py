"""Engine-vs-oracle gradient checks on toy networks."""

from dataclasses import dataclass, field

import numpy as np

from .engine.config import TrainConfig
from .engine.core import classifier_seed_error, compute_loss, train_batch
from .engine.oracle import oracle_bptt_grad
from .neuron import LifParams
from .topology import TRAINABLE, init_weights, partition_blocks

TOLERANCE = 1e-8
# a wide surrogate window keeps enough toy gradients nonzero to be informative
GRADCHECK_LIF = LifParams(tau=0.8, u_th=0.5, a=1.0)


def rel_error(a, b):
    """max|a - b| / max|b| (plain max|a - b| when ``b`` is all zero)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    diff = float(np.max(np.abs(a - b))) if a.size else 0.0
    scale = float(np.max(np.abs(b))) if b.size else 0.0
    return diff / scale if scale > 0 else diff


@dataclass
class CellReport:
    k: int
    n: int
    max_rel_error: float
    worst: str  # "<array> interval <i>"
    nonzero: int
    per_array: list = field(default_factory=list)  # (interval, name, rel_error)

    def passed(self, tol=TOLERANCE):
        return self.max_rel_error <= tol


def toy_problem(arch, T, batch, seed, init_scale=2.0):
    rng = np.random.default_rng([seed, 11])
    x = (rng.random((T, batch) + tuple(arch.input_shape)) < 0.5).astype(np.float64)
    y = rng.integers(0, arch.num_classes, size=batch)
    return x, y


def check_cell(arch, x, y, k, n, params=GRADCHECK_LIF, seed=0, init_scale=2.0, mode=TRAINABLE):
    T = x.shape[0]
    cfg = TrainConfig(k=k, n=n, T=T, batch_size=x.shape[1], lif=params, seed=seed,
                      init_scale=init_scale, classifier_mode=mode)
    plan = partition_blocks(arch, n, mode)
    weights = init_weights(arch, plan, seed, init_scale)
    engine = train_batch(x, y, weights, arch, plan, cfg, update=False).grads
    oracle = oracle_bptt_grad(arch, weights, plan, x, y, params, k)
    worst, where, nonzero, per = 0.0, "", 0, []
    for i, (ge, go) in enumerate(zip(engine, oracle)):
        ref = dict(go.arrays())
        for name, arr in ge.arrays():
            err = rel_error(arr, ref[name])
            per.append((i, name, err))
            nonzero += int(np.count_nonzero(arr))
            if not where or err > worst:
                worst, where = err, f"{name} interval {i}"
    return CellReport(k, n, worst, where, nonzero, per)


def run_grid(arch, T=4, batch=2, seed=0, ks=None, ns=None, params=GRADCHECK_LIF, init_scale=2.0):
    ks = ks or sorted({1, 2, T})
    ns = ns or sorted({1, min(2, arch.num_trainable), arch.num_trainable})
    x, y = toy_problem(arch, T, batch, seed)
    return [check_cell(arch, x, y, k, n, params, seed, init_scale) for k in ks for n in ns]


def classifier_fd_check(instances=100, seed=0, step=1e-6):
    """Worst relative error of the analytic seed error against central differences."""
    rng = np.random.default_rng([seed, 13])
    worst = 0.0
    for _ in range(instances):
        k = int(rng.integers(1, 8))
        nc = int(rng.integers(2, 11))
        hist = rng.random((k, nc))
        target = int(rng.integers(0, nc))
        analytic = classifier_seed_error(hist, target, k)
        numeric = np.empty_like(hist)
        for idx in np.ndindex(hist.shape):
            hp, hm = hist.copy(), hist.copy()
            hp[idx] += step
            hm[idx] -= step
            numeric[idx] = (compute_loss(hp, target, k) - compute_loss(hm, target, k)) / (2 * step)
        worst = max(worst, rel_error(numeric, analytic))
    return worst
