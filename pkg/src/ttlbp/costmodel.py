"""Analytical training-cost model: memory footprint, memory traffic, additions, MACs.

All counts are element counts (memory, traffic) or operation counts per
batch iteration; multiply by bytes per element externally.

Conventions
-----------
* ``|W|`` of a layer is its weight count (0 for average pooling), ``|U|`` is
  batch size times neuron count.
* ``M`` (additions without sparsity) is ``|W||U|/C_out`` for conv,
  ``|W||U|/N`` for fc and 0 for average pooling, whose backward pass is a
  fixed rescaling.
* One computational-graph step holds, per layer and classifier, two state
  sets (u, s), two intermediate sets (synaptic input, pre-threshold
  potential) and one gradient set: ``5 |U|`` elements.
* Frozen random classifiers remove every term involving classifier weights.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .topology import AVGPOOL, CONV, FROZEN_RANDOM, infer_shapes, normalize_mode, weight_shape

GRAPH_SETS_PER_LAYER = 5
BPTT, LOCAL = "bptt", "local"


@dataclass(frozen=True)
class LayerCost:
    w: int       # |W|
    u: int       # |U| = batch * neurons
    m: int       # additions without sparsity
    alpha: float  # input sparsity (fraction of non-zero inputs)


@dataclass
class CostInputs:
    arch: object
    plan: object
    k: int
    T: int
    batch_size: int
    sparsity: list | None = None
    classifier_sparsity: list | float | None = None
    workspace: float = 0.0

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.T < 1 or self.batch_size < 1:
            raise ConfigError("T and batch_size must be positive")
        self.mode = normalize_mode(self.plan.classifier_mode)
        nl = len(self.arch.layers)
        alphas = default_sparsity(self.arch) if self.sparsity is None else list(self.sparsity)
        if len(alphas) != nl:
            raise DataError(f"need one sparsity per layer ({nl}), got {len(alphas)}")
        cs = self.classifier_sparsity
        if cs is None:
            cs = [DEFAULT_SPIKE_SPARSITY] * self.plan.num_blocks
        elif np.isscalar(cs):
            cs = [float(cs)] * self.plan.num_blocks
        for a in list(alphas) + list(cs):
            if not 0.0 <= a <= 1.0:
                raise DataError(f"sparsity {a} outside [0, 1]")
        self.layers = _layer_costs(self.arch, self.batch_size, alphas)
        shapes = infer_shapes(self.arch)
        nc = self.arch.num_classes
        self.classifiers = []
        for b, last in enumerate(self.plan.classifier_at):
            w = nc * int(np.prod(shapes[last]))
            u = self.batch_size * nc
            self.classifiers.append(LayerCost(w, u, w * u // nc, float(cs[b])))

    @property
    def random(self):
        return self.mode == FROZEN_RANDOM

    def block_layers(self, b):
        return [self.layers[l] for l in self.plan.blocks[b]]


DEFAULT_SPIKE_SPARSITY = 0.2


def default_sparsity(arch):
    """Dense direct-encoded input to the first layer, 20% spike density elsewhere."""
    return [1.0] + [DEFAULT_SPIKE_SPARSITY] * (len(arch.layers) - 1)


def _layer_costs(arch, batch, alphas):
    shapes = infer_shapes(arch)
    out = []
    for l, spec in enumerate(arch.layers):
        neurons = int(np.prod(shapes[l]))
        u = batch * neurons
        ws = weight_shape(arch, l)
        w = 0 if ws is None else int(np.prod(ws))
        if spec.kind == AVGPOOL:
            m = 0
        elif spec.kind == CONV:
            m = w * u // spec.size
        else:
            m = w * u // neurons
        out.append(LayerCost(w, u, m, float(alphas[l])))
    return out


def _wc(inputs, c):
    return 0 if inputs.random else c.w


# ---- memory footprint -------------------------------------------------------

def graph_cost(inputs):
    """Elements held by one step of the full computational graph."""
    u = sum(l.u for l in inputs.layers) + sum(c.u for c in inputs.classifiers)
    return GRAPH_SETS_PER_LAYER * u


def local_graph_cost(inputs):
    """Largest single-block graph (block layers plus its classifier)."""
    return max(
        GRAPH_SETS_PER_LAYER * (sum(l.u for l in inputs.block_layers(b)) + inputs.classifiers[b].u)
        for b in range(inputs.plan.num_blocks)
    )


def num_trainable_params(inputs):
    n = sum(l.w for l in inputs.layers)
    if not inputs.random:
        n += sum(c.w for c in inputs.classifiers)
    return n


def memory_cost(inputs, mode=LOCAL):
    """Peak memory in elements for one truncation interval of length ``k``."""
    k = inputs.k
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    base = num_trainable_params(inputs) + inputs.workspace
    if mode == BPTT:
        return k * graph_cost(inputs) + base
    if mode == LOCAL:
        return (k - 1) * graph_cost(inputs) + local_graph_cost(inputs) + base
    raise ConfigError(f"unknown memory mode {mode!r}")


# ---- memory traffic (per time step, summed over blocks) ----------------------

def mem_access_forward(inputs):
    reads = writes = 0
    for b, c in enumerate(inputs.classifiers):
        layers = inputs.block_layers(b)
        reads += sum(l.w + l.u for l in layers) + _wc(inputs, c) + c.u
        writes += sum(l.u for l in layers) + c.u
    return reads, writes


def mem_access_backward(inputs, position="mid"):
    """Reads and writes for one backward step inside (``mid``) or at the end of an interval."""
    reads = writes = 0
    for b, c in enumerate(inputs.classifiers):
        layers = inputs.block_layers(b)
        wc = _wc(inputs, c)
        upper = sum(layers[i + 1].w for i in range(len(layers) - 1))
        if position == "mid":
            reads += sum(l.w + 2 * l.u for l in layers) + upper + 2 * wc + 3 * c.u
        elif position == "end":
            reads += upper + sum(layers[i].u for i in range(len(layers) - 1)) + wc
        else:
            raise ConfigError(f"unknown backward position {position!r}")
        writes += sum(l.w + l.u for l in layers) + wc + c.u
    return reads, writes


# ---- arithmetic (per time step) -----------------------------------------------

def additions(inputs):
    fwd = bwd = 0.0
    nb = inputs.batch_size
    for b, c in enumerate(inputs.classifiers):
        layers = inputs.block_layers(b)
        fwd += sum(l.alpha * l.m for l in layers) + c.alpha * c.m
        bwd += sum(2 * l.u + nb * l.alpha * l.w for l in layers) + 2 * c.u
        if not inputs.random:
            bwd += nb * c.alpha * c.w
    return fwd, bwd


def macs(inputs):
    total = 0
    for b, c in enumerate(inputs.classifiers):
        layers = inputs.block_layers(b)
        total += sum(layers[i + 1].m for i in range(len(layers) - 1)) + c.m
    return total


def fom(accuracy_loss, mc, ma, add, mac):
    """Accuracy loss plus the equally weighted mean of four normalized costs."""
    return accuracy_loss + 0.25 * (mc + ma + add + mac)


# ---- per-iteration report -----------------------------------------------------

@dataclass
class CostReport:
    k: int
    n: int
    classifier_mode: str
    T: int
    batch_size: int
    memory_cost: float
    reads_forward: int
    writes_forward: int
    reads_backward_mid: int
    writes_backward_mid: int
    reads_backward_end: int
    writes_backward_end: int
    additions_forward: float
    additions_backward: float
    macs_backward: int
    memory_access_total: int
    additions_total: float
    macs_total: int
    ratios: dict = field(default_factory=dict)
    fom: float | None = None

    def to_dict(self):
        return asdict(self)


def estimate(inputs):
    """Per-iteration totals over ``ceil(T/k)`` intervals.

    Each interval of length ``L`` costs ``L`` forward steps, ``L - 1``
    mid-interval backward steps and one interval-end backward step. The
    reduced interval-end reads need a block whose backward pass can start
    right after its own forward pass, so a single-block (end-to-end) plan
    pays mid-interval traffic at the interval end too.
    """
    rf, wf = mem_access_forward(inputs)
    rm, wm = mem_access_backward(inputs, "mid")
    if inputs.plan.num_blocks > 1:
        re_, we = mem_access_backward(inputs, "end")
    else:
        re_, we = rm, wm
    af, ab = additions(inputs)
    mac = macs(inputs)
    access = 0
    for start in range(0, inputs.T, inputs.k):
        length = min(inputs.k, inputs.T - start)
        access += length * (rf + wf) + (length - 1) * (rm + wm) + (re_ + we)
    return CostReport(
        k=inputs.k, n=inputs.plan.n, classifier_mode=inputs.mode, T=inputs.T, batch_size=inputs.batch_size,
        memory_cost=memory_cost(inputs, LOCAL),
        reads_forward=rf, writes_forward=wf,
        reads_backward_mid=rm, writes_backward_mid=wm,
        reads_backward_end=re_, writes_backward_end=we,
        additions_forward=af, additions_backward=ab, macs_backward=mac,
        memory_access_total=access,
        additions_total=inputs.T * (af + ab),
        macs_total=inputs.T * mac,
    )


NORMALIZED = (("memory", "memory_cost"), ("memory_access", "memory_access_total"),
              ("additions", "additions_total"), ("macs", "macs_total"))


def normalize(report, baseline):
    report.ratios = {name: getattr(report, attr) / getattr(baseline, attr) for name, attr in NORMALIZED}
    return report


def num_intervals(T, k):
    return math.ceil(T / k)
