"""Temporally-truncated local BPTT: forward, loss, backward and batch training."""

from dataclasses import dataclass, field

import numpy as np

from .. import ops
from .._kernels import kernels
from ..errors import ContractViolation, DataError, ShapeError
from ..neuron import LayerState, lif_step, reset_state
from ..topology import input_shapes, infer_shapes
from .optim import sgd_momentum_step


@dataclass
class NetState:
    layers: list
    classifiers: list


@dataclass
class StepRecord:
    """Everything the backward pass needs from one forward step."""

    u: list
    s: list
    out: list
    cache: list
    uc: list
    sc: list
    cache_c: list


@dataclass
class GradSet:
    layers: list
    classifiers: list

    def arrays(self):
        out = [(f"dW{i}", g) for i, g in enumerate(self.layers) if g is not None]
        out += [(f"dWc{b}", g) for b, g in enumerate(self.classifiers) if g is not None]
        return out


@dataclass
class OpCounter:
    """Exact tallies of synaptic additions issued by the forward pass."""

    layer_adds: list = field(default_factory=list)
    classifier_adds: list = field(default_factory=list)
    layer_input_density: list = field(default_factory=list)
    classifier_input_density: list = field(default_factory=list)
    steps: int = 0


def init_state(arch, plan, batch, dtype=np.float64):
    shapes = infer_shapes(arch)
    layers = [reset_state((batch,) + tuple(s), dtype) for s in shapes]
    classifiers = [reset_state((batch, arch.num_classes), dtype) for _ in plan.blocks]
    return NetState(layers, classifiers)


def make_dropout_masks(arch, rate, rng, batch, dtype=np.float64):
    """Inverted-dropout masks for conv/fc outputs; ``None`` where no mask applies.

    Sampled once per sample and reused for every step of an interval.
    """
    if rate == 0:
        return [None] * len(arch.layers)
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    masks = []
    for spec, shape in zip(arch.layers, infer_shapes(arch)):
        if not spec.trainable:
            masks.append(None)
            continue
        keep = rng.random((batch,) + tuple(shape)) >= rate
        masks.append(keep.astype(dtype) * (1.0 / (1.0 - rate)))
    return masks


def forward_step(states, weights, x_t, arch, plan, params, masks=None, counter=None):
    """Advance every layer and every block classifier by one step.

    ``x_t`` is the real-valued layer-0 input for this step. Returns the new
    state and the :class:`StepRecord` for the interval history.
    """
    expected = (x_t.shape[0],) + tuple(arch.input_shape)
    if x_t.shape != expected:
        raise ShapeError(f"input {x_t.shape} does not match {expected}", layer="input")
    masks = masks or [None] * len(arch.layers)
    block_top = {last: b for b, last in enumerate(plan.classifier_at)}
    rec = StepRecord([], [], [], [], [None] * plan.num_blocks, [None] * plan.num_blocks, [None] * plan.num_blocks)
    new_layers = []
    new_cls = list(states.classifiers)
    x = x_t
    for l, spec in enumerate(arch.layers):
        cur, cache = ops.forward(spec, weights.layers[l], x)
        if counter is not None:
            _tally(counter.layer_adds, counter.layer_input_density, l, x, spec, cache)
        st = lif_step(states.layers[l], cur, params, layer=l)
        out = st.s if masks[l] is None else st.s * masks[l]
        new_layers.append(st)
        rec.u.append(st.u)
        rec.s.append(st.s)
        rec.out.append(out)
        rec.cache.append(cache)
        if l in block_top:
            b = block_top[l]
            cur_c, cache_c = ops.fc_forward(weights.classifiers[b], out)
            if counter is not None:
                _tally(counter.classifier_adds, counter.classifier_input_density, b, out, None, cache_c,
                       fan_out=weights.classifiers[b].shape[0])
            sc = lif_step(states.classifiers[b], cur_c, params, layer=f"classifier{b}")
            new_cls[b] = sc
            rec.uc[b], rec.sc[b], rec.cache_c[b] = sc.u, sc.s, cache_c
        x = out
    if counter is not None:
        counter.steps += 1
    return NetState(new_layers, new_cls), rec


def _tally(adds, density, idx, x, spec, cache, fan_out=None):
    while len(adds) <= idx:
        adds.append(0)
        density.append(0.0)
    if spec is not None and spec.kind == "conv":
        n = int(np.count_nonzero(cache)) * spec.size
    elif spec is not None and spec.kind == "avgpool":
        n = 0
    else:
        n = int(np.count_nonzero(x)) * (fan_out if fan_out is not None else spec.size)
    adds[idx] += n
    density[idx] += float(np.count_nonzero(x)) / x.size


def compute_loss(classifier_history, target, k_actual):
    """Mean-squared error between interval firing rates and a one-hot target.

    ``classifier_history`` is ``[k, ..., N_c]``; ``target`` holds class
    indices for the leading batch dims. Averages over any batch dims.
    """
    rates, y = _rates_and_targets(classifier_history, target, k_actual)
    return float(np.mean(np.mean((y - rates) ** 2, axis=-1)))


def classifier_seed_error(classifier_history, target, k_actual):
    """dL/ds_c for every step of the interval (per sample, identical across steps)."""
    rates, y = _rates_and_targets(classifier_history, target, k_actual)
    nc = rates.shape[-1]
    d = -(2.0 / (nc * k_actual)) * (y - rates)
    return np.broadcast_to(d, classifier_history.shape).copy()


def _rates_and_targets(history, target, k_actual):
    history = np.asarray(history)
    if not np.issubdtype(history.dtype, np.floating):
        history = history.astype(np.float64)
    if history.shape[0] == 0 or k_actual < 1:
        raise ContractViolation("empty classifier history")
    if history.shape[0] != k_actual:
        raise ContractViolation(f"history covers {history.shape[0]} steps, expected {k_actual}")
    rates = history.sum(axis=0) / k_actual
    nc = rates.shape[-1]
    target = np.asarray(target)
    if target.shape != rates.shape[:-1]:
        raise ShapeError(f"targets {target.shape} do not match batch {rates.shape[:-1]}")
    if np.any(target < 0) or np.any(target >= nc):
        raise DataError(f"label out of range [0, {nc})")
    y = np.zeros_like(rates)
    np.put_along_axis(y, target[..., None].astype(np.intp), 1.0, axis=-1)
    return rates, y


def block_seeds(history, labels, plan, loss_weights=None):
    """Per-block losses and batch-mean spike-error seeds for the classifiers."""
    k = len(history)
    batch = labels.shape[0]
    losses, seeds = [], []
    for b in range(plan.num_blocks):
        hist = np.stack([rec.sc[b] for rec in history])
        losses.append(compute_loss(hist, labels, k))
        seed = classifier_seed_error(hist, labels, k)[0] / batch
        if loss_weights is not None:
            seed = seed * loss_weights[b]
        seeds.append(seed)
    return losses, seeds


def backward_interval(history, weights, arch, plan, params, seeds):
    """Potential-error recursion over one truncation interval.

    Runs from the last step of the interval to the first; within a step,
    each block is processed from its classifier down to its first layer.
    Potential errors past the interval end are zero, and nothing is
    propagated below a block's first layer. ``seeds[b]`` is dL/ds for block
    ``b``'s classifier, constant over the interval.
    """
    if not history or any(rec is None for rec in history):
        raise ContractViolation("incomplete forward history")
    in_shapes = input_shapes(arch)
    dtype = history[0].u[0].dtype
    dW = [None if w is None else np.zeros_like(w) for w in weights.layers]
    dWc = [None if frozen else np.zeros_like(w) for w, frozen in zip(weights.classifiers, weights.frozen)]
    g_next = [np.zeros_like(u) for u in history[0].u]
    gc_next = [np.zeros_like(u) for u in history[0].uc]
    tau, theta, uth, a = params.tau, params.theta, params.u_th, params.a
    masks = getattr(history, "masks", None) or [None] * len(arch.layers)
    for t in range(len(history) - 1, -1, -1):
        rec = history[t]
        for b in range(plan.num_blocks - 1, -1, -1):
            block = plan.blocks[b]
            gc = kernels.lif_backward(seeds[b].astype(dtype, copy=False), gc_next[b], rec.uc[b], tau, theta, uth, a)
            if dWc[b] is not None:
                dWc[b] += gc.T @ rec.cache_c[b]
            gc_next[b] = gc
            top = block[-1]
            spatial = (gc @ weights.classifiers[b]).reshape(rec.u[top].shape)
            for l in range(top, block.start - 1, -1):
                spec = arch.layers[l]
                if masks[l] is not None:
                    spatial = spatial * masks[l]
                g = kernels.lif_backward(spatial, g_next[l], rec.u[l], tau, theta, uth, a)
                if dW[l] is not None:
                    dW[l] += ops.weight_grad(spec, g, rec.cache[l]).reshape(dW[l].shape)
                g_next[l] = g
                if l > block.start:
                    spatial = ops.backward_input(spec, weights.layers[l], g, (g.shape[0],) + in_shapes[l])
    return GradSet(dW, dWc)


class History(list):
    """Interval history; carries the dropout masks used in its forward pass."""

    masks = None


def run_forward(states, weights, inputs, arch, plan, params, masks=None, counter=None):
    """Forward over ``inputs[t]`` for each step; returns the final state and history."""
    history = History()
    history.masks = masks
    for t in range(inputs.shape[0]):
        states, rec = forward_step(states, weights, inputs[t], arch, plan, params, masks, counter)
        history.append(rec)
    return states, history


@dataclass
class BatchResult:
    losses: np.ndarray          # [n_intervals, n_blocks]
    spike_counts: np.ndarray    # output classifier spikes summed over T, [B, N_c]
    potential_sums: np.ndarray  # output classifier potentials summed over T, [B, N_c]
    grads: list = field(default_factory=list)

    def predictions(self):
        return predict(self.spike_counts, self.potential_sums)


def predict(counts, usum):
    """Arg-max spike count; ties go to the larger summed membrane potential."""
    best = counts == counts.max(axis=1, keepdims=True)
    return np.argmax(np.where(best, usum, -np.inf), axis=1)


def _check_inputs(inputs, labels, arch, config):
    if inputs.ndim != 5 or inputs.shape[0] != config.T:
        raise ShapeError(f"inputs must be [T={config.T}, B, C, H, W], got {inputs.shape}", layer="input")
    if inputs.shape[2:] != tuple(arch.input_shape):
        raise ShapeError(f"input frames {inputs.shape[2:]} do not match {arch.input_shape}", layer="input")
    labels = np.asarray(labels)
    if labels.shape != (inputs.shape[1],):
        raise ShapeError(f"labels {labels.shape} do not match batch {inputs.shape[1]}")
    if np.any(labels < 0) or np.any(labels >= arch.num_classes):
        raise DataError(f"label out of range [0, {arch.num_classes})")
    return labels.astype(np.intp)


def train_batch(inputs, labels, weights, arch, plan, config, rng=None, lr=None,
                update=True, loss_weights=None, keep_grads=False, counter=None):
    """One batch iteration: per interval, forward k steps, backward, update once.

    Neuron states start from zero and persist across interval boundaries;
    only the gradient path is cut. With ``update=False`` weights stay fixed
    and the per-interval gradients are returned in ``grads``.
    """
    labels = _check_inputs(inputs, labels, arch, config)
    dtype = config.np_dtype
    inputs = inputs.astype(dtype, copy=False)
    params = config.lif
    lr = config.learning_rate if lr is None else lr
    if rng is None:
        rng = np.random.default_rng(config.seed)
    batch = inputs.shape[1]
    states = init_state(arch, plan, batch, dtype)
    losses, grads = [], []
    counts = np.zeros((batch, arch.num_classes))
    usum = np.zeros((batch, arch.num_classes))
    out_b = plan.num_blocks - 1
    for start, stop in config.intervals():
        masks = make_dropout_masks(arch, config.dropout_rate, rng, batch, dtype)
        states, history = run_forward(states, weights, inputs[start:stop], arch, plan, params, masks, counter)
        for rec in history:
            counts += rec.sc[out_b]
            usum += rec.uc[out_b]
        block_losses, seeds = block_seeds(history, labels, plan, loss_weights)
        g = backward_interval(history, weights, arch, plan, params, seeds)
        if not all(np.isfinite(arr).all() for _, arr in g.arrays()):
            raise FloatingPointError("non-finite gradient")
        losses.append(block_losses)
        if keep_grads or not update:
            grads.append(g)
        if update:
            sgd_momentum_step(weights, g, lr, config.momentum)
    return BatchResult(np.asarray(losses), counts, usum, grads)


def evaluate(inputs, labels, weights, arch, plan, config):
    """Forward-only pass over ``T`` steps; returns predicted classes."""
    dtype = config.np_dtype
    inputs = inputs.astype(dtype, copy=False)
    batch = inputs.shape[1]
    states = init_state(arch, plan, batch, dtype)
    counts = np.zeros((batch, arch.num_classes))
    usum = np.zeros((batch, arch.num_classes))
    out_b = plan.num_blocks - 1
    for t in range(inputs.shape[0]):
        states, rec = forward_step(states, weights, inputs[t], arch, plan, config.lif)
        counts += rec.sc[out_b]
        usum += rec.uc[out_b]
    return predict(counts, usum)
