"""Plain end-to-end BPTT over the whole window, used as a reduction baseline.

No blocks and no truncation: one readout on the last layer, one backward
pass after ``T`` steps. At ``k = T`` with a single block, the truncated
local engine must reproduce these gradients bit for bit.
"""

import numpy as np

from .. import ops
from .._kernels import kernels
from ..topology import infer_shapes, input_shapes
from .core import GradSet, make_dropout_masks
from .optim import sgd_momentum_step


def bptt_reference_grads(arch, weights, inputs, labels, params, masks=None):
    """Gradients of the output-readout MSE loss by full-window BPTT.

    ``weights`` must come from a single-block plan (one classifier).
    """
    if len(weights.classifiers) != 1:
        raise ValueError("reference BPTT expects exactly one (output) classifier")
    T, B = inputs.shape[0], inputs.shape[1]
    L = len(arch.layers)
    masks = masks or [None] * L
    shapes = infer_shapes(arch)
    in_shapes = input_shapes(arch)
    wc = weights.classifiers[0]
    dtype = inputs.dtype

    u = [np.zeros((B,) + s, dtype) for s in shapes]
    s = [np.zeros((B,) + sh, dtype) for sh in shapes]
    uc = np.zeros((B, wc.shape[0]), dtype)
    sc = np.zeros_like(uc)
    hist_u, hist_cache, hist_uc, hist_cc = [], [], [], []
    spikes_c = np.zeros_like(uc)
    for t in range(T):
        x = inputs[t]
        us, caches = [], []
        for l in range(L):
            cur, cache = ops.forward(arch.layers[l], weights.layers[l], x)
            u[l], s[l] = kernels.lif_forward(u[l], s[l], cur, params.tau, params.theta, params.u_th)
            us.append(u[l])
            caches.append(cache)
            x = s[l] if masks[l] is None else s[l] * masks[l]
        cur_c, cache_c = ops.fc_forward(wc, x)
        uc, sc = kernels.lif_forward(uc, sc, cur_c, params.tau, params.theta, params.u_th)
        spikes_c = spikes_c + sc
        hist_u.append(us)
        hist_cache.append(caches)
        hist_uc.append(uc)
        hist_cc.append(cache_c)

    nc = wc.shape[0]
    y = np.zeros((B, nc), dtype)
    y[np.arange(B), np.asarray(labels)] = 1.0
    seed = (-(2.0 / (nc * T)) * (y - spikes_c / T)) / B

    dW = [None if w is None else np.zeros_like(w) for w in weights.layers]
    dWc = None if weights.frozen[0] else np.zeros_like(wc)
    g_next = [np.zeros_like(a) for a in u]
    gc_next = np.zeros_like(uc)
    for t in reversed(range(T)):
        gc = kernels.lif_backward(seed, gc_next, hist_uc[t], params.tau, params.theta, params.u_th, params.a)
        if dWc is not None:
            dWc += gc.T @ hist_cc[t]
        gc_next = gc
        err = (gc @ wc).reshape(hist_u[t][L - 1].shape)
        for l in reversed(range(L)):
            if masks[l] is not None:
                err = err * masks[l]
            g = kernels.lif_backward(err, g_next[l], hist_u[t][l], params.tau, params.theta, params.u_th, params.a)
            if dW[l] is not None:
                dW[l] += ops.weight_grad(arch.layers[l], g, hist_cache[t][l]).reshape(dW[l].shape)
            g_next[l] = g
            if l > 0:
                err = ops.backward_input(arch.layers[l], weights.layers[l], g, (B,) + in_shapes[l])
    return GradSet(dW, [dWc])


def bptt_reference_train_batch(inputs, labels, weights, arch, config, rng, lr=None):
    """Reference trainer step: one full-window gradient, one update."""
    inputs = inputs.astype(config.np_dtype, copy=False)
    masks = make_dropout_masks(arch, config.dropout_rate, rng, inputs.shape[1], config.np_dtype)
    g = bptt_reference_grads(arch, weights, inputs, labels, config.lif, masks)
    sgd_momentum_step(weights, g, config.learning_rate if lr is None else lr, config.momentum)
    return g
