"""Brute-force gradient oracle by forward-mode unrolling.

Every synaptic operator is expanded into an explicit dense matrix built by
index enumeration, and the derivative of every state with respect to every
weight is carried forward through the unrolled graph step by step. No
backward recursion is involved, so agreement with the engine is a real
check on the potential-error equations.

Truncation and block isolation are applied as stop-gradients: state
tangents are zeroed at the start of each interval, and the input of a
block's first layer is treated as a constant.
"""

import numpy as np

from ..errors import OracleSizeError
from ..topology import AVGPOOL, CONV, FC, infer_shapes, input_shapes
from .core import GradSet

MAX_LAYERS = 3
MAX_STEPS = 6
MAX_NEURONS = 64
MAX_BATCH = 4


def _dense_operator(spec, in_shape, out_shape):
    """Return ``(basis, fixed)``: basis[p] is the 0/1 matrix multiplying weight p,
    ``fixed`` the constant matrix of a weightless layer."""
    n_in = int(np.prod(in_shape))
    n_out = int(np.prod(out_shape))
    if spec.kind == FC:
        basis = np.zeros((n_out * n_in, n_out, n_in))
        for o in range(n_out):
            for i in range(n_in):
                basis[o * n_in + i, o, i] = 1.0
        return basis, None
    ci_n, h, w = in_shape
    co_n, ho, wo = out_shape
    k, st = spec.kernel, spec.stride
    if spec.kind == AVGPOOL:
        fixed = np.zeros((n_out, n_in))
        for c in range(co_n):
            for oi in range(ho):
                for oj in range(wo):
                    for ki in range(k):
                        for kj in range(k):
                            fixed[(c * ho + oi) * wo + oj, (c * h + oi * st + ki) * w + oj * st + kj] = 1.0 / (k * k)
        return None, fixed
    pad = spec.padding
    basis = np.zeros((co_n * ci_n * k * k, n_out, n_in))
    for co in range(co_n):
        for ci in range(ci_n):
            for ki in range(k):
                for kj in range(k):
                    p = ((co * ci_n + ci) * k + ki) * k + kj
                    for oi in range(ho):
                        for oj in range(wo):
                            ii, jj = oi * st + ki - pad, oj * st + kj - pad
                            if 0 <= ii < h and 0 <= jj < w:
                                basis[p, (co * ho + oi) * wo + oj, (ci * h + ii) * w + jj] = 1.0
    return basis, None


def _check_size(arch, inputs):
    shapes = infer_shapes(arch)
    if (len(arch.layers) > MAX_LAYERS or inputs.shape[0] > MAX_STEPS or inputs.shape[1] > MAX_BATCH
            or max(int(np.prod(s)) for s in shapes) > MAX_NEURONS):
        raise OracleSizeError(
            f"oracle limited to <= {MAX_LAYERS} layers, T <= {MAX_STEPS}, batch <= {MAX_BATCH}, "
            f"<= {MAX_NEURONS} neurons per layer"
        )


def oracle_bptt_grad(arch, weights, plan, inputs, labels, params, k, masks=None):
    """Per-interval gradients of the summed block losses.

    ``masks`` is an optional list (one entry per interval) of dropout mask
    lists as produced by ``make_dropout_masks``.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    _check_size(arch, inputs)
    T, B = inputs.shape[:2]
    L = len(arch.layers)
    shapes = infer_shapes(arch)
    in_shapes = input_shapes(arch)
    sizes = [int(np.prod(s)) for s in shapes]
    nc = arch.num_classes

    # global parameter layout
    offsets, total = {}, 0
    for l, w in enumerate(weights.layers):
        if w is not None:
            offsets[("W", l)] = (total, total + w.size)
            total += w.size
    for b, w in enumerate(weights.classifiers):
        offsets[("Wc", b)] = (total, total + w.size)
        total += w.size

    ops = []
    for l, spec in enumerate(arch.layers):
        basis, fixed = _dense_operator(spec, in_shapes[l], shapes[l])
        if basis is not None:
            dense = np.tensordot(weights.layers[l].reshape(-1), basis, axes=1)
        else:
            dense = fixed
        ops.append((dense, basis))
    cls_ops = []
    for b, last in enumerate(plan.classifier_at):
        basis, _ = _dense_operator(FcShim, (sizes[last],), (nc,))
        cls_ops.append((weights.classifiers[b].astype(np.float64), basis))

    first_of_block = {r.start for r in plan.blocks}
    top_of = {last: b for b, last in enumerate(plan.classifier_at)}
    y = np.zeros((B, nc))
    y[np.arange(B), np.asarray(labels)] = 1.0

    def sg(u):
        return np.where(np.abs(u - params.u_th) < 0.5 * params.a, 1.0 / params.a, 0.0)

    u = [np.zeros((B, n)) for n in sizes]
    s = [np.zeros((B, n)) for n in sizes]
    uc = [np.zeros((B, nc)) for _ in plan.blocks]
    sc = [np.zeros((B, nc)) for _ in plan.blocks]
    results = []
    for i, start in enumerate(range(0, T, k)):
        stop = min(start + k, T)
        mask_i = (masks[i] if masks is not None else None) or [None] * L
        mask_i = [None if m is None else m.reshape(B, -1) for m in mask_i]
        Ju = [np.zeros((B, n, total)) for n in sizes]
        Js = [np.zeros((B, n, total)) for n in sizes]
        Juc = [np.zeros((B, nc, total)) for _ in plan.blocks]
        Jsc = [np.zeros((B, nc, total)) for _ in plan.blocks]
        count = [np.zeros((B, nc)) for _ in plan.blocks]
        Jcount = [np.zeros((B, nc, total)) for _ in plan.blocks]
        for t in range(start, stop):
            x = inputs[t].reshape(B, -1)
            Jx = np.zeros((B, x.shape[1], total))
            for l in range(L):
                dense, basis = ops[l]
                if l in first_of_block:
                    Jx = np.zeros_like(Jx)
                cur = x @ dense.T
                Jcur = np.einsum("oi,bip->bop", dense, Jx)
                if basis is not None:
                    lo, hi = offsets[("W", l)]
                    Jcur[:, :, lo:hi] += np.einsum("poi,bi->bop", basis, x)
                u_new = params.tau * u[l] + cur - params.theta * s[l]
                Ju[l] = params.tau * Ju[l] + Jcur - params.theta * Js[l]
                u[l] = u_new
                s[l] = (u_new > params.u_th).astype(np.float64)
                Js[l] = sg(u_new)[:, :, None] * Ju[l]
                x, Jx = s[l], Js[l]
                if mask_i[l] is not None:
                    x = x * mask_i[l]
                    Jx = Jx * mask_i[l][:, :, None]
                if l in top_of:
                    b = top_of[l]
                    wc, cbasis = cls_ops[b]
                    cur = x @ wc.T
                    Jcur = np.einsum("oi,bip->bop", wc, Jx)
                    lo, hi = offsets[("Wc", b)]
                    Jcur[:, :, lo:hi] += np.einsum("poi,bi->bop", cbasis, x)
                    uc_new = params.tau * uc[b] + cur - params.theta * sc[b]
                    Juc[b] = params.tau * Juc[b] + Jcur - params.theta * Jsc[b]
                    uc[b] = uc_new
                    sc[b] = (uc_new > params.u_th).astype(np.float64)
                    Jsc[b] = sg(uc_new)[:, :, None] * Juc[b]
                    count[b] += sc[b]
                    Jcount[b] += Jsc[b]
        klen = stop - start
        grad = np.zeros(total)
        for b in range(plan.num_blocks):
            rate = count[b] / klen
            # d/dθ of mean_batch (1/nc) Σ_i (y - rate)^2
            coeff = -(2.0 / nc) * (y - rate) / klen / B
            grad += np.einsum("bi,bip->p", coeff, Jcount[b])
        results.append(_unflatten(grad, weights, offsets))
    return results


class FcShim:
    kind = FC


def _unflatten(grad, weights, offsets):
    layers = []
    for l, w in enumerate(weights.layers):
        if w is None:
            layers.append(None)
        else:
            lo, hi = offsets[("W", l)]
            layers.append(grad[lo:hi].reshape(w.shape))
    classifiers = []
    for b, w in enumerate(weights.classifiers):
        lo, hi = offsets[("Wc", b)]
        classifiers.append(None if weights.frozen[b] else grad[lo:hi].reshape(w.shape))
    return GradSet(layers, classifiers)
