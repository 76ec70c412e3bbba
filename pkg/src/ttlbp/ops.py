"""Synaptic operators (conv, average pool, fully connected) and their adjoints."""

import numpy as np

from ._kernels import kernels
from .topology import AVGPOOL, CONV, FC


def forward(spec, w, x):
    """Synaptic input for one layer. Returns ``(current, cache)``.

    ``cache`` is what the weight gradient needs later: the im2col matrix for
    conv layers and the flattened input for fc layers.
    """
    b = x.shape[0]
    if spec.kind == CONV:
        cols = kernels.im2col(x, spec.kernel, spec.stride, spec.padding)
        co = w.shape[0]
        out = np.matmul(w.reshape(co, -1), cols)
        ho = (x.shape[2] + 2 * spec.padding - spec.kernel) // spec.stride + 1
        wo = (x.shape[3] + 2 * spec.padding - spec.kernel) // spec.stride + 1
        return out.reshape(b, co, ho, wo), cols
    if spec.kind == AVGPOOL:
        return kernels.avgpool_forward(x, spec.kernel, spec.stride), None
    flat = x.reshape(b, -1)
    return flat @ w.T, flat


def backward_input(spec, w, g, x_shape):
    """Adjoint of :func:`forward` with respect to its input."""
    b = g.shape[0]
    if spec.kind == CONV:
        co = w.shape[0]
        dcols = np.matmul(w.reshape(co, -1).T, g.reshape(b, co, -1))
        return kernels.col2im(dcols, x_shape, spec.kernel, spec.stride, spec.padding)
    if spec.kind == AVGPOOL:
        return kernels.avgpool_backward(g, x_shape, spec.kernel, spec.stride)
    return (g @ w).reshape(x_shape)


def weight_grad(spec, g, cache):
    """Weight gradient for one step: potential error times presynaptic input."""
    if spec.kind == CONV:
        b, co = g.shape[0], g.shape[1]
        dw = np.tensordot(g.reshape(b, co, -1), cache, axes=([0, 2], [0, 2]))
        return dw.reshape(co, -1)
    if spec.kind == FC:
        return g.T @ cache
    return None


def fc_forward(w, x):
    flat = x.reshape(x.shape[0], -1)
    return flat @ w.T, flat
