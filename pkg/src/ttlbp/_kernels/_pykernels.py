"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` that performs the same
floating-point operations in the same order, so both backends give
bit-identical results.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def lif_forward(u, s, syn, tau, theta, u_th):
    u_new = tau * u + syn - theta * s
    s_new = (u_new > u_th).astype(u.dtype)
    return u_new, s_new


def lif_backward(spatial, gamma_next, u, tau, theta, u_th, a):
    """Potential error for one step given the spatial part of the spike error."""
    delta = spatial - theta * gamma_next
    sg = np.where(np.abs(u - u_th) < 0.5 * a, 1.0 / a, 0.0).astype(u.dtype)
    return delta * sg + tau * gamma_next


def _out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def im2col(x, k, stride, pad):
    b, c, h, w = x.shape
    ho, wo = _out_size(h, k, stride, pad), _out_size(w, k, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # win: [b, c, ho, wo, k, k] -> [b, c, k, k, ho, wo]
    cols = win.transpose(0, 1, 4, 5, 2, 3)
    return np.ascontiguousarray(cols).reshape(b, c * k * k, ho * wo)


def col2im(cols, x_shape, k, stride, pad):
    b, c, h, w = x_shape
    ho, wo = _out_size(h, k, stride, pad), _out_size(w, k, stride, pad)
    cols = cols.reshape(b, c, k, k, ho, wo)
    out = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for ki in range(k):
        for kj in range(k):
            out[:, :, ki:ki + stride * (ho - 1) + 1:stride, kj:kj + stride * (wo - 1) + 1:stride] += cols[:, :, ki, kj]
    if pad:
        out = out[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(out)


def avgpool_forward(x, k, stride):
    b, c, h, w = x.shape
    ho, wo = _out_size(h, k, stride, 0), _out_size(w, k, stride, 0)
    acc = np.zeros((b, c, ho, wo), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            acc += x[:, :, ki:ki + stride * (ho - 1) + 1:stride, kj:kj + stride * (wo - 1) + 1:stride]
    return acc * (1.0 / (k * k))


def avgpool_backward(g, x_shape, k, stride):
    b, c, h, w = x_shape
    ho, wo = g.shape[2], g.shape[3]
    gs = g * (1.0 / (k * k))
    out = np.zeros(x_shape, dtype=g.dtype)
    for ki in range(k):
        for kj in range(k):
            out[:, :, ki:ki + stride * (ho - 1) + 1:stride, kj:kj + stride * (wo - 1) + 1:stride] += gs
    return out
