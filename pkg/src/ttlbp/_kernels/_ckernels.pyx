# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_pykernels``.

Loop orders mirror the numpy versions so that accumulations happen in the
same sequence per output element; results are bit-identical.
"""

import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.math cimport fabs

cnp.import_array()


def lif_forward(const floating[::1] u, const floating[::1] s, const floating[::1] syn,
                double tau, double theta, double u_th):
    cdef Py_ssize_t i, n = u.shape[0]
    cdef floating tau_f = tau, theta_f = theta, uth_f = u_th, v
    dtype = np.float64 if floating is double else np.float32
    u_out = np.empty(n, dtype=dtype)
    s_out = np.empty(n, dtype=dtype)
    cdef floating[::1] uo = u_out
    cdef floating[::1] so = s_out
    with nogil:
        for i in range(n):
            v = tau_f * u[i] + syn[i] - theta_f * s[i]
            uo[i] = v
            so[i] = 1 if v > uth_f else 0
    return u_out, s_out


def lif_backward(const floating[::1] spatial, const floating[::1] gamma_next, const floating[::1] u,
                 double tau, double theta, double u_th, double a):
    cdef Py_ssize_t i, n = u.shape[0]
    cdef floating tau_f = tau, theta_f = theta, uth_f = u_th
    cdef floating half = 0.5 * a, inv = 1.0 / a, delta, sg
    dtype = np.float64 if floating is double else np.float32
    out = np.empty(n, dtype=dtype)
    cdef floating[::1] g = out
    with nogil:
        for i in range(n):
            delta = spatial[i] - theta_f * gamma_next[i]
            if fabs(u[i] - uth_f) < half:
                sg = inv
            else:
                sg = 0
            g[i] = delta * sg + tau_f * gamma_next[i]
    return out


def im2col(const floating[:, :, :, ::1] x, int k, int stride, int pad):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    cdef Py_ssize_t bi, ci, ki, kj, oi, oj, row, ii, jj
    dtype = np.float64 if floating is double else np.float32
    out = np.zeros((b, c * k * k, ho * wo), dtype=dtype)
    cdef floating[:, :, ::1] cols = out
    with nogil:
        for bi in range(b):
            for ci in range(c):
                for ki in range(k):
                    for kj in range(k):
                        row = (ci * k + ki) * k + kj
                        for oi in range(ho):
                            ii = oi * stride + ki - pad
                            if ii < 0 or ii >= h:
                                continue
                            for oj in range(wo):
                                jj = oj * stride + kj - pad
                                if jj < 0 or jj >= w:
                                    continue
                                cols[bi, row, oi * wo + oj] = x[bi, ci, ii, jj]
    return out


def col2im(const floating[:, :, ::1] cols, tuple x_shape, int k, int stride, int pad):
    cdef Py_ssize_t b = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    cdef Py_ssize_t bi, ci, ki, kj, oi, oj, row, ii, jj
    dtype = np.float64 if floating is double else np.float32
    out = np.zeros((b, c, h, w), dtype=dtype)
    cdef floating[:, :, :, ::1] x = out
    with nogil:
        for bi in range(b):
            for ci in range(c):
                for ki in range(k):
                    for kj in range(k):
                        row = (ci * k + ki) * k + kj
                        for oi in range(ho):
                            ii = oi * stride + ki - pad
                            if ii < 0 or ii >= h:
                                continue
                            for oj in range(wo):
                                jj = oj * stride + kj - pad
                                if jj < 0 or jj >= w:
                                    continue
                                x[bi, ci, ii, jj] += cols[bi, row, oi * wo + oj]
    return out


def avgpool_forward(const floating[:, :, :, ::1] x, int k, int stride):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h - k) // stride + 1
    cdef Py_ssize_t wo = (w - k) // stride + 1
    cdef Py_ssize_t bi, ci, ki, kj, oi, oj
    cdef floating scale = 1.0 / (k * k)
    dtype = np.float64 if floating is double else np.float32
    out = np.zeros((b, c, ho, wo), dtype=dtype)
    cdef floating[:, :, :, ::1] y = out
    with nogil:
        for bi in range(b):
            for ci in range(c):
                for ki in range(k):
                    for kj in range(k):
                        for oi in range(ho):
                            for oj in range(wo):
                                y[bi, ci, oi, oj] += x[bi, ci, oi * stride + ki, oj * stride + kj]
                for oi in range(ho):
                    for oj in range(wo):
                        y[bi, ci, oi, oj] = y[bi, ci, oi, oj] * scale
    return out


def avgpool_backward(const floating[:, :, :, ::1] g, tuple x_shape, int k, int stride):
    cdef Py_ssize_t b = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t ho = g.shape[2], wo = g.shape[3]
    cdef Py_ssize_t bi, ci, ki, kj, oi, oj
    cdef floating scale = 1.0 / (k * k)
    dtype = np.float64 if floating is double else np.float32
    out = np.zeros((b, c, h, w), dtype=dtype)
    cdef floating[:, :, :, ::1] x = out
    with nogil:
        for bi in range(b):
            for ci in range(c):
                for ki in range(k):
                    for kj in range(k):
                        for oi in range(ho):
                            for oj in range(wo):
                                x[bi, ci, oi * stride + ki, oj * stride + kj] += g[bi, ci, oi, oj] * scale
    return out
