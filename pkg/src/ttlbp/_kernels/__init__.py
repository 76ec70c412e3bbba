"""Hot-loop kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it was built at install time. Set
``TTLBP_BACKEND=python`` to force the numpy path, or ``TTLBP_BACKEND=c`` to
fail loudly when the extension is missing.
"""

import os

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_choice = os.environ.get("TTLBP_BACKEND", "auto").lower()
if _choice == "c" and _ckernels is None:
    raise ImportError("TTLBP_BACKEND=c but the compiled kernels are not built")
if _choice == "python" or _ckernels is None:
    BACKEND = "python"
else:
    BACKEND = "c"


def available_backends():
    return ["python"] + (["c"] if _ckernels is not None else [])


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    name = name or BACKEND
    if name == "python":
        return _pykernels
    if name == "c":
        if _ckernels is None:
            raise ImportError("compiled kernels are not built")
        return _CWrapper
    raise ValueError(f"unknown backend {name!r}")


class _CWrapper:
    """Adapts the compiled kernels to the n-d call signatures of ``_pykernels``."""

    @staticmethod
    def lif_forward(u, s, syn, tau, theta, u_th):
        shape = u.shape
        un, sn = _ckernels.lif_forward(
            np.ascontiguousarray(u).reshape(-1),
            np.ascontiguousarray(s, dtype=u.dtype).reshape(-1),
            np.ascontiguousarray(syn, dtype=u.dtype).reshape(-1),
            tau, theta, u_th,
        )
        return un.reshape(shape), sn.reshape(shape)

    @staticmethod
    def lif_backward(spatial, gamma_next, u, tau, theta, u_th, a):
        g = _ckernels.lif_backward(
            np.ascontiguousarray(spatial, dtype=u.dtype).reshape(-1),
            np.ascontiguousarray(gamma_next, dtype=u.dtype).reshape(-1),
            np.ascontiguousarray(u).reshape(-1),
            tau, theta, u_th, a,
        )
        return g.reshape(u.shape)

    @staticmethod
    def im2col(x, k, stride, pad):
        return _ckernels.im2col(np.ascontiguousarray(x), k, stride, pad)

    @staticmethod
    def col2im(cols, x_shape, k, stride, pad):
        return _ckernels.col2im(np.ascontiguousarray(cols), tuple(x_shape), k, stride, pad)

    @staticmethod
    def avgpool_forward(x, k, stride):
        return _ckernels.avgpool_forward(np.ascontiguousarray(x), k, stride)

    @staticmethod
    def avgpool_backward(g, x_shape, k, stride):
        return _ckernels.avgpool_backward(np.ascontiguousarray(g), tuple(x_shape), k, stride)


kernels = get_backend()
