"""Leaky integrate-and-fire dynamics with soft reset and a rectangular surrogate."""

from dataclasses import dataclass

import numpy as np

from ._kernels import kernels
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class LifParams:
    """LIF constants.

    ``tau`` is the per-step multiplicative leak, ``u_th`` the firing threshold,
    ``theta`` the amount subtracted after a spike and ``a`` the width of the
    surrogate-gradient window. ``theta`` defaults to ``u_th``.
    """

    tau: float = 0.9
    u_th: float = 0.5
    theta: float | None = None
    a: float = 0.5

    def __post_init__(self):
        if self.theta is None:
            object.__setattr__(self, "theta", self.u_th)
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must lie in [0, 1], got {self.tau}")
        if not self.u_th > 0:
            raise ConfigError(f"u_th must be positive, got {self.u_th}")
        if not self.a > 0:
            raise ConfigError(f"surrogate width a must be positive, got {self.a}")


@dataclass(frozen=True)
class LayerState:
    u: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        if self.u.shape != self.s.shape:
            raise ShapeError(f"u{self.u.shape} and s{self.s.shape} differ")


def reset_state(shape, dtype=np.float64):
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    return LayerState(np.zeros(shape, dtype=dtype), np.zeros(shape, dtype=dtype))


def lif_step(prev, synaptic_input, params, layer=None):
    """Advance one time step.

    The reset term uses the spike emitted at the *previous* step, and a
    neuron fires only when its potential is strictly above threshold.
    """
    synaptic_input = np.asarray(synaptic_input, dtype=prev.u.dtype)
    if synaptic_input.shape != prev.u.shape:
        raise ShapeError(
            f"synaptic input {synaptic_input.shape} does not match state {prev.u.shape}",
            layer=layer,
        )
    u, s = kernels.lif_forward(prev.u, prev.s, synaptic_input, params.tau, params.theta, params.u_th)
    return LayerState(u, s)


def surrogate_grad(u, params):
    """Rectangular window: ``1/a`` where ``|u - u_th| < a/2``, else 0."""
    if not params.a > 0:
        raise ConfigError(f"surrogate width a must be positive, got {params.a}")
    u = np.asarray(u)
    dtype = u.dtype if np.issubdtype(u.dtype, np.floating) else np.float64
    return np.where(np.abs(u - params.u_th) < 0.5 * params.a, 1.0 / params.a, 0.0).astype(dtype)
