"""Spiking-network training with temporally-truncated local BPTT."""

import os

# TTLBP_THREADS also caps the BLAS pools; this only works before numpy loads them.
if os.environ.get("TTLBP_THREADS", "").isdigit():
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["TTLBP_THREADS"])

from ._kernels import BACKEND
from .neuron import LayerState, LifParams, lif_step, reset_state, surrogate_grad
from .topology import (
    BlockPlan,
    LayerSpec,
    NetworkArch,
    WeightSet,
    attach_classifiers,
    infer_shapes,
    init_weights,
    load_arch,
    partition_blocks,
)

__version__ = "0.1.0"
