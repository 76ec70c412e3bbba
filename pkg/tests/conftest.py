import numpy as np
import pytest

from ttlbp.neuron import LifParams
from ttlbp.topology import LayerSpec, NetworkArch, load_arch


@pytest.fixture
def toy_arch():
    """conv -> pool -> fc, small enough for the dense oracle."""
    return load_arch("toy")


@pytest.fixture
def fc_arch():
    return NetworkArch((1, 2, 2), (LayerSpec("fc", 5), LayerSpec("fc", 4), LayerSpec("fc", 3)), 3, "fc3")


@pytest.fixture
def wide_lif():
    # wide surrogate window so toy gradients are mostly nonzero
    return LifParams(tau=0.8, u_th=0.5, a=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def spikes(rng, shape, p=0.5):
    return (rng.random(shape) < p).astype(np.float64)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
