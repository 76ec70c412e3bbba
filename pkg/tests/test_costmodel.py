import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ttlbp import costmodel as cm
from ttlbp.errors import ConfigError, DataError
from ttlbp.topology import FROZEN_RANDOM, TRAINABLE, LayerSpec, NetworkArch, load_arch, partition_blocks


def inputs(arch, n, k=1, T=20, batch=128, mode=TRAINABLE, **kw):
    return cm.CostInputs(arch, partition_blocks(arch, n, mode), k, T, batch, **kw)


@pytest.fixture
def fc42():
    return NetworkArch((1, 1, 4), (LayerSpec("fc", 2),), 2)


@pytest.fixture
def lenet1():
    return load_arch("lenet1")


class TestMemory:
    def test_bptt_graph_term_linear(self, lenet1):
        a = inputs(lenet1, 4, k=10)
        b = inputs(lenet1, 4, k=5)
        base = cm.num_trainable_params(a)
        assert cm.memory_cost(b, cm.BPTT) - base == (cm.memory_cost(a, cm.BPTT) - base) / 2

    def test_local_at_k1(self, lenet1):
        i = inputs(lenet1, 1, k=1, workspace=7)
        assert cm.memory_cost(i) == cm.local_graph_cost(i) + cm.num_trainable_params(i) + 7

    @pytest.mark.parametrize("n", [1, 2])
    def test_local_below_bptt_constant_gap(self, lenet1, n):
        gaps = []
        for k in (1, 2, 5, 10, 20):
            i = inputs(lenet1, n, k=k)
            gaps.append(cm.memory_cost(i, cm.BPTT) - cm.memory_cost(i, cm.LOCAL))
        assert min(gaps) > 0 and len(set(gaps)) == 1

    def test_single_block_local_equals_bptt(self, lenet1):
        i = inputs(lenet1, 4, k=7)
        assert cm.memory_cost(i, cm.LOCAL) == cm.memory_cost(i, cm.BPTT)

    def test_bad_mode(self, lenet1):
        with pytest.raises(ConfigError):
            cm.memory_cost(inputs(lenet1, 1), "gpu")


class TestAccess:
    def test_forward_hand_count(self, fc42):
        i = inputs(fc42, 1, batch=1)
        assert cm.mem_access_forward(i) == (16, 4)

    def test_batch_scales_state_terms(self, fc42):
        r1, w1 = cm.mem_access_forward(inputs(fc42, 1, batch=1))
        r2, w2 = cm.mem_access_forward(inputs(fc42, 1, batch=2))
        # |W| + |W_c| = 12 fixed, |U| + |U_c| = 4 doubles
        assert (r1, r2) == (12 + 4, 12 + 8)
        assert w2 == 2 * w1

    def test_backward_hand_count_two_layer_block(self):
        arch = NetworkArch((1, 1, 3), (LayerSpec("fc", 4), LayerSpec("fc", 2)), 2)
        i = inputs(arch, 2, batch=1)
        w1, u1, w2, u2, wc, uc = 12, 4, 8, 2, 4, 2
        mid_r = (w1 + 2 * u1) + (w2 + 2 * u2) + w2 + 2 * wc + 3 * uc
        end_r = w2 + u1 + wc
        wr = (w1 + u1) + (w2 + u2) + wc + uc
        assert cm.mem_access_backward(i, "mid") == (mid_r, wr)
        assert cm.mem_access_backward(i, "end") == (end_r, wr)

    @pytest.mark.parametrize("name", ["lenet1", "lenet2", "alexnet"])
    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_end_reads_below_mid(self, name, n):
        i = inputs(load_arch(name), n)
        assert cm.mem_access_backward(i, "end")[0] < cm.mem_access_backward(i, "mid")[0]

    def test_bad_position(self, fc42):
        with pytest.raises(ConfigError):
            cm.mem_access_backward(inputs(fc42, 1), "start")

    def test_k1_every_step_is_end(self, lenet1):
        i = inputs(lenet1, 1, k=1, T=5)
        r = cm.estimate(i)
        per_step = r.reads_forward + r.writes_forward + r.reads_backward_end + r.writes_backward_end
        assert r.memory_access_total == 5 * per_step


class TestArithmetic:
    def test_zero_sparsity(self, lenet1):
        i = inputs(lenet1, 2, sparsity=[0.0] * 6, classifier_sparsity=0.0)
        fwd, bwd = cm.additions(i)
        assert fwd == 0
        assert bwd == sum(2 * l.u for l in i.layers) + sum(2 * c.u for c in i.classifiers)

    def test_dense_fc(self, fc42):
        fwd, _ = cm.additions(inputs(fc42, 1, batch=1, sparsity=[1.0], classifier_sparsity=0.0))
        assert fwd == 8

    def test_single_layer_block_macs(self, fc42):
        i = inputs(fc42, 1, batch=3)
        c = i.classifiers[0]
        assert cm.macs(i) == c.w * c.u // 2

    @pytest.mark.parametrize("name,target,tol", [("lenet1", 0.28, 0.05), ("lenet2", 0.0, 0.01), ("alexnet", 0.0, 0.01)])
    def test_lbp1_mac_ratio(self, name, target, tol):
        arch = load_arch(name)
        bp = cm.macs(inputs(arch, arch.num_trainable))
        assert abs(cm.macs(inputs(arch, 1)) / bp - target) <= tol

    def test_macs_invariant(self, lenet1):
        ref = cm.macs(inputs(lenet1, 2))
        for k, mode, alpha in itertools.product([1, 3, 20], [TRAINABLE, FROZEN_RANDOM], [0.0, 0.5, 1.0]):
            assert cm.macs(inputs(lenet1, 2, k=k, mode=mode, sparsity=[alpha] * 6, classifier_sparsity=alpha)) == ref

    @pytest.mark.parametrize("n", [1, 2, 4])
    def test_random_never_costs_more(self, lenet1, n):
        t = cm.estimate(inputs(lenet1, n, k=5))
        r = cm.estimate(inputs(lenet1, n, k=5, mode=FROZEN_RANDOM))
        for field in ("memory_cost", "memory_access_total", "additions_total", "macs_total",
                      "reads_forward", "reads_backward_mid", "reads_backward_end", "writes_backward_mid"):
            assert getattr(r, field) <= getattr(t, field)

    def test_sparsity_validation(self, lenet1):
        with pytest.raises(DataError):
            inputs(lenet1, 1, sparsity=[1.5] + [0.2] * 5)
        with pytest.raises(DataError):
            inputs(lenet1, 1, sparsity=[0.2] * 3)


class TestFom:
    def test_baseline(self):
        assert cm.fom(0, 1, 1, 1, 1) == 1.0

    def test_example(self):
        assert cm.fom(0.02, 0.2, 0.6, 1.0, 0.01) == pytest.approx(0.4725)

    @given(st.lists(st.floats(0, 10), min_size=5, max_size=5), st.integers(0, 4), st.floats(1e-3, 1))
    def test_monotone(self, args, i, bump):
        hi = list(args)
        hi[i] += bump
        assert cm.fom(*hi) > cm.fom(*args)


class TestEstimate:
    def test_baseline_normalizes_to_one(self, lenet1):
        base = cm.estimate(inputs(lenet1, 4, k=20))
        r = cm.normalize(cm.estimate(inputs(lenet1, 4, k=20)), base)
        assert all(v == 1.0 for v in r.ratios.values())

    def test_interval_schedule(self, lenet1):
        i = inputs(lenet1, 2, k=8, T=20)
        r = cm.estimate(i)
        fwd = r.reads_forward + r.writes_forward
        mid = r.reads_backward_mid + r.writes_backward_mid
        end = r.reads_backward_end + r.writes_backward_end
        assert r.memory_access_total == 20 * fwd + (7 + 7 + 3) * mid + 3 * end
        assert cm.num_intervals(20, 8) == 3

    def test_memory_decreases_with_k(self, lenet1):
        mems = [cm.estimate(inputs(lenet1, 1, k=k)).memory_cost for k in (20, 10, 5, 2, 1)]
        assert all(a > b for a, b in zip(mems, mems[1:]))
