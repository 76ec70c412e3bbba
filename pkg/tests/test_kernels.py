import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ttlbp._kernels import BACKEND, available_backends, get_backend

BACKENDS = available_backends()
py = get_backend("python")


def naive_conv(x, w, stride, pad):
    b, c, h, _ = x.shape
    co, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    out = np.zeros((b, co, ho, ho))
    for i in range(ho):
        for j in range(ho):
            patch = xp[:, :, i * stride:i * stride + k, j * stride:j * stride + k]
            out[:, :, i, j] = np.einsum("bckl,ockl->bo", patch, w)
    return out


def test_backend_selection():
    assert BACKEND in BACKENDS
    assert "python" in BACKENDS
    with pytest.raises(ValueError):
        get_backend("fortran")


class TestPythonKernels:
    @pytest.mark.parametrize("stride,pad", [(1, 0), (2, 1), (1, 2)])
    def test_im2col_matches_direct_convolution(self, rng, stride, pad):
        x = rng.standard_normal((2, 3, 7, 7))
        w = rng.standard_normal((4, 3, 3, 3))
        cols = py.im2col(x, 3, stride, pad)
        got = np.einsum("ok,bkp->bop", w.reshape(4, -1), cols)
        ref = naive_conv(x, w, stride, pad)
        np.testing.assert_allclose(got.reshape(ref.shape), ref, rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("stride,pad", [(1, 0), (2, 1)])
    def test_col2im_is_adjoint(self, rng, stride, pad):
        x = rng.standard_normal((2, 3, 6, 6))
        cols = py.im2col(x, 3, stride, pad)
        g = rng.standard_normal(cols.shape)
        lhs = np.sum(cols * g)
        rhs = np.sum(x * py.col2im(g, x.shape, 3, stride, pad))
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_avgpool(self, rng):
        x = rng.standard_normal((2, 3, 4, 4))
        out = py.avgpool_forward(x, 2, 2)
        np.testing.assert_allclose(out, x.reshape(2, 3, 2, 2, 2, 2).mean(axis=(3, 5)), rtol=1e-14)
        g = rng.standard_normal(out.shape)
        assert np.sum(out * g) == pytest.approx(np.sum(x * py.avgpool_backward(g, x.shape, 2, 2)), rel=1e-12)

    def test_lif_backward_formula(self):
        gam = py.lif_backward(np.array([1.0, 1.0]), np.array([2.0, 2.0]), np.array([0.5, 3.0]), 0.9, 0.5, 0.5, 0.5)
        # delta = 1 - 0.5*2 = 0; in-window: 0*2 + 0.9*2
        np.testing.assert_allclose(gam, [1.8, 1.8])


@pytest.mark.skipif("c" not in BACKENDS, reason="compiled kernels not built")
class TestBackendsAgree:
    """The compiled kernels follow the numpy accumulation order, so results are bitwise equal."""

    c = get_backend("c") if "c" in BACKENDS else None

    @pytest.mark.parametrize("dtype", [np.float64, np.float32])
    def test_lif(self, rng, dtype):
        u = rng.standard_normal((3, 4, 5)).astype(dtype)
        s = (rng.random(u.shape) < 0.3).astype(dtype)
        x = rng.standard_normal(u.shape).astype(dtype)
        for a, b in zip(py.lif_forward(u, s, x, 0.9, 0.5, 0.5), self.c.lif_forward(u, s, x, 0.9, 0.5, 0.5)):
            assert a.dtype == b.dtype and a.tobytes() == b.tobytes()
        a = py.lif_backward(x, s, u, 0.9, 0.5, 0.5, 0.7)
        b = self.c.lif_backward(x, s, u, 0.9, 0.5, 0.5, 0.7)
        assert a.dtype == b.dtype and a.tobytes() == b.tobytes()

    @pytest.mark.parametrize("dtype", [np.float64, np.float32])
    @pytest.mark.parametrize("k,stride,pad", [(3, 1, 0), (3, 2, 1), (2, 2, 0), (5, 1, 2)])
    def test_conv_kernels(self, rng, dtype, k, stride, pad):
        x = rng.standard_normal((2, 3, 9, 9)).astype(dtype)
        a = py.im2col(x, k, stride, pad)
        b = self.c.im2col(x, k, stride, pad)
        assert a.tobytes() == b.tobytes()
        g = rng.standard_normal(a.shape).astype(dtype)
        assert py.col2im(g, x.shape, k, stride, pad).tobytes() == self.c.col2im(g, x.shape, k, stride, pad).tobytes()

    def test_broadcast_input(self, rng):
        x = np.broadcast_to(rng.standard_normal((1, 2, 5, 5)), (3, 2, 5, 5))
        assert py.im2col(x, 3, 1, 0).tobytes() == self.c.im2col(x, 3, 1, 0).tobytes()

    @settings(max_examples=30, deadline=None)
    @given(k=st.integers(1, 3), h=st.integers(3, 9), seed=st.integers(0, 2**32 - 1))
    def test_pool(self, k, h, seed):
        r = np.random.default_rng(seed)
        x = r.standard_normal((2, 2, h, h))
        a = py.avgpool_forward(x, k, k)
        assert a.tobytes() == self.c.avgpool_forward(x, k, k).tobytes()
        g = r.standard_normal(a.shape)
        assert py.avgpool_backward(g, x.shape, k, k).tobytes() == self.c.avgpool_backward(g, x.shape, k, k).tobytes()
