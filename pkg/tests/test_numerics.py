import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from falcon_lab import numerics as nx


def mp_softmax(xs):
    with mpmath.workdps(50):
        e = [mpmath.exp(mpmath.mpf(float(x))) for x in xs]
        s = mpmath.fsum(e)
        return np.array([float(v / s) for v in e])


class TestSoftmax:
    def test_pair_of_zeros(self):
        np.testing.assert_allclose(nx.softmax([0.0, 0.0]), [0.5, 0.5], atol=1e-15)

    @pytest.mark.parametrize("c", [-700.0, -3.0, 0.0, 12.5, 499.0])
    def test_constant_logits_are_uniform(self, c):
        np.testing.assert_allclose(nx.softmax([c, c, c]), [1 / 3] * 3, atol=1e-15)

    def test_matches_extended_precision(self):
        np.testing.assert_allclose(nx.softmax([1.0, 2.0, 3.0]), mp_softmax([1, 2, 3]),
                                   rtol=1e-14, atol=0)

    def test_empty(self):
        with pytest.raises(ValueError, match="empty logits"):
            nx.softmax([])

    @given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-500, 500)),
           st.floats(-100, 100))
    def test_sum_positive_and_shift_invariant(self, z, c):
        p = nx.softmax(z)
        assert np.all(p > 0) or np.ptp(z) > 700
        assert abs(p.sum() - 1.0) <= 1e-12
        np.testing.assert_allclose(nx.softmax(z + c), p, atol=1e-12)

    def test_backward_matches_finite_differences(self, rng):
        z = rng.normal(size=5)
        g = rng.normal(size=5)
        rep = nx.grad_check(lambda v: float(nx.softmax(v) @ g),
                            nx.softmax_backward(nx.softmax(z), g), z)
        assert rep.passed, rep


class TestChannelMean:
    def test_constant(self):
        np.testing.assert_array_equal(nx.channel_mean(np.ones((2, 2, 4))), np.ones((2, 2)))

    def test_two_channels(self):
        f = np.zeros((1, 1, 2))
        f[0, 0] = (0.0, 1.0)
        assert nx.channel_mean(f)[0, 0] == 0.5

    def test_matches_loop(self, rng):
        f = rng.normal(size=(3, 3, 8))
        want = np.zeros((3, 3))
        for j in range(3):
            for k in range(3):
                s = 0.0
                for c in range(8):
                    s += f[j, k, c]
                want[j, k] = s / 8
        np.testing.assert_allclose(nx.channel_mean(f), want, rtol=1e-14)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_adjoint(self, seed):
        r = np.random.default_rng(seed)
        v = r.normal(size=(5, 6, 7))
        u = r.normal(size=(5, 6))
        lhs = np.sum(nx.channel_mean(v) * u)
        rhs = np.sum(v * nx.channel_mean_backward(u, 7))
        assert abs(lhs - rhs) <= 1e-10


class TestConv:
    def brute(self, x, w, b, stride):
        kh, kw, cin, cout = w.shape
        pad = kh // 2
        n, H, W, _ = x.shape
        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
        ho = nx.conv_output_size(H, kh, stride)
        wo = nx.conv_output_size(W, kw, stride)
        out = np.zeros((n, ho, wo, cout))
        for i in range(n):
            for r in range(ho):
                for c in range(wo):
                    patch = xp[i, r * stride:r * stride + kh, c * stride:c * stride + kw, :]
                    for o in range(cout):
                        out[i, r, c, o] = np.sum(patch * w[..., o]) + b[o]
        return out

    @pytest.mark.parametrize("k,stride", [(3, 1), (3, 2), (5, 2), (5, 1)])
    def test_forward_matches_loops(self, rng, k, stride):
        x = rng.normal(size=(2, 8, 8, 3))
        w = rng.normal(size=(k, k, 3, 4))
        b = rng.normal(size=4)
        out, _ = nx.conv2d_forward(x, w, b, stride)
        np.testing.assert_allclose(out, self.brute(x, w, b, stride), rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("k,stride", [(3, 2), (5, 1)])
    def test_backward_adjoint(self, rng, k, stride):
        x = rng.normal(size=(2, 8, 8, 3))
        w = rng.normal(size=(k, k, 3, 4))
        b = np.zeros(4)
        out, cache = nx.conv2d_forward(x, w, b, stride)
        u = rng.normal(size=out.shape)
        dx, dw, db = nx.conv2d_backward(u, cache, w)
        # the conv is linear in x (b = 0) and in w
        assert abs(np.sum(out * u) - np.sum(x * dx)) <= 1e-10 * max(1.0, abs(np.sum(out * u)))
        assert abs(np.sum(out * u) - np.sum(w * dw)) <= 1e-10 * max(1.0, abs(np.sum(out * u)))
        np.testing.assert_allclose(db, u.sum(axis=(0, 1, 2)), rtol=1e-12)


class TestFiniteDiff:
    def test_square(self):
        g = nx.finite_diff_grad(lambda p: p[0] ** 2, [3.0], h=1e-6)
        assert abs(g[0] - 6.0) <= 1e-8

    def test_constant(self):
        np.testing.assert_array_equal(nx.finite_diff_grad(lambda p: 4.2, np.ones(5)), np.zeros(5))

    def test_non_finite_names_index(self):
        def f(p):
            with np.errstate(invalid="ignore"):
                return p[0] + np.sqrt(p[2])  # nan once p[2] steps below zero
        with pytest.raises(FloatingPointError, match="index 2"):
            nx.finite_diff_grad(f, [1.0, 1.0, 0.0])

    def test_bad_step(self):
        with pytest.raises(ValueError):
            nx.finite_diff_grad(lambda p: 0.0, [1.0], h=0.0)

    def test_relative_error_definition(self):
        a = np.array([0.0, 10.0, -3.0])
        n = np.array([1e-3, 10.5, -3.0])
        np.testing.assert_allclose(nx.relative_error(a, n), [1e-3, 0.5 / 10.5, 0.0])

    def test_report_pass_flag_follows_tolerance(self):
        f = lambda p: float(np.sum(p ** 3))  # noqa: E731
        p = np.array([1.0, 2.0])
        good = nx.grad_check(f, 3 * p ** 2, p, tolerance=1e-6)
        bad = nx.grad_check(f, 3 * p ** 2 + 1e-3, p, tolerance=1e-6)
        assert good.passed and good.num_params == 2
        assert not bad.passed and bad.max_rel_diff > 1e-6
