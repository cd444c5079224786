import mpmath
import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from falcon_lab import losses as L
from falcon_lab.numerics import grad_check, softmax


def random_probs(rng, n, k, min_gap=1e-4):
    """Rows of a softmax whose top two entries differ by at least ``min_gap``."""
    out = []
    while len(out) < n:
        p = softmax(rng.normal(0, 1.5, size=k))
        top = np.sort(p)[-2:]
        if top[1] - top[0] >= min_gap:
            out.append(p)
    return np.array(out)


@st.composite
def prob_vectors(draw, max_k=11):
    k = draw(st.integers(2, max_k))
    logits = draw(st.lists(st.floats(-20, 20), min_size=k, max_size=k))
    return softmax(np.array(logits))


class TestPeakAdjust:
    def test_substitution(self):
        np.testing.assert_allclose(L.peak_adjust([0.7, 0.2, 0.1], 1.0), [0.85, 0.10, 0.05],
                                   rtol=1e-15)

    def test_tie_goes_to_lowest_index(self):
        np.testing.assert_allclose(L.peak_adjust([0.5, 0.5], 1.0), [0.75, 0.25], rtol=1e-15)

    def test_large_margin_extended_precision(self):
        with mpmath.workdps(40):
            m = mpmath.mpf(10) ** 4
            want = [float((mpmath.mpf("0.7") + m) / (1 + m)), float(mpmath.mpf("0.3") / (1 + m))]
        got = L.peak_adjust([0.7, 0.3], 1e4)
        np.testing.assert_allclose(got, want, rtol=1e-14)
        assert got[0] == pytest.approx(0.99997000, abs=1e-8)

    @pytest.mark.parametrize("m", [0.0, -1.0])
    def test_non_positive_margin(self, m):
        with pytest.raises(ValueError, match="non-positive margin"):
            L.peak_adjust([0.6, 0.4], m)
        with pytest.raises(ValueError, match="non-positive margin"):
            L.IrplConfig(m=m)

    @given(prob_vectors(), st.floats(-3, 6))
    def test_invariants(self, p, log_m):
        m = 10.0 ** log_m
        q = L.peak_adjust(p, m)
        assert abs(q.sum() - 1.0) <= 1e-12
        assert np.argmax(q) == np.argmax(p)
        rest = np.delete(np.arange(len(p)), np.argmax(p))
        # non-peak entries keep their order
        assert np.array_equal(np.argsort(p[rest], kind="stable"), np.argsort(q[rest], kind="stable"))
        assert np.all(q >= 0)


class TestIrpl:
    def test_uniform_pbar_has_zero_kl(self):
        p = np.full(3, 1 / 3)
        res = L.irpl_loss([L.BoxLossTerm(p, 0), L.BoxLossTerm(p, 2)], num_fg_classes=2)
        assert res.kl == 0.0
        assert not res.kl_skipped

    def test_single_box_value(self):
        cfg = L.IrplConfig(m=1e4, alpha=0.1, beta=2.0, gamma=0.0, w_fg=2.0)
        res = L.irpl_loss([L.BoxLossTerm(np.array([0.6, 0.4]), 0)], cfg, num_fg_classes=1)
        with mpmath.workdps(40):
            m = mpmath.mpf(10) ** 4
            want = 2 * (mpmath.mpf("0.1") * -mpmath.log((mpmath.mpf("0.6") + m) / (1 + m))
                        + 2 * mpmath.mpf("0.4"))
        assert res.loss == pytest.approx(float(want), rel=1e-13)

    def test_background_box_uses_bg_weight(self):
        cfg = L.IrplConfig(gamma=0.0, w_fg=2.0, w_bg=1.0)
        p = np.array([0.2, 0.3, 0.5])
        fg = L.irpl_loss(p[None], cfg, pseudo_classes=[1], use_peak_adjust=False).loss
        bg = L.irpl_loss(p[None], cfg, pseudo_classes=[2], use_peak_adjust=False).loss
        assert fg == pytest.approx(2 * (0.1 * -np.log(0.3) + 2 * 0.7))
        assert bg == pytest.approx(1 * (0.1 * -np.log(0.5) + 2 * 0.5))

    def test_kl_term(self):
        probs = np.array([[0.5, 0.2, 0.3], [0.1, 0.6, 0.3]])
        res = L.irpl_loss(probs, L.IrplConfig(alpha=0.0, beta=0.0, gamma=1.0), pseudo_classes=[0, 2])
        pbar = np.array([0.6, 0.8]) / 1.4
        assert res.loss == pytest.approx(np.log(2) + np.sum(pbar * np.log(pbar)), rel=1e-14)

    def test_all_background_mass_skips_kl(self):
        p = np.array([[0.0, 0.0, 1.0]])
        res = L.irpl_loss(p, pseudo_classes=[2])
        assert res.kl_skipped and res.kl == 0.0
        assert np.isfinite(res.loss)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_gradient_finite_differences(self, seed):
        r = np.random.default_rng(seed)
        K = 3
        probs = random_probs(r, 5, K + 1)
        labels = r.integers(0, K + 1, size=5)
        res = L.irpl_loss(probs, L.IrplConfig(m=5.0), pseudo_classes=labels)

        def f(flat):
            return L.irpl_loss(flat.reshape(probs.shape), L.IrplConfig(m=5.0),
                               pseudo_classes=labels).loss

        rep = grad_check(f, res.grad, probs.ravel(), h=1e-6, tolerance=1e-5)
        assert rep.passed, rep

    @pytest.mark.parametrize("switches", [dict(use_peak_adjust=False), dict(use_kl=False),
                                          dict(use_fgbg_weighting=False)])
    def test_ablated_gradients(self, rng, switches):
        probs = random_probs(rng, 4, 4)
        labels = np.array([0, 3, 1, 3])
        res = L.irpl_loss(probs, pseudo_classes=labels, **switches)
        rep = grad_check(lambda v: L.irpl_loss(v.reshape(4, 4), pseudo_classes=labels,
                                               **switches).loss, res.grad, probs.ravel())
        assert rep.passed, rep

    def test_logit_gradient(self, rng):
        z = rng.normal(size=(3, 4))
        labels = [0, 3, 2]
        loss, g = L.irpl_logit_grad(softmax(z), labels)
        rep = grad_check(lambda v: L.irpl_loss(softmax(v.reshape(3, 4)), pseudo_classes=labels).loss,
                         g, z.ravel())
        assert rep.passed, rep

    @given(st.integers(0, 10_000), st.integers(1, 8))
    def test_permutation_invariant(self, seed, n):
        r = np.random.default_rng(seed)
        probs = softmax(r.normal(size=(n, 4)))
        labels = r.integers(0, 4, size=n)
        perm = r.permutation(n)
        a = L.irpl_loss(probs, pseudo_classes=labels)
        b = L.irpl_loss(probs[perm], pseudo_classes=labels[perm])
        assert a.loss == pytest.approx(b.loss, rel=1e-12, abs=1e-12)
        np.testing.assert_allclose(a.grad[perm], b.grad, rtol=1e-12, atol=1e-12)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            L.irpl_loss(np.zeros((0, 3)), pseudo_classes=[])
        with pytest.raises(ValueError):
            L.irpl_loss(np.full((1, 3), 1 / 3), pseudo_classes=[3])
        with pytest.raises(ValueError):
            L.irpl_loss(np.full((1, 3), 1 / 3), num_fg_classes=3, pseudo_classes=[0])


class TestGradientRegimes:
    def test_agree(self):
        factor, regime = L.irpl_grad_regime_check([0.9, 0.1], 0, 1e4)
        assert regime == "agree"
        assert factor == pytest.approx(0.9 / 10000.9, rel=1e-15)

    def test_agree_against_finite_differences(self):
        z = np.log(np.array([0.9, 0.1]))
        m = 1e4
        factor, _ = L.irpl_grad_regime_check(softmax(z), 0, m)
        fd = grad_check(lambda v: -np.log(L.peak_adjust(softmax(v), m)[0]),
                        factor * (softmax(z) - [1, 0]), z)
        assert fd.passed, fd

    def test_disagree(self):
        assert L.irpl_grad_regime_check([0.9, 0.1], 1, 1e4) == (1.0, "disagree")

    def test_small_margin_limit(self):
        factors = [L.irpl_grad_regime_check([0.7, 0.3], 0, m)[0] for m in (1e-3, 1e-6, 1e-9)]
        assert factors == sorted(factors)
        assert 1.0 - factors[-1] < 1e-8

    @given(prob_vectors(), st.floats(-3, 6))
    def test_identities_hold(self, p, log_m):
        assume(p.min() > 1e-12)
        for c in range(len(p)):
            L.irpl_grad_regime_check(p, c, 10.0 ** log_m)


class TestSpar:
    def test_perfect_match(self):
        a = np.ones((2, 2))
        loss, _ = L.spar_loss(a, a)
        assert loss == pytest.approx(2 * (1 - 8 / (8 + 1e-7)), rel=1e-9)
        assert loss == pytest.approx(2.5e-8, rel=1e-6)

    @pytest.mark.parametrize("shape", [(1, 1), (4, 4), (3, 5)])
    def test_total_mismatch(self, shape):
        loss, _ = L.spar_loss(np.zeros(shape), np.ones(shape))
        assert loss == pytest.approx(1.0 + 2.0, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            L.spar_loss(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            L.SparConfig(lambda1=-1)
        with pytest.raises(ValueError):
            L.SparConfig(epsilon=0)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_gradient_finite_differences(self, seed):
        r = np.random.default_rng(seed)
        g = (r.random((4, 4)) > 0.5).astype(float)
        s = r.random((4, 4))
        # stay away from the l1 kink
        while np.any(np.abs(s - g) < 1e-4):
            bad = np.abs(s - g) < 1e-4
            s[bad] = r.random(bad.sum())
        _, grad = L.spar_loss(s, g)
        rep = grad_check(lambda v: L.spar_loss(v.reshape(4, 4), g)[0], grad, s.ravel())
        assert rep.passed, rep

    @given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 6))
    def test_bounds(self, seed, h, w):
        r = np.random.default_rng(seed)
        s, g = r.random((h, w)), r.random((h, w))
        loss, _ = L.spar_loss(s, g)
        assert 0.0 <= loss <= 1.0 + 2.0 + 1e-12
        a = (r.random((h, w)) > 0.5).astype(float)
        cfg = L.SparConfig()
        self_loss, _ = L.spar_loss(a, a, cfg)
        assert self_loss <= cfg.lambda2 * cfg.epsilon / (2 * a.sum() + cfg.epsilon) + 1e-15


class TestCrossEntropyAndBox:
    def test_certain(self):
        loss, grad, clamped = L.ce_loss(np.array([1.0, 0.0]), 0)
        assert loss == 0.0 and not clamped
        np.testing.assert_array_equal(grad, [-1.0, 0.0])

    def test_log_two(self):
        assert L.ce_loss(np.array([0.5, 0.5]), 1)[0] == pytest.approx(np.log(2), rel=1e-15)

    def test_clamp(self):
        loss, _, clamped = L.ce_loss(np.array([1.0, 0.0]), 1)
        assert clamped and loss == pytest.approx(-np.log(1e-300))

    def test_random_against_mpmath(self, rng):
        for _ in range(20):
            p = softmax(rng.normal(size=5))
            c = int(rng.integers(5))
            assert L.ce_loss(p, c)[0] == pytest.approx(float(-mpmath.log(p[c])), rel=1e-14)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_ce_gradient(self, seed):
        r = np.random.default_rng(seed)
        p = softmax(r.normal(size=4))
        _, g, _ = L.ce_loss(p, 2)
        assert grad_check(lambda v: L.ce_loss(v, 2)[0], g, p).passed

    def test_batch_matches_single(self, rng):
        p = softmax(rng.normal(size=(6, 4)))
        labels = rng.integers(0, 4, size=6)
        loss, grad = L.ce_loss_batch(p, labels)
        assert loss == pytest.approx(sum(L.ce_loss(p[i], labels[i])[0] for i in range(6)))
        for i in range(6):
            np.testing.assert_array_equal(grad[i], L.ce_loss(p[i], labels[i])[1])

    def test_box_identical(self):
        loss, grad = L.l1_box_loss([0.1, 0.2, 0.3, 0.4], [0.1, 0.2, 0.3, 0.4])
        assert loss == 0.0
        np.testing.assert_array_equal(grad, np.zeros(4))

    def test_box_corner_sum(self):
        assert L.l1_box_loss([0, 0, 1, 1], [0, 0, 0, 0])[0] == 2.0

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_box_random(self, seed):
        r = np.random.default_rng(seed)
        a, b = r.random(4), r.random(4)
        want = 0.0
        for i in range(4):
            want += abs(a[i] - b[i])
        loss, grad = L.l1_box_loss(a, b)
        assert loss == pytest.approx(want, rel=1e-15)
        assert grad_check(lambda v: L.l1_box_loss(v, b)[0], grad, a).passed
