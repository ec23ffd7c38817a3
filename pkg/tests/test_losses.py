import math

import numpy as np
import pytest

from rblock.losses import (
    LossWeights,
    cross_entropy,
    kl_divergence,
    rblock_loss,
    softmax_temp,
)

rng = np.random.default_rng(31)


class TestSoftmaxTemp:
    def test_uniform_logits(self):
        for t in (0.5, 1.0, 3.0):
            out = softmax_temp(np.zeros(3), t)
            np.testing.assert_allclose(out, 1 / 3)

    def test_sums_to_one(self):
        z = rng.normal(size=(8, 10)) * 20
        out = softmax_temp(z, 3.0)
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)

    def test_two_class_value(self):
        out = softmax_temp(np.array([1.0, 2.0]), 1.0)
        np.testing.assert_allclose(out, [0.2689414213699951, 0.7310585786300049],
                                   atol=1e-12)

    def test_argmax_invariance(self):
        z = rng.normal(size=(16, 7))
        base = z.argmax(axis=-1)
        for t in (0.5, 1.0, 3.0, 100.0):
            assert (softmax_temp(z, t).argmax(axis=-1) == base).all()

    def test_rejects_bad_temperature(self):
        with pytest.raises(ValueError):
            softmax_temp(np.zeros(3), 0.0)


class TestCrossEntropy:
    def test_uniform_is_log_kappa(self):
        losses, _ = cross_entropy(np.zeros((1, 10)), np.array([4]))
        assert losses[0] == pytest.approx(math.log(10), abs=1e-12)

    def test_monotone_in_correct_logit(self):
        prev = np.inf
        for bump in (0.0, 0.5, 1.0, 2.0, 5.0):
            z = np.array([[1.0, bump, -0.3]])
            loss, _ = cross_entropy(z, np.array([1]))
            assert loss[0] < prev
            prev = loss[0]

    def test_gradient_finite_differences(self):
        z = rng.normal(size=(3, 5))
        y = np.array([0, 3, 2])
        _, grad = cross_entropy(z, y)
        eps = 1e-6
        for i in range(3):
            for j in range(5):
                zp = z.copy(); zp[i, j] += eps
                zm = z.copy(); zm[i, j] -= eps
                num = (cross_entropy(zp, y)[0].sum() - cross_entropy(zm, y)[0].sum()) / (2 * eps)
                assert abs(num - grad[i, j]) / max(abs(num), 1e-6) <= 1e-6

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            cross_entropy(np.zeros((1, 4)), np.array([4]))


class TestKLDivergence:
    def test_identical_is_zero(self):
        p = softmax_temp(rng.normal(size=(4, 6)), 1.0)
        np.testing.assert_allclose(kl_divergence(p, p), 0.0, atol=1e-12)

    def test_nonnegative(self):
        for _ in range(20):
            p = softmax_temp(rng.normal(size=5), 1.0)
            q = softmax_temp(rng.normal(size=5), 1.0)
            assert kl_divergence(p, q) >= 0

    def test_known_value(self):
        val = kl_divergence(np.array([0.5, 0.5]), np.array([0.25, 0.75]))
        expected = 0.5 * math.log(2) + 0.5 * math.log(2 / 3)  # 0.14384103622589042
        assert val == pytest.approx(expected, abs=1e-12)

    def test_rejects_unnormalized(self):
        with pytest.raises(ValueError):
            kl_divergence(np.array([0.5, 0.6]), np.array([0.5, 0.5]))


class TestRBlockLoss:
    def _fd_check(self, w, detach=False, tol=1e-4):
        z1 = rng.normal(size=(4, 6))
        z2 = rng.normal(size=(4, 6))
        y = rng.integers(0, 6, 4)
        _, g1, g2 = rblock_loss(z1, z2, y, w, detach_peer=detach)
        if detach:
            return  # detached peers make the total non-differentiable w.r.t. z
        eps = 1e-6
        for Z, G in ((z1, g1), (z2, g2)):
            for i in range(Z.shape[0]):
                for j in range(Z.shape[1]):
                    orig = Z[i, j]
                    Z[i, j] = orig + eps
                    hi = rblock_loss(z1, z2, y, w)[0].total
                    Z[i, j] = orig - eps
                    lo = rblock_loss(z1, z2, y, w)[0].total
                    Z[i, j] = orig
                    num = (hi - lo) / (2 * eps)
                    assert abs(num - G[i, j]) / max(abs(num), 1e-6) <= tol

    def test_gradients_match_finite_differences(self):
        self._fd_check(LossWeights(alpha=0.1, temperature=3.0))
        self._fd_check(LossWeights(alpha=0.5, temperature=0.7))

    def test_alpha_zero_reduces_to_ce(self):
        z1 = rng.normal(size=(5, 4))
        z2 = rng.normal(size=(5, 4))
        y = rng.integers(0, 4, 5)
        bd, g1, g2 = rblock_loss(z1, z2, y, LossWeights(alpha=0.0, temperature=3.0))
        ce1, _ = cross_entropy(z1, y)
        ce2, _ = cross_entropy(z2, y)
        assert bd.total == pytest.approx(float(ce1.mean() + ce2.mean()), abs=1e-12)
        assert bd.kl12 >= 0  # still reported

    def test_identical_logits(self):
        z = rng.normal(size=(3, 5))
        y = rng.integers(0, 5, 3)
        w = LossWeights(alpha=0.1, temperature=3.0)
        bd, g1, g2 = rblock_loss(z, z.copy(), y, w)
        assert bd.kl12 == pytest.approx(0.0, abs=1e-12)
        assert bd.kl21 == pytest.approx(0.0, abs=1e-12)
        ce, gce = cross_entropy(z, y)
        assert bd.total == pytest.approx((1 - 0.1) * 2 * float(ce.mean()), abs=1e-12)
        # KL gradient component vanishes at coinciding distributions
        np.testing.assert_allclose(g1, 0.9 * gce / 3, atol=1e-12)

    def test_decomposition(self):
        z1 = rng.normal(size=(6, 8))
        z2 = rng.normal(size=(6, 8))
        y = rng.integers(0, 8, 6)
        w = LossWeights(alpha=0.3, temperature=2.0)
        bd, _, _ = rblock_loss(z1, z2, y, w)
        recomposed = (1 - w.alpha) * (bd.ce1 + bd.ce2) + \
            w.alpha * w.temperature ** 2 * (bd.kl12 + bd.kl21)
        assert bd.total == pytest.approx(recomposed, abs=1e-12)

    def test_high_temperature_flattens_kl(self):
        z1 = rng.normal(size=(4, 5)) * 3
        z2 = rng.normal(size=(4, 5)) * 3
        y = rng.integers(0, 5, 4)
        bd, _, _ = rblock_loss(z1, z2, y, LossWeights(alpha=0.1, temperature=1e6))
        assert bd.kl12 <= 1e-9 and bd.kl21 <= 1e-9

    def test_symmetric_sum_nonnegative(self):
        for _ in range(10):
            z1 = rng.normal(size=(2, 4))
            z2 = rng.normal(size=(2, 4))
            y = rng.integers(0, 4, 2)
            bd, _, _ = rblock_loss(z1, z2, y, LossWeights(0.2, 3.0))
            assert bd.kl12 + bd.kl21 >= 0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            rblock_loss(np.zeros((2, 3)), np.zeros((2, 4)), np.zeros(2, dtype=int),
                        LossWeights())
