import numpy as np
import pytest
from scipy import integrate, stats

from lcmvp.corrconstrain import sample_lkj
from lcmvp.oracles import (
    all_patterns,
    bvn_cdf,
    ci_pattern_probs,
    lcmvp_exact_pattern_probs,
    orthant_prob_exact,
    tetrachoric,
)


class TestBvn:
    def test_orthant_closed_form(self):
        np.testing.assert_allclose(bvn_cdf(0.0, 0.0, 0.5), 0.25 + np.arcsin(0.5) / (2 * np.pi), atol=1e-12)

    def test_against_quadrature(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            h, k = 2 * rng.standard_normal(2)
            r = rng.uniform(-0.99, 0.99)
            ref = integrate.quad(
                lambda x: stats.norm.pdf(x) * stats.norm.cdf((k - r * x) / np.sqrt(1 - r * r)),
                -np.inf, h, epsabs=1e-14,
            )[0]
            np.testing.assert_allclose(bvn_cdf(h, k, r), ref, atol=1e-12)

    def test_independence(self):
        np.testing.assert_allclose(bvn_cdf(0.3, -1.2, 0.0), stats.norm.cdf(0.3) * stats.norm.cdf(-1.2), atol=1e-14)


class TestOrthant:
    @pytest.mark.parametrize("T", [2, 3, 4])
    def test_normalization(self, T):
        rng = np.random.default_rng(T)
        beta = rng.standard_normal(T)
        om = sample_lkj(1.5, T, rng).omega
        total = sum(orthant_prob_exact(beta, om, y) for y in all_patterns(T))
        np.testing.assert_allclose(total, 1.0, atol=1e-8)

    def test_matches_scipy_genz(self):
        rng = np.random.default_rng(9)
        beta = rng.standard_normal(3)
        om = sample_lkj(2.0, 3, rng).omega
        y = np.array([1, 0, 1])
        s = 2 * y - 1
        ref = stats.multivariate_normal(np.zeros(3), om * np.outer(s, s)).cdf(s * beta)
        np.testing.assert_allclose(orthant_prob_exact(beta, om, y), ref, atol=1e-5)

    def test_identity_factorizes(self):
        beta = np.array([0.2, -0.7, 1.1])
        y = np.array([0, 1, 1])
        ref = np.prod(stats.norm.cdf((2 * y - 1) * beta))
        np.testing.assert_allclose(orthant_prob_exact(beta, np.eye(3), y), ref, atol=1e-12)

    def test_mixture_and_ci_normalize(self):
        rng = np.random.default_rng(3)
        oms = [sample_lkj(3.0, 3, rng).omega for _ in range(2)]
        pats = all_patterns(3)
        np.testing.assert_allclose(lcmvp_exact_pattern_probs(rng.standard_normal((2, 3)), oms, 0.3, pats).sum(), 1, atol=1e-8)
        np.testing.assert_allclose(ci_pattern_probs([0.8, 0.7, 0.6], [0.9, 0.95, 0.8], 0.2, pats).sum(), 1, atol=1e-14)


class TestTetrachoric:
    def test_recovers_correlation(self):
        rng = np.random.default_rng(1)
        z = rng.multivariate_normal([0, 0], [[1, 0.4], [0.4, 1]], size=200_000)
        y = (z > [0.3, -0.5]).astype(int)
        np.testing.assert_allclose(tetrachoric(y[:, 0], y[:, 1]), 0.4, atol=0.01)

    def test_degenerate_margin(self):
        with pytest.raises(ValueError):
            tetrachoric(np.ones(10), np.arange(10) % 2)
