import numpy as np
import pytest
from scipy import stats

from lcmvp.corrconstrain import (
    CorrBounds,
    CorrChol,
    InfeasibleBoundsError,
    LkjSpec,
    RejectionBudgetExceeded,
    chol_from_raw,
    chol_from_raw_vjp,
    lkj_log_density,
    marginal_beta_params,
    n_raw,
    raw_from_corr,
    sample_lkj,
    sample_lkj_batch,
    sample_trunc_lkj,
    sample_trunc_lkj_batch,
)


def _offdiag(omega):
    return omega[np.tril_indices(omega.shape[0], -1)]


def _fd_logdet(raw, bounds, h=1e-6):
    f = lambda r: _offdiag(chol_from_raw(r, bounds).omega)
    J = np.array([(f(raw + h * e) - f(raw - h * e)) / (2 * h) for e in np.eye(raw.size)]).T
    return np.linalg.slogdet(J)[1]


class TestCorrBounds:
    def test_rejects_inverted_bounds(self):
        lb = np.zeros((3, 3))
        ub = np.zeros((3, 3))
        with pytest.raises(ValueError):
            CorrBounds(3, lb, ub)

    def test_lower_triangle_is_mirrored(self):
        b = CorrBounds.from_pairs(4, [(2, 3)])
        assert b.lb[2, 1] == 0.0 and b.lb[1, 2] == 0.0
        assert b.lb[3, 0] == -1.0

    def test_dict_round_trip(self):
        b = CorrBounds.from_pairs(5, [(2, 3), (4, 5)], 0.0, 0.9)
        assert CorrBounds.from_dict(b.to_dict()) == b

    def test_lkj_spec_requires_positive_eta(self):
        with pytest.raises(ValueError):
            LkjSpec(0.0)


class TestCholFromRaw:
    def test_zero_raw_is_midpoint(self):
        c = chol_from_raw(np.zeros(1), CorrBounds.unconstrained(2))
        np.testing.assert_allclose(c.omega[1, 0], 0.0, atol=1e-15)

    def test_saturates_to_upper_bound(self):
        c = chol_from_raw(np.array([20.0]), CorrBounds.positive(2))
        assert c.omega[1, 0] >= 0.999

    def test_positive_bounds_fuzz(self):
        rng = np.random.default_rng(11)
        b = CorrBounds.positive(5)
        done = 0
        for _ in range(1000):
            try:
                c = chol_from_raw(rng.standard_normal(10), b)
            except InfeasibleBoundsError:
                continue
            om = c.omega
            assert np.linalg.eigvalsh(om).min() > 1e-10
            assert np.all(_offdiag(om) > 0) and np.all(_offdiag(om) < 1)
            done += 1
        assert done > 900

    @pytest.mark.parametrize("T", range(2, 9))
    def test_unconstrained_round_trip(self, T):
        rng = np.random.default_rng(T)
        b = CorrBounds.unconstrained(T)
        for _ in range(1000 // 7 + 1):
            raw = rng.standard_normal(n_raw(T))
            c = chol_from_raw(raw, b)
            np.testing.assert_allclose(np.diag(c.omega), 1.0, atol=1e-12)
            assert np.all(np.diag(c.L) > 0)
            assert np.linalg.eigvalsh(c.omega).min() > 1e-10
            np.testing.assert_allclose(raw_from_corr(c.omega, b), raw, atol=1e-8)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            chol_from_raw(np.zeros(3), CorrBounds.unconstrained(4))

    def test_infeasible_bounds(self):
        # Omega_21 and Omega_31 near 0.9 force Omega_32 well above 0.6
        lb = -np.ones((3, 3))
        ub = np.ones((3, 3))
        lb[1, 0] = lb[2, 0] = 0.9
        ub[2, 1] = 0.5
        with pytest.raises(InfeasibleBoundsError):
            chol_from_raw(np.zeros(3), CorrBounds(3, lb, ub))


class TestJacobian:
    @pytest.mark.parametrize("T", [2, 3, 4])
    @pytest.mark.parametrize("kind", ["free", "positive", "mixed"])
    def test_log_jacobian_matches_finite_differences(self, T, kind):
        rng = np.random.default_rng(100 + T)
        b = {
            "free": CorrBounds.unconstrained(T),
            "positive": CorrBounds.positive(T),
            "mixed": CorrBounds.from_pairs(T, [(1, T)]),
        }[kind]
        checked = 0
        while checked < 10:
            raw = 0.8 * rng.standard_normal(n_raw(T))
            try:
                c = chol_from_raw(raw, b)
            except InfeasibleBoundsError:
                continue
            ref = _fd_logdet(raw, b)
            assert abs(c.log_jacobian - ref) < 1e-5 * max(1.0, abs(ref))
            checked += 1

    @pytest.mark.parametrize("T", [3, 5])
    def test_vjp_matches_finite_differences(self, T):
        rng = np.random.default_rng(7)
        for b in (CorrBounds.unconstrained(T), CorrBounds.positive(T)):
            raw = 0.5 * rng.standard_normal(n_raw(T))
            Lbar = rng.standard_normal((T, T))
            _, g = chol_from_raw_vjp(raw, b, Lbar, 0.3)

            def f(r):
                c = chol_from_raw(r, b)
                return np.sum(Lbar * c.L) + 0.3 * c.log_jacobian

            h = 1e-6
            fd = np.array([(f(raw + h * e) - f(raw - h * e)) / (2 * h) for e in np.eye(raw.size)])
            assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-5


class TestLkjDensity:
    def test_eta_one_is_flat(self):
        c = chol_from_raw(np.array([0.3, -1.0, 2.0]), CorrBounds.unconstrained(3))
        assert lkj_log_density(c, 1.0) == 0.0

    def test_identity_is_zero(self):
        assert lkj_log_density(CorrChol.identity(4), 7.0) == 0.0

    def test_bivariate_value(self):
        c = CorrChol.from_corr(np.array([[1.0, 0.5], [0.5, 1.0]]))
        np.testing.assert_allclose(lkj_log_density(c, 4.0), 3 * np.log(0.75), rtol=1e-12)
        np.testing.assert_allclose(lkj_log_density(c, 4.0), -0.8630, atol=5e-5)


class TestMarginalBeta:
    def test_values(self):
        assert marginal_beta_params(1.0, 2) == (1.0, 1.0)
        assert marginal_beta_params(10.0, 5) == (11.5, 11.5)
        assert marginal_beta_params(4.0, 5) == (5.5, 5.5)

    def test_domain_error(self):
        with pytest.raises(ValueError):
            marginal_beta_params(0.1, 1)


class TestSampleLkj:
    def test_single_draw_is_valid(self):
        c = sample_lkj(2.0, 5, np.random.default_rng(0))
        np.testing.assert_allclose(np.sum(c.L**2, axis=1), 1.0, atol=1e-12)
        assert np.all(np.diag(c.L) > 0)

    def test_large_eta_concentrates(self):
        L = sample_lkj_batch(1e6, 5, 200, np.random.default_rng(1))
        om = L @ L.transpose(0, 2, 1)
        assert np.abs(om[:, 1, 0]).max() < 0.01

    def test_symmetric_mean(self):
        L = sample_lkj_batch(1.5, 5, 20_000, np.random.default_rng(2))
        assert abs(np.mean(L[:, 1, 0])) < 0.01

    def test_eta10_interval(self):
        L = sample_lkj_batch(10.0, 5, 20_000, np.random.default_rng(3))
        lo, hi = np.quantile(L[:, 1, 0], [0.025, 0.975])
        np.testing.assert_allclose([lo, hi], [-0.40, 0.40], atol=0.02)

    @pytest.mark.parametrize("eta", [1.5, 4.0, 10.0, 24.0])
    def test_marginal_is_beta(self, eta):
        rng = np.random.default_rng(int(eta * 10))
        L = sample_lkj_batch(eta, 5, 20_000, rng)
        om = L @ L.transpose(0, 2, 1)
        a, b = marginal_beta_params(eta, 5)
        for i, j in [(1, 0), (4, 2)]:
            assert stats.kstest((om[:, i, j] + 1) / 2, stats.beta(a, b).cdf).pvalue > 0.01


class TestSampleTruncLkj:
    def test_single_draw_positive(self):
        c = sample_trunc_lkj(1.5, 5, np.random.default_rng(4))
        assert _offdiag(c.omega).min() > 0

    def test_budget(self):
        with pytest.raises(RejectionBudgetExceeded):
            sample_trunc_lkj(1.5, 8, np.random.default_rng(5), max_attempts=3)
        with pytest.raises(RejectionBudgetExceeded):
            sample_trunc_lkj_batch(1.5, 8, 2, np.random.default_rng(5), max_attempts=3)

    def test_eta15_median(self):
        L = sample_trunc_lkj_batch(1.5, 5, 20_000, np.random.default_rng(6))
        om = L @ L.transpose(0, 2, 1)
        assert np.all(om[:, np.tril_indices(5, -1)[0], np.tril_indices(5, -1)[1]] > 0)
        x = om[:, 1, 0]
        np.testing.assert_allclose(np.median(x), 0.37, atol=0.02)
        np.testing.assert_allclose(np.quantile(x, [0.025, 0.975]), [0.02, 0.82], atol=0.02)

    def test_eta4_median(self):
        L = sample_trunc_lkj_batch(4.0, 5, 20_000, np.random.default_rng(7))
        np.testing.assert_allclose(np.median(L[:, 1, 0]), 0.26, atol=0.02)
