import numpy as np
import pytest

from lcmvp.dgm import (
    LT_LOADINGS,
    DgmSpec,
    dgm_spec,
    half_b_nondiseased,
    mu_from_accuracy,
    read_dataset_csv,
    simulate_dataset,
    write_dataset_csv,
)
from lcmvp.likelihood import lt_corr
from lcmvp.oracles import tetrachoric


class TestDgmSpec:
    def test_highly_varied_entry(self):
        assert dgm_spec(3).omega[1][3, 4] == 0.65

    def test_dgm1_identity(self):
        s = dgm_spec(1)
        np.testing.assert_array_equal(s.omega[0], np.eye(5))
        np.testing.assert_array_equal(s.omega[1], np.eye(5))

    def test_dgm5_se1(self):
        assert dgm_spec(5).true_se[0] == 0.925

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_accuracy_set_1(self, k):
        s = dgm_spec(k)
        np.testing.assert_allclose(s.true_se, [0.65, 0.55, 0.60, 0.65, 0.70])
        np.testing.assert_allclose(s.true_sp, [0.99, 0.95, 0.90, 0.90, 0.85])

    @pytest.mark.parametrize("k", [4, 5])
    def test_accuracy_set_2(self, k):
        s = dgm_spec(k)
        np.testing.assert_allclose(s.true_se, [0.925, 0.86, 0.87, 0.91, 0.86])
        np.testing.assert_allclose(s.true_sp, [0.95, 0.81, 0.70, 0.67, 0.85])

    @pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
    def test_prevalence_and_pd(self, k):
        s = dgm_spec(k)
        assert s.prevalence == 0.20
        for o in s.omega:
            assert np.linalg.eigvalsh(o).min() > 0
            np.testing.assert_array_equal(o, o.T)
            np.testing.assert_array_equal(np.diag(o), 1.0)

    @pytest.mark.parametrize("k", [2, 4])
    def test_varied_matches_loadings(self, k):
        s = dgm_spec(k)
        np.testing.assert_allclose(s.omega[1], lt_corr(LT_LOADINGS), atol=1e-3)
        np.testing.assert_allclose(s.omega[0], half_b_nondiseased(LT_LOADINGS), atol=1e-3)

    @pytest.mark.parametrize("k", [3, 5])
    def test_highly_varied_halved(self, k):
        s = dgm_spec(k)
        off = ~np.eye(5, dtype=bool)
        np.testing.assert_array_equal(s.omega[0][off], 0.5 * s.omega[1][off])

    @pytest.mark.parametrize("bad", [0, 6, -1])
    def test_unknown_id(self, bad):
        with pytest.raises(ValueError):
            dgm_spec(bad)

    def test_invalid_spec_rejected(self):
        with pytest.raises(ValueError):
            DgmSpec(9, [0.5, 1.2], [0.5, 0.5], 0.2, (np.eye(2), np.eye(2)))
        with pytest.raises(ValueError):
            DgmSpec(9, [0.5, 0.5], [0.5, 0.5], 0.2, (np.eye(2), np.array([[1, 1.2], [1.2, 1]])))

    def test_immutable(self):
        with pytest.raises(ValueError):
            dgm_spec(2).omega[0][0, 1] = 0.3


class TestMuFromAccuracy:
    def test_half(self):
        np.testing.assert_allclose(mu_from_accuracy([0.5], [0.5]), [[0.0], [0.0]], atol=1e-15)

    def test_prior_centres(self):
        mu = mu_from_accuracy([0.65], [0.99])
        np.testing.assert_allclose(mu[1, 0], 0.385, atol=1e-3)
        np.testing.assert_allclose(mu[0, 0], -2.326, atol=1e-3)


class TestHalfB:
    def test_entries(self):
        om = half_b_nondiseased(LT_LOADINGS)
        np.testing.assert_allclose(om[2, 4], 0.255, atol=5e-4)
        np.testing.assert_allclose(om[0, 1], 0.069, atol=5e-4)

    def test_small_b_identity(self):
        np.testing.assert_allclose(half_b_nondiseased(np.full(5, 1e-8)), np.eye(5), atol=1e-15)

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            half_b_nondiseased([0.1, 0.0, 0.2])


class TestSimulate:
    def test_deterministic(self):
        a = simulate_dataset(dgm_spec(3), 500, np.random.default_rng(4))
        b = simulate_dataset(dgm_spec(3), 500, np.random.default_rng(4))
        np.testing.assert_array_equal(a.y, b.y)
        np.testing.assert_array_equal(a.meta["d"], b.meta["d"])

    def test_all_diseased(self):
        ds = simulate_dataset(dgm_spec(1), 1000, np.random.default_rng(0), prevalence=1.0)
        assert np.all(ds.meta["d"] == 2)

    def test_se_dgm1(self):
        s = dgm_spec(1)
        ds = simulate_dataset(s, 10**6, np.random.default_rng(11))
        d = ds.meta["d"]
        np.testing.assert_allclose(ds.y[d == 2].mean(axis=0), s.true_se, atol=0.002)
        np.testing.assert_allclose(d.mean() - 1, 0.2, atol=0.002)

    def test_within_class_correlation(self):
        s = dgm_spec(3)
        ds = simulate_dataset(s, 10**6, np.random.default_rng(12))
        yy = ds.y[ds.meta["d"] == 2]
        assert abs(tetrachoric(yy[:, 3], yy[:, 4]) - 0.65) < 0.01

    def test_bad_n(self):
        with pytest.raises(ValueError):
            simulate_dataset(dgm_spec(1), 0, np.random.default_rng(0))


class TestCsv:
    def test_round_trip(self, tmp_path):
        ds = simulate_dataset(dgm_spec(2), 50, np.random.default_rng(1))
        p = tmp_path / "d.csv"
        write_dataset_csv(ds, p)
        head = p.read_text().splitlines()[0]
        assert head == "subject,t1,t2,t3,t4,t5"
        back = read_dataset_csv(p)
        np.testing.assert_array_equal(back.y, ds.y)
        assert "d" not in back.meta

    def test_truth_column(self, tmp_path):
        ds = simulate_dataset(dgm_spec(2), 50, np.random.default_rng(1))
        p = tmp_path / "d.csv"
        write_dataset_csv(ds, p, include_truth=True)
        back = read_dataset_csv(p)
        np.testing.assert_array_equal(back.meta["d"], ds.meta["d"])
