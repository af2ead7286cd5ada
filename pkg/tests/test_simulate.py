import numpy as np
import pytest

from crash_augmentor.config import SimConfig
from crash_augmentor.simulate import (
    INTERSECTION_FEATURES,
    derive_seed,
    expected_count_mean,
    gen_dataset,
    gen_experiment_suite,
    gen_intersection_dataset,
    quoted_sample_mean,
    sample_gamma_heterogeneity,
    sample_poisson,
)


class TestSamplers:
    def test_gamma_heterogeneity_moments(self):
        rng = np.random.default_rng(0)
        draws = sample_gamma_heterogeneity(0.5, rng, size=200_000)
        assert draws.mean() == pytest.approx(1.0, abs=0.01)
        assert draws.var() == pytest.approx(0.5, abs=0.02)

    @pytest.mark.parametrize("alpha", [0.0, -1.0])
    def test_gamma_rejects_non_positive_dispersion(self, alpha):
        with pytest.raises(ValueError):
            sample_gamma_heterogeneity(alpha, np.random.default_rng(0))

    def test_poisson_scalar_and_array(self):
        rng = np.random.default_rng(1)
        assert isinstance(sample_poisson(3.0, rng), int)
        draws = sample_poisson(np.array([0.0, 2.0, 5.0]), rng)
        assert draws.shape == (3,)
        assert draws[0] == 0

    def test_poisson_rejects_negative_mean(self):
        with pytest.raises(ValueError):
            sample_poisson(-0.1, np.random.default_rng(0))


class TestGenDataset:
    def test_shapes_and_ranges(self):
        data = gen_dataset(SimConfig(sample_size=100, seed=5))
        assert data.features.shape == (100, 4)
        assert np.all((data.features >= 0) & (data.features < 1))
        assert np.all(data.true_means > 0)
        assert data.counts.dtype == np.int64
        assert np.all(data.counts >= 0)
        assert data.feature_names == ("x1", "x2", "x3", "x4")

    def test_same_seed_same_data(self):
        a = gen_dataset(SimConfig(seed=7))
        b = gen_dataset(SimConfig(seed=7))
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.counts, b.counts)
        c = gen_dataset(SimConfig(seed=8))
        assert not np.array_equal(a.features, c.features)

    def test_sample_mean_matches_closed_form(self):
        config = SimConfig(sample_size=100_000, seed=11)
        data = gen_dataset(config)
        assert data.counts.mean() == pytest.approx(expected_count_mean(config), abs=0.04)
        assert data.true_means.mean() == pytest.approx(expected_count_mean(config), abs=0.04)

    def test_overdispersion(self):
        data = gen_dataset(SimConfig(sample_size=20_000, dispersion=1.5, seed=12))
        assert data.counts.var() > 1.5 * data.counts.mean()

    def test_expected_mean_constants(self):
        config = SimConfig()
        assert expected_count_mean(config) == pytest.approx(1.8284, abs=1e-3)
        assert quoted_sample_mean(config) == pytest.approx(np.exp(0.5))

    def test_zero_coefficient(self):
        config = SimConfig(beta0=0.0, coefficients=[0.0])
        assert expected_count_mean(config) == pytest.approx(1.0)


class TestSeeds:
    def test_derive_seed_is_stable_and_distinct(self):
        assert derive_seed(1, "ns-test", 0) == derive_seed(1, "ns-test", 0)
        seeds = {derive_seed(1, "ns-test", i) for i in range(50)}
        assert len(seeds) == 50
        assert derive_seed(1, "ns-test", 0) != derive_seed(1, "prediction-test", 0)
        assert derive_seed(1, "ns-test", 0) != derive_seed(2, "ns-test", 0)
        assert all(0 <= s < 2**63 for s in seeds)


class TestSuite:
    def test_suite_layout(self):
        suite = gen_experiment_suite(SimConfig(sample_size=30, seed=3), n_ns=4, n_pred=2)
        assert len(suite.ns_test) == 4
        assert len(suite.prediction_test) == 2
        assert len(suite.cgan_train) == 30
        assert not np.array_equal(suite.ns_test[0].features, suite.ns_test[1].features)
        assert not np.array_equal(suite.cgan_train.features, suite.ns_test[0].features)

    def test_suite_is_reproducible(self):
        a = gen_experiment_suite(SimConfig(sample_size=30), n_ns=2, n_pred=2, master_seed=9)
        b = gen_experiment_suite(SimConfig(sample_size=30), n_ns=2, n_pred=2, master_seed=9)
        np.testing.assert_array_equal(a.ns_test[1].counts, b.ns_test[1].counts)
        np.testing.assert_array_equal(a.prediction_test[0].true_means, b.prediction_test[0].true_means)

    def test_replications_must_be_positive(self):
        with pytest.raises(ValueError):
            gen_experiment_suite(SimConfig(), n_ns=0, n_pred=1)


class TestIntersections:
    def test_stand_in_dataset(self):
        data = gen_intersection_dataset(200, seed=1)
        assert data.feature_names == INTERSECTION_FEATURES
        assert data.features.shape == (200, 2)
        assert np.all(data.features > 0)
        assert np.any(data.counts == 0)
        assert data.true_means is None
