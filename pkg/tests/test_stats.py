import numpy as np
import pytest
from scipy import stats

from crash_augmentor.evaluate import ks_test, levene_test, paired_t_test, two_sample_t_test


@pytest.fixture
def samples():
    rng = np.random.default_rng(0)
    return rng.normal(0.0, 1.0, size=80), rng.normal(0.5, 2.0, size=60)


class TestTwoSample:
    def test_welch_matches_scipy(self, samples):
        a, b = samples
        result = two_sample_t_test(a, b)
        expected = stats.ttest_ind(a, b, equal_var=False)
        assert result.valid
        assert result.statistic == pytest.approx(expected.statistic)
        assert result.p_value == pytest.approx(expected.pvalue)

    def test_levene_matches_scipy(self, samples):
        a, b = samples
        result = levene_test(a, b)
        expected = stats.levene(a, b, center="median")
        assert result.statistic == pytest.approx(expected.statistic)
        assert result.p_value < 0.05

    def test_constant_samples_are_invalid(self):
        result = two_sample_t_test(np.ones(5), np.ones(5))
        assert not result.valid
        assert result.p_value is None
        assert not levene_test(np.ones(5), np.full(5, 2.0)).valid

    def test_too_few_values(self):
        assert not two_sample_t_test([1.0], [1.0, 2.0]).valid
        assert not levene_test([1.0], [1.0, 2.0]).valid


class TestKolmogorovSmirnov:
    def test_identical_samples(self):
        x = np.arange(20.0)
        result = ks_test(x, x)
        assert result.statistic == 0.0
        assert result.p_value == pytest.approx(1.0)

    def test_shifted_samples(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=200), rng.normal(1.0, size=200)
        result = ks_test(a, b)
        assert result.statistic == pytest.approx(stats.ks_2samp(a, b).statistic)
        assert result.statistic > 0.2
        assert result.p_value < 1e-3

    def test_small_sample_correction(self):
        a = np.array([0.0, 1.0, 2.0, 3.0])
        b = np.array([10.0, 11.0, 12.0, 13.0])
        result = ks_test(a, b)
        en = np.sqrt(16 / 8)
        assert result.statistic == 1.0
        assert result.p_value == pytest.approx(stats.kstwobign.sf(en + 0.12 + 0.11 / en))

    def test_empty_sample(self):
        assert not ks_test([], [1.0]).valid


@pytest.mark.slow
@pytest.mark.parametrize("test", [two_sample_t_test, levene_test, ks_test])
def test_type_one_error_rate(test):
    rng = np.random.default_rng(3)
    rejections = sum(
        test(rng.normal(size=100), rng.normal(size=100)).p_value < 0.05 for _ in range(2000)
    )
    assert 0.03 <= rejections / 2000 <= 0.07


class TestPaired:
    def test_matches_scipy(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=30)
        b = a + rng.normal(0.3, 0.1, size=30)
        result = paired_t_test(a, b)
        expected = stats.ttest_rel(a, b)
        assert result.statistic == pytest.approx(expected.statistic)
        assert result.p_value < 1e-6

    def test_equal_pairs_are_invalid(self):
        x = np.arange(5.0)
        assert not paired_t_test(x, x).valid

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            paired_t_test([1.0, 2.0], [1.0])

    def test_single_pair(self):
        assert not paired_t_test([1.0], [2.0]).valid

    def test_to_dict(self):
        result = paired_t_test([1.0, 2.0, 4.0], [1.5, 2.0, 3.0])
        assert set(result.to_dict()) == {"statistic", "p_value", "valid", "note"}
