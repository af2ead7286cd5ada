import numpy as np
import pytest

from crash_augmentor.evaluate import fi_test, mape, multi_k_average, pmd_test, rank_sites


class TestRanking:
    def test_ties_keep_lower_index_first(self):
        ranking = rank_sites(np.array([1.0, 3.0, 3.0, 2.0]))
        np.testing.assert_array_equal(ranking.order, [1, 2, 3, 0])
        np.testing.assert_array_equal(ranking.top(2), [1, 2])

    @pytest.mark.parametrize("k", [0, 5])
    def test_k_out_of_range(self, k):
        ranking = rank_sites(np.arange(4.0))
        with pytest.raises(ValueError):
            ranking.top(k)

    def test_non_finite_scores(self):
        with pytest.raises(ValueError):
            rank_sites(np.array([1.0, np.nan]))


class TestFalseIdentification:
    def test_identical_rankings(self):
        ranking = rank_sites(np.array([4.0, 1.0, 3.0, 2.0]))
        assert fi_test(ranking, ranking, 2) == 0.0

    def test_disjoint_top_sets(self):
        truth = rank_sites(np.array([4.0, 3.0, 1.0, 2.0]))
        suggested = rank_sites(np.array([1.0, 2.0, 4.0, 3.0]))
        assert fi_test(suggested, truth, 2) == 100.0

    def test_matches_set_difference_oracle(self):
        rng = np.random.default_rng(2)
        lam = rng.gamma(2.0, 1.0, size=100)
        truth = rank_sites(lam)
        for _ in range(200):
            suggested = rank_sites(rng.uniform(size=100))
            for k in (5, 10, 15, 20):
                chosen = set(suggested.order[:k].tolist())
                best = set(truth.order[:k].tolist())
                assert fi_test(suggested, truth, k) == pytest.approx(100.0 * len(chosen - best) / k)
                best_sum = sum(lam[i] for i in best)
                expected = 100.0 * (best_sum - sum(lam[i] for i in chosen)) / best_sum
                assert pmd_test(lam, suggested, truth, k) == pytest.approx(expected, abs=1e-9)

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(0)
        scores = rng.uniform(0.1, 10, size=50)
        truth = rank_sites(rng.uniform(0.1, 10, size=50))
        a = fi_test(rank_sites(scores), truth, 10)
        b = fi_test(rank_sites(np.log(scores) * 3 + 1), truth, 10)
        assert a == b


class TestPoissonMeanDifference:
    def test_worked_example(self):
        lam = np.array([10.0, 5.0, 1.0])
        truth = rank_sites(lam)
        suggested = rank_sites(np.array([1.0, 2.0, 0.0]))
        assert pmd_test(lam, suggested, truth, 1) == pytest.approx(50.0)
        assert pmd_test(lam, truth, truth, 2) == 0.0

    def test_non_negative(self):
        rng = np.random.default_rng(1)
        lam = rng.gamma(2.0, 1.0, size=40)
        truth = rank_sites(lam)
        for _ in range(20):
            suggested = rank_sites(rng.uniform(size=40))
            assert pmd_test(lam, suggested, truth, 10) >= 0.0

    def test_length_mismatch(self):
        ranking = rank_sites(np.arange(3.0))
        with pytest.raises(ValueError):
            pmd_test(np.ones(4), ranking, ranking, 1)


class TestAverages:
    def test_multi_k_average(self):
        assert multi_k_average(float) == 12.5
        assert multi_k_average(lambda k: 2.0 * k, ks=[1, 3]) == 4.0

    def test_empty_ks(self):
        with pytest.raises(ValueError):
            multi_k_average(float, ks=[])


class TestMape:
    def test_percentage(self):
        assert mape([110.0, 90.0], [100.0, 100.0]) == pytest.approx(10.0)
        assert mape([2.0], [2.0]) == 0.0

    def test_zero_truth(self):
        with pytest.raises(ValueError):
            mape([1.0, 2.0], [0.0, 2.0])
        assert mape([1.0, 3.0], [0.0, 2.0], exclude_zero_truth=True) == pytest.approx(50.0)
        with pytest.raises(ValueError):
            mape([1.0], [0.0], exclude_zero_truth=True)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            mape([1.0, 2.0], [1.0])
