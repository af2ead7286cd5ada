import numpy as np
import pytest

from crash_augmentor.config import TrainConfig
from crash_augmentor.errors import SplitError
from crash_augmentor.evaluate import run_realworld_experiment, split_dataset
from crash_augmentor.simulate import gen_intersection_dataset


@pytest.fixture(scope="module")
def intersections():
    return gen_intersection_dataset(120, seed=3)


class TestSplit:
    def test_halves_are_disjoint(self, intersections):
        train, test = split_dataset(intersections, split_seed=0)
        assert len(train) == len(test) == 60
        rows = np.vstack([train.features, test.features])
        assert np.unique(rows, axis=0).shape[0] == np.unique(intersections.features, axis=0).shape[0]

    def test_split_is_seeded(self, intersections):
        a, _ = split_dataset(intersections, 5)
        b, _ = split_dataset(intersections, 5)
        np.testing.assert_array_equal(a.counts, b.counts)

    def test_too_small(self, intersections):
        with pytest.raises(SplitError):
            split_dataset(intersections.subset([0, 1, 2]), 0)


class TestRealWorldExperiment:
    def test_report(self, intersections):
        report = run_realworld_experiment(
            intersections, split_seed=1, synthetic_size=50, train_config=TrainConfig(epochs=5, seed=1)
        )
        assert report.formula.log_flags == [True, True]
        assert report.train_size == report.test_size == 60
        assert report.evaluated_sites + report.excluded_zero_sites == 60
        assert report.mape_base > 0 and report.mape_augmented > 0
        assert set(report.distribution_tests) == {"aadt_major", "aadt_minor"}
        assert report.distribution_tests["aadt_major"]["ks"].valid
        assert 0.0 <= report.discriminator_accuracy <= 1.0
        data = report.to_dict()
        assert data["mape_improvement"] == report.mape_improvement
        assert [c["name"] for c in data["base_coefficients"]] == ["intercept", "ln(aadt_major)", "ln(aadt_minor)"]

    def test_no_synthetic_rows(self, intersections):
        report = run_realworld_experiment(
            intersections, split_seed=1, synthetic_size=0, train_config=TrainConfig(epochs=2, seed=1)
        )
        np.testing.assert_array_equal(report.base_model.coefficients, report.augmented_model.coefficients)
        assert report.mape_improvement == 0.0
        tests = report.distribution_tests["aadt_minor"]
        assert not tests["t_test"].valid
        assert not tests["ks"].valid

    def test_negative_synthetic_size(self, intersections):
        with pytest.raises(ValueError):
            run_realworld_experiment(intersections, synthetic_size=-1)
