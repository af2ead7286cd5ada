import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
from sklearn.model_selection import train_test_split

from crash_augmentor.cgan import discriminator_accuracy, synthesize, train_cgan
from crash_augmentor.config import SpfFormula, TrainConfig
from crash_augmentor.dataset import Dataset
from crash_augmentor.errors import SplitError
from crash_augmentor.simulate import derive_seed
from crash_augmentor.spf import CoefficientTest, SpfModel, coefficient_significance, fit_spf

from .accuracy import mape
from .report import improvement
from .stats import StatTestResult, ks_test, levene_test, two_sample_t_test

logger = logging.getLogger(__name__)

MIN_ROWS = 4


@dataclass
class RealWorldReport:
    formula: SpfFormula
    split_seed: int
    train_size: int
    test_size: int
    synthetic_size: int
    base_model: SpfModel
    augmented_model: SpfModel
    base_coefficients: List[CoefficientTest]
    augmented_coefficients: List[CoefficientTest]
    distribution_tests: Dict[str, Dict[str, StatTestResult]]
    evaluated_sites: int
    excluded_zero_sites: int
    mape_base: float
    mape_augmented: float
    discriminator_accuracy: Optional[float] = None
    notes: List[str] = field(default_factory=list)

    @property
    def mape_improvement(self) -> Optional[float]:
        return improvement(self.mape_base, self.mape_augmented)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "formula": self.formula.model_dump(),
            "split_seed": self.split_seed,
            "train_size": self.train_size,
            "test_size": self.test_size,
            "synthetic_size": self.synthetic_size,
            "base_model": self.base_model.to_dict(),
            "augmented_model": self.augmented_model.to_dict(),
            "base_coefficients": [c.to_dict() for c in self.base_coefficients],
            "augmented_coefficients": [c.to_dict() for c in self.augmented_coefficients],
            "distribution_tests": {
                feature: {name: result.to_dict() for name, result in tests.items()}
                for feature, tests in self.distribution_tests.items()
            },
            "evaluated_sites": self.evaluated_sites,
            "excluded_zero_sites": self.excluded_zero_sites,
            "mape_base": self.mape_base,
            "mape_augmented": self.mape_augmented,
            "mape_improvement": self.mape_improvement,
            "discriminator_accuracy": self.discriminator_accuracy,
            "notes": self.notes,
        }


def split_dataset(dataset: Dataset, split_seed: int):
    """Случайное разбиение 50/50 на обучающую и тестовую части"""
    if len(dataset) < MIN_ROWS:
        raise SplitError(f"need at least {MIN_ROWS} rows to split, got {len(dataset)}")
    train_rows, test_rows = train_test_split(
        np.arange(len(dataset)), test_size=0.5, random_state=split_seed, shuffle=True
    )
    return dataset.subset(np.sort(train_rows)), dataset.subset(np.sort(test_rows))


def distribution_tests(real: Dataset, synthetic: Dataset) -> Dict[str, Dict[str, StatTestResult]]:
    """t, Левене и KS для каждого признака: синтетика против реальной выборки"""
    return {
        name: {
            "t_test": two_sample_t_test(synthetic.column(name), real.column(name)),
            "levene": levene_test(synthetic.column(name), real.column(name)),
            "ks": ks_test(synthetic.column(name), real.column(name)),
        }
        for name in real.feature_names
    }


def run_realworld_experiment(dataset: Dataset, split_seed: int = 0, synthetic_size: int = 1000,
                             formula: Optional[SpfFormula] = None,
                             train_config: Optional[TrainConfig] = None,
                             exclude_zero_counts: bool = True) -> RealWorldReport:
    """Обучение Base и Augmented SPF на половине данных, MAPE на другой половине"""
    if synthetic_size < 0:
        raise ValueError("synthetic size must be >= 0")
    if formula is None or not formula.terms:
        # объёмы движения входят в SPF логарифмами
        formula = SpfFormula.from_names(list(dataset.feature_names), list(dataset.feature_names))
    train, test = split_dataset(dataset, split_seed)

    log_names = {t.name for t in formula.terms if t.log}
    cgan = train_cgan(
        train,
        train_config or TrainConfig(seed=split_seed),
        log_features=[name in log_names for name in train.feature_names],
    )
    synthetic = synthesize(cgan, synthetic_size, derive_seed(split_seed, "realworld-synthesize"))

    base = fit_spf(train, formula)
    augmented = fit_spf(train.augment(synthetic), formula)

    keep = test.counts > 0 if exclude_zero_counts else np.ones(len(test), dtype=bool)
    evaluated = test.subset(np.flatnonzero(keep))
    notes = []
    if exclude_zero_counts:
        notes.append("sites with zero observed crashes are excluded from MAPE")
    mape_base = mape(base.predict_dataset(evaluated), evaluated.counts)
    mape_augmented = mape(augmented.predict_dataset(evaluated), evaluated.counts)

    report = RealWorldReport(
        formula=formula,
        split_seed=split_seed,
        train_size=len(train),
        test_size=len(test),
        synthetic_size=synthetic_size,
        base_model=base,
        augmented_model=augmented,
        base_coefficients=coefficient_significance(base),
        augmented_coefficients=coefficient_significance(augmented),
        distribution_tests=distribution_tests(train, synthetic),
        evaluated_sites=len(evaluated),
        excluded_zero_sites=int((~keep).sum()),
        mape_base=mape_base,
        mape_augmented=mape_augmented,
        discriminator_accuracy=discriminator_accuracy(cgan, test, derive_seed(split_seed, "realworld-accuracy")),
        notes=notes,
    )
    logger.info(
        f"Real-world run: MAPE base={mape_base:.2f}%, augmented={mape_augmented:.2f}% "
        f"on {len(evaluated)} test sites"
    )
    return report
