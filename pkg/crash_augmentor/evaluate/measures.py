import numpy as np

from .accuracy import mape
from .base import ArmContext, BaseMeasure
from .hotspot import fi_test, multi_k_average, pmd_test


class FalseIdentificationMeasure(BaseMeasure):
    """FI, усреднённый по k"""

    name = "fi"

    def compute(self, context: ArmContext) -> float:
        return multi_k_average(
            lambda k: fi_test(context.eb_ranking, context.truth_ranking, k), context.ks
        )


class PoissonMeanDifferenceMeasure(BaseMeasure):
    """PMD, усреднённый по k"""

    name = "pmd"

    def compute(self, context: ArmContext) -> float:
        return multi_k_average(
            lambda k: pmd_test(context.ns_test.true_means, context.eb_ranking, context.truth_ranking, k),
            context.ks,
        )


class EbMapeMeasure(BaseMeasure):
    """MAPE оценок EB относительно истинных lambda тестовой выборки"""

    name = "mape_eb"

    def compute(self, context: ArmContext) -> float:
        return mape(context.eb, context.ns_test.true_means)


class CrashMapeMeasure(BaseMeasure):
    """MAPE прогноза SPF на парной выборке прогноза"""

    name = "mape_crash"

    def compute(self, context: ArmContext) -> float:
        return mape(context.predicted_means, context.prediction_test.true_means)


class DispersionMapeMeasure(BaseMeasure):
    name = "mape_dispersion"

    def compute(self, context: ArmContext) -> float:
        return mape(np.array([context.model.dispersion]), np.array([context.true_dispersion]))
