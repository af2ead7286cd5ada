import logging
from dataclasses import asdict, dataclass
from typing import Dict, Optional

import numpy as np
from scipy import stats

logger = logging.getLogger(__name__)


@dataclass
class StatTestResult:
    """Результат статистического теста; valid=False при вырожденных выборках"""

    statistic: Optional[float]
    p_value: Optional[float]
    valid: bool = True
    note: str = ""

    def to_dict(self) -> Dict:
        return asdict(self)


def _invalid(note: str) -> StatTestResult:
    logger.debug(f"Statistical test skipped: {note}")
    return StatTestResult(statistic=None, p_value=None, valid=False, note=note)


def _finished(statistic: float, p_value: float, what: str) -> StatTestResult:
    if not (np.isfinite(statistic) and np.isfinite(p_value)):
        return _invalid(f"{what}: undefined statistic (zero variance)")
    return StatTestResult(statistic=float(statistic), p_value=float(np.clip(p_value, 0.0, 1.0)))


def _samples(a, b):
    return np.asarray(a, dtype=np.float64).reshape(-1), np.asarray(b, dtype=np.float64).reshape(-1)


def two_sample_t_test(a, b) -> StatTestResult:
    """t-тест Уэлча (дисперсии не предполагаются равными)"""
    a, b = _samples(a, b)
    if a.shape[0] < 2 or b.shape[0] < 2:
        return _invalid("t-test needs at least 2 values per sample")
    result = stats.ttest_ind(a, b, equal_var=False)
    return _finished(result.statistic, result.pvalue, "t-test")


def levene_test(a, b) -> StatTestResult:
    """Тест Левене с центрированием по медиане"""
    a, b = _samples(a, b)
    if a.shape[0] < 2 or b.shape[0] < 2:
        return _invalid("Levene test needs at least 2 values per sample")
    with np.errstate(divide="ignore", invalid="ignore"):
        result = stats.levene(a, b, center="median")
    return _finished(result.statistic, result.pvalue, "Levene test")


def ks_test(a, b) -> StatTestResult:
    """Двухвыборочный KS; p-value по асимптотике Колмогорова с поправкой на малые выборки"""
    a, b = _samples(a, b)
    if a.shape[0] < 1 or b.shape[0] < 1:
        return _invalid("KS test needs non-empty samples")
    d = stats.ks_2samp(a, b).statistic
    en = np.sqrt(a.shape[0] * b.shape[0] / (a.shape[0] + b.shape[0]))
    p_value = stats.kstwobign.sf((en + 0.12 + 0.11 / en) * d)
    return _finished(d, p_value, "KS test")


def paired_t_test(a, b) -> StatTestResult:
    a, b = _samples(a, b)
    if a.shape != b.shape:
        raise ValueError("paired samples must have equal length")
    if a.shape[0] < 2:
        return _invalid("paired t-test needs at least 2 pairs")
    with np.errstate(divide="ignore", invalid="ignore"):
        result = stats.ttest_rel(a, b)
    return _finished(result.statistic, result.pvalue, "paired t-test")
