from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DEFAULT_KS = (5, 10, 15, 20)


@dataclass(frozen=True)
class HotspotRanking:
    """Перестановка площадок по убыванию оценки; при равенстве меньший индекс раньше"""

    order: np.ndarray
    source: str

    def __len__(self) -> int:
        return self.order.shape[0]

    def top(self, k: int) -> np.ndarray:
        _check_k(k, len(self))
        return self.order[:k]


def _check_k(k: int, site_count: int) -> None:
    if not 0 < k <= site_count:
        raise ValueError(f"k must be in [1, {site_count}], got {k}")


def rank_sites(scores: np.ndarray, source: str = "eb") -> HotspotRanking:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(scores)):
        raise ValueError("site scores must be finite")
    order = np.lexsort((np.arange(scores.shape[0]), -scores))
    return HotspotRanking(order=order, source=source)


def fi_test(suggested: HotspotRanking, truth: HotspotRanking, k: int) -> float:
    """Доля ложно выявленных мест в top-k, %"""
    if len(suggested) != len(truth):
        raise ValueError("rankings cover different numbers of sites")
    missed = np.setdiff1d(suggested.top(k), truth.top(k), assume_unique=True)
    return 100.0 * missed.shape[0] / k


def pmd_test(true_means: np.ndarray, suggested: HotspotRanking, truth: HotspotRanking, k: int) -> float:
    """Недобор суммы истинных lambda в предложенном top-k относительно истинного top-k, %"""
    lam = np.asarray(true_means, dtype=np.float64)
    if lam.shape[0] != len(suggested) or len(suggested) != len(truth):
        raise ValueError("true means and rankings cover different numbers of sites")
    # суммы по отсортированным индексам: одинаковые множества дают одинаковые суммы
    best = lam[np.sort(truth.top(k))].sum()
    chosen = lam[np.sort(suggested.top(k))].sum()
    if best <= 0:
        return 0.0
    return 100.0 * (best - chosen) / best


def multi_k_average(measure: Callable[[int], float], ks: Sequence[int] = DEFAULT_KS) -> float:
    if not ks:
        raise ValueError("at least one k is required")
    return float(np.mean([measure(k) for k in ks]))
