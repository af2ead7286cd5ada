from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from crash_augmentor.dataset import Dataset
from crash_augmentor.spf import BaseWeighting, SpfModel, eb_estimates

from .hotspot import HotspotRanking, rank_sites

METRICS = ("fi", "pmd", "mape_eb", "mape_crash", "mape_dispersion")


@dataclass
class MetricSet:
    """Меры одной ветви (Base или Augmented) на одной репликации, в процентах"""

    fi: float
    pmd: float
    mape_eb: float
    mape_crash: float
    mape_dispersion: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass
class ArmContext:
    """Всё, что нужно мерам для оценки одной обученной SPF"""

    model: SpfModel
    ns_test: Dataset
    prediction_test: Dataset
    true_dispersion: float
    weighting: BaseWeighting
    ks: Sequence[int] = (5, 10, 15, 20)

    def __post_init__(self):
        if self.ns_test.true_means is None or self.prediction_test.true_means is None:
            raise ValueError("evaluation needs datasets with true means")

    @cached_property
    def spf_means(self) -> np.ndarray:
        return self.model.predict_dataset(self.ns_test)

    @cached_property
    def eb(self) -> np.ndarray:
        eb, _ = eb_estimates(self.spf_means, self.ns_test.counts, self.model.dispersion, self.weighting)
        return eb

    @cached_property
    def eb_ranking(self) -> HotspotRanking:
        return rank_sites(self.eb, source="eb")

    @cached_property
    def truth_ranking(self) -> HotspotRanking:
        return rank_sites(self.ns_test.true_means, source="lambda")

    @cached_property
    def predicted_means(self) -> np.ndarray:
        return self.model.predict_dataset(self.prediction_test)


class BaseMeasure(ABC):
    """Базовый класс для всех мер качества"""

    name: str = ""

    def __init__(self, config: Optional[Dict] = None):
        self.config = config or {}

    @abstractmethod
    def compute(self, context: ArmContext) -> float:
        """Возвращает значение меры в процентах"""
        pass


@dataclass
class ReplicationResult:
    """Строки отчёта одной репликации (по строке на размер синтетики и ветвь) либо ошибка"""

    dispersion: float
    replication: int
    rows: List[Dict[str, Any]] = field(default_factory=list)
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None
