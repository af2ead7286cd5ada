import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import DatasetFormatError

logger = logging.getLogger(__name__)

COUNT_COLUMN = "count"
LAMBDA_COLUMN = "lambda"
SYNTHETIC_COLUMN = "synthetic"
FLOAT_FORMAT = "%.17g"


def default_feature_names(feature_size: int) -> Tuple[str, ...]:
    return tuple(f"x{i + 1}" for i in range(feature_size))


@dataclass
class Dataset:
    """Матрица признаков + вектор числа ДТП (+ истинные средние для симуляции)"""

    features: np.ndarray
    counts: np.ndarray
    feature_names: Tuple[str, ...] = ()
    true_means: Optional[np.ndarray] = None
    synthetic: Optional[np.ndarray] = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim == 1:
            self.features = self.features.reshape(-1, 1)
        self.counts = np.asarray(self.counts, dtype=np.int64).reshape(-1)
        n, fs = self.features.shape
        if self.counts.shape[0] != n:
            raise ValueError(f"{n} feature rows but {self.counts.shape[0]} counts")
        if np.any(self.counts < 0):
            raise ValueError("crash counts must be non-negative")
        if not self.feature_names:
            self.feature_names = default_feature_names(fs)
        self.feature_names = tuple(self.feature_names)
        if len(self.feature_names) != fs:
            raise ValueError(f"{len(self.feature_names)} feature names for {fs} features")
        if self.true_means is not None:
            self.true_means = np.asarray(self.true_means, dtype=np.float64).reshape(-1)
            if self.true_means.shape[0] != n:
                raise ValueError("true_means length differs from row count")
        if self.synthetic is None:
            self.synthetic = np.zeros(n, dtype=bool)
        self.synthetic = np.asarray(self.synthetic, dtype=bool).reshape(-1)

    def __len__(self) -> int:
        return self.counts.shape[0]

    @property
    def feature_size(self) -> int:
        return self.features.shape[1]

    def column(self, name: str) -> np.ndarray:
        try:
            return self.features[:, self.feature_names.index(name)]
        except ValueError:
            raise KeyError(f"unknown feature '{name}', have {list(self.feature_names)}") from None

    def subset(self, rows: Sequence[int]) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(
            features=self.features[rows],
            counts=self.counts[rows],
            feature_names=self.feature_names,
            true_means=None if self.true_means is None else self.true_means[rows],
            synthetic=self.synthetic[rows],
        )

    def augment(self, extra: "Dataset") -> "Dataset":
        """Исходные строки + синтетические; истинные средние только у исходных"""
        if extra.feature_names != self.feature_names:
            raise ValueError(
                f"feature mismatch: {list(self.feature_names)} vs {list(extra.feature_names)}"
            )
        return Dataset(
            features=np.vstack([self.features, extra.features]),
            counts=np.concatenate([self.counts, extra.counts]),
            feature_names=self.feature_names,
            synthetic=np.concatenate([self.synthetic, extra.synthetic]),
        )

    def to_frame(self, include_synthetic: bool = False) -> pd.DataFrame:
        frame = pd.DataFrame(self.features, columns=list(self.feature_names))
        frame[COUNT_COLUMN] = self.counts
        if self.true_means is not None:
            frame[LAMBDA_COLUMN] = self.true_means
        if include_synthetic:
            frame[SYNTHETIC_COLUMN] = self.synthetic.astype(np.int64)
        return frame


def write_csv(dataset: Dataset, path: Path, include_synthetic: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dataset.to_frame(include_synthetic).to_csv(
        path, index=False, float_format=FLOAT_FORMAT, encoding="utf-8", lineterminator="\n"
    )
    logger.debug(f"Wrote {len(dataset)} rows to {path}")
    return path


def read_csv(path: Path) -> Dataset:
    """Читает CSV `x1..xFS,count[,lambda][,synthetic]`; ошибки с номером строки"""
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.ParserError as e:
        raise DatasetFormatError(f"{path}: {e}") from e
    except pd.errors.EmptyDataError as e:
        raise DatasetFormatError(f"{path}: empty file") from e

    if COUNT_COLUMN not in frame.columns:
        raise DatasetFormatError(f"{path}: missing '{COUNT_COLUMN}' column")
    optional = {LAMBDA_COLUMN, SYNTHETIC_COLUMN}
    feature_names: List[str] = [c for c in frame.columns if c != COUNT_COLUMN and c not in optional]
    if not feature_names:
        raise DatasetFormatError(f"{path}: no feature columns")

    numeric = frame.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna()
    if bad.to_numpy().any():
        row = int(np.argmax(bad.any(axis=1).to_numpy()))
        col = bad.columns[bad.iloc[row].to_numpy()][0]
        raise DatasetFormatError(
            f"non-numeric value '{frame.iloc[row][col]}' in column '{col}'", row=row + 1
        )

    counts = numeric[COUNT_COLUMN].to_numpy(dtype=np.float64)
    invalid = (counts < 0) | (counts != np.floor(counts))
    if invalid.any():
        row = int(np.argmax(invalid))
        raise DatasetFormatError("crash count must be a non-negative integer", row=row + 1)

    return Dataset(
        features=numeric[feature_names].to_numpy(dtype=np.float64),
        counts=counts.astype(np.int64),
        feature_names=tuple(feature_names),
        true_means=numeric[LAMBDA_COLUMN].to_numpy(dtype=np.float64) if LAMBDA_COLUMN in numeric else None,
        synthetic=numeric[SYNTHETIC_COLUMN].to_numpy() != 0 if SYNTHETIC_COLUMN in numeric else None,
    )
