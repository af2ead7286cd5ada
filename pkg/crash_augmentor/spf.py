import json
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy import stats

from .config import SpfFormula
from .dataset import Dataset
from .errors import (
    CollinearFeatures,
    ConvergenceFailure,
    DegenerateResponse,
    InsufficientData,
    InvalidFeatureValue,
    ModelFormatError,
)

logger = logging.getLogger(__name__)

IRLS_TOLERANCE = 1e-8
IRLS_MAX_ITERATIONS = 100
MAX_STEP_HALVINGS = 30


def design_matrix(features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    return np.hstack([np.ones((x.shape[0], 1)), x])


def _neg_log_likelihood(x: np.ndarray, y: np.ndarray, beta: np.ndarray) -> float:
    # log(y!) не зависит от beta и опущен
    eta = x @ beta
    with np.errstate(over="ignore", invalid="ignore"):
        return float(np.sum(np.exp(eta) - y * eta))


@dataclass
class PoissonFit:
    coefficients: np.ndarray
    covariance: np.ndarray
    iterations: int
    trace: List[float] = field(default_factory=list)


def fit_poisson(features: np.ndarray, counts: np.ndarray,
                tol: float = IRLS_TOLERANCE, max_iter: int = IRLS_MAX_ITERATIONS) -> PoissonFit:
    """Пуассоновская регрессия с лог-связью методом IRLS (с уменьшением шага)"""
    y = np.asarray(counts, dtype=np.float64).reshape(-1)
    x = np.asarray(features, dtype=np.float64)
    x = design_matrix(x.reshape(-1, 1) if x.ndim == 1 else x)
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"{x.shape[0]} feature rows but {y.shape[0]} counts")
    n, p = x.shape
    if n < p + 2:
        raise InsufficientData(f"need at least {p + 2} rows to fit {p - 1} features, got {n}")
    if not np.any(y > 0):
        raise DegenerateResponse("all crash counts are zero")
    if np.linalg.matrix_rank(x) < p:
        raise CollinearFeatures(f"design matrix of {p} columns is rank deficient")

    beta = np.zeros(p)
    beta[0] = np.log(y.mean() + 0.1)
    objective = _neg_log_likelihood(x, y, beta)
    trace: List[float] = []
    for iteration in range(1, max_iter + 1):
        eta = x @ beta
        mu = np.exp(eta)
        working = eta + (y - mu) / mu
        xtw = x.T * mu
        try:
            target = np.linalg.solve(xtw @ x, xtw @ working)
        except np.linalg.LinAlgError as e:
            raise CollinearFeatures(f"singular information matrix at iteration {iteration}") from e

        step = target - beta
        for _ in range(MAX_STEP_HALVINGS):
            candidate = _neg_log_likelihood(x, y, beta + step)
            if np.isfinite(candidate) and candidate <= objective + 1e-10 * (1.0 + abs(objective)):
                break
            step = step / 2.0
        else:
            raise ConvergenceFailure("IRLS step halving failed to decrease the deviance", trace)

        beta = beta + step
        objective = candidate
        delta = float(np.max(np.abs(step)))
        trace.append(delta)
        if delta < tol:
            break
    else:
        raise ConvergenceFailure(f"IRLS did not converge in {max_iter} iterations", trace)

    mu = np.exp(x @ beta)
    information = (x.T * mu) @ x
    try:
        covariance = np.linalg.inv(information)
    except np.linalg.LinAlgError as e:
        raise CollinearFeatures("Fisher information is singular") from e
    covariance = 0.5 * (covariance + covariance.T)
    return PoissonFit(coefficients=beta, covariance=covariance, iterations=len(trace), trace=trace)


def estimate_dispersion(counts: np.ndarray, mu: np.ndarray) -> float:
    """alpha из вспомогательной регрессии ((y - mu)^2 - y) / mu = alpha * mu без константы, >= 0"""
    y = np.asarray(counts, dtype=np.float64).reshape(-1)
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    if y.size == 0 or y.shape != mu.shape:
        raise ValueError("counts and means must be non-empty and of equal length")
    if np.any(mu <= 0):
        raise ValueError("fitted means must be > 0")
    response = ((y - mu) ** 2 - y) / mu
    solution, *_ = np.linalg.lstsq(mu.reshape(-1, 1), response, rcond=None)
    return max(0.0, float(solution[0]))


@dataclass
class SpfModel:
    """NB SPF: mu = exp(beta0 + sum beta_j * x_j), x_j при флаге заменяется на ln(x_j)"""

    coefficients: np.ndarray
    dispersion: float
    feature_names: Tuple[str, ...]
    covariance: np.ndarray
    log_transform_flags: Tuple[bool, ...] = ()

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64).reshape(-1)
        self.feature_names = tuple(self.feature_names)
        if not self.log_transform_flags:
            self.log_transform_flags = (False,) * len(self.feature_names)
        self.log_transform_flags = tuple(bool(f) for f in self.log_transform_flags)
        p = len(self.feature_names) + 1
        self.covariance = np.asarray(self.covariance, dtype=np.float64).reshape(p, p)
        if self.coefficients.shape[0] != p or len(self.log_transform_flags) != p - 1:
            raise ValueError(f"model with {p - 1} features needs {p} coefficients and {p - 1} flags")
        if self.dispersion < 0:
            raise ValueError("dispersion must be >= 0")

    @property
    def intercept(self) -> float:
        return float(self.coefficients[0])

    def transform(self, features: np.ndarray) -> np.ndarray:
        x = np.array(features, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if x.shape[1] != len(self.feature_names):
            raise ValueError(f"expected {len(self.feature_names)} features, got {x.shape[1]}")
        for j, flag in enumerate(self.log_transform_flags):
            if flag:
                if np.any(x[:, j] <= 0):
                    raise InvalidFeatureValue(
                        f"'{self.feature_names[j]}' must be > 0 for ln(), got {x[:, j].min()}"
                    )
                x[:, j] = np.log(x[:, j])
        return x

    def predict(self, features: np.ndarray) -> Union[float, np.ndarray]:
        single = np.ndim(features) == 1
        mu = np.exp(design_matrix(self.transform(features)) @ self.coefficients)
        return float(mu[0]) if single else mu

    def predict_dataset(self, dataset: Dataset) -> np.ndarray:
        if dataset.feature_size == 0 or not self.feature_names:
            return np.full(len(dataset), np.exp(self.intercept))
        return self.predict(np.column_stack([dataset.column(n) for n in self.feature_names]))

    def equation(self) -> str:
        terms = [f"{self.intercept:.4f}"]
        for name, flag, b in zip(self.feature_names, self.log_transform_flags, self.coefficients[1:]):
            terms.append(f"{b:+.4f} * {'ln(' + name + ')' if flag else name}")
        return f"mu = exp({' '.join(terms)}), alpha = {self.dispersion:.4f}"

    def to_dict(self) -> Dict:
        return {
            "feature_names": list(self.feature_names),
            "log_transform_flags": list(self.log_transform_flags),
            "coefficients": self.coefficients.tolist(),
            "dispersion": self.dispersion,
            "covariance": self.covariance.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "SpfModel":
        try:
            return cls(
                coefficients=data["coefficients"],
                dispersion=float(data["dispersion"]),
                feature_names=data["feature_names"],
                covariance=data["covariance"],
                log_transform_flags=data.get("log_transform_flags", ()),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ModelFormatError(f"invalid SPF model: {e}") from e

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: Path) -> "SpfModel":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ModelFormatError(f"{path}: {e}") from e
        return cls.from_dict(data)


def fit_spf(dataset: Dataset, formula: Optional[SpfFormula] = None) -> SpfModel:
    """Двухшаговая оценка: Пуассон IRLS -> alpha вспомогательной регрессией"""
    if formula is None or not formula.terms:
        formula = SpfFormula.from_names(list(dataset.feature_names))
    flags = tuple(formula.log_flags)
    model = SpfModel(
        coefficients=np.zeros(len(formula.terms) + 1),
        dispersion=0.0,
        feature_names=tuple(formula.names),
        covariance=np.zeros((len(formula.terms) + 1,) * 2),
        log_transform_flags=flags,
    )
    raw = np.column_stack([dataset.column(n) for n in formula.names]) if formula.terms else np.empty((len(dataset), 0))
    x = model.transform(raw) if formula.terms else raw

    fit = fit_poisson(x, dataset.counts)
    mu = np.exp(design_matrix(x) @ fit.coefficients)
    model.coefficients = fit.coefficients
    model.covariance = fit.covariance
    model.dispersion = estimate_dispersion(dataset.counts, mu)
    logger.debug(f"SPF fitted in {fit.iterations} IRLS iterations on {len(dataset)} rows: {model.equation()}")
    return model


def predict(model: SpfModel, features: np.ndarray) -> Union[float, np.ndarray]:
    return model.predict(features)


class BaseWeighting(ABC):
    """Вес w при прогнозе SPF в EB = w * mu + (1 - w) * y"""

    name: str = ""

    @abstractmethod
    def weight(self, mu: np.ndarray, dispersion: float) -> np.ndarray:
        pass


class PublishedWeighting(BaseWeighting):
    """w = 1 / (1 + alpha * mu)"""

    name = "published"

    def weight(self, mu: np.ndarray, dispersion: float) -> np.ndarray:
        return 1.0 / (1.0 + dispersion * np.asarray(mu, dtype=np.float64))


class InverseDispersionWeighting(BaseWeighting):
    """w = phi / (phi + mu), переданный скаляр трактуется непосредственно как phi"""

    name = "inverse-dispersion"

    def weight(self, mu: np.ndarray, dispersion: float) -> np.ndarray:
        mu = np.asarray(mu, dtype=np.float64)
        return dispersion / (dispersion + mu)


WEIGHTINGS: Dict[str, BaseWeighting] = {
    w.name: w for w in (PublishedWeighting(), InverseDispersionWeighting())
}


def get_weighting(weighting: Union[str, BaseWeighting]) -> BaseWeighting:
    if isinstance(weighting, BaseWeighting):
        return weighting
    try:
        return WEIGHTINGS[weighting]
    except KeyError:
        raise ValueError(f"unknown EB weighting '{weighting}', have {sorted(WEIGHTINGS)}") from None


@dataclass
class EbEstimate:
    site_id: int
    mu: float
    observed: int
    eb: float
    weight: float


def eb_estimates(mu: np.ndarray, observed: np.ndarray, dispersion: float,
                 weighting: Union[str, BaseWeighting] = "published") -> Tuple[np.ndarray, np.ndarray]:
    """Векторный EB: возвращает (оценки, веса)"""
    mu = np.asarray(mu, dtype=np.float64)
    y = np.asarray(observed, dtype=np.float64)
    if mu.shape != y.shape:
        raise ValueError("mu and observed counts differ in shape")
    if np.any(mu <= 0):
        raise ValueError("SPF predictions must be > 0")
    if np.any(y < 0):
        raise ValueError("observed counts must be >= 0")
    if dispersion < 0:
        raise ValueError("dispersion must be >= 0")
    w = get_weighting(weighting).weight(mu, dispersion)
    eb = w * mu + (1.0 - w) * y
    # выпуклая комбинация: погрешность округления не выводит за [min, max]
    return np.clip(eb, np.minimum(mu, y), np.maximum(mu, y)), w


def eb_estimate(mu: float, observed: int, dispersion: float,
                weighting: Union[str, BaseWeighting] = "published", site_id: int = 0) -> EbEstimate:
    eb, w = eb_estimates(np.array([mu]), np.array([observed]), dispersion, weighting)
    return EbEstimate(site_id=site_id, mu=float(mu), observed=int(observed), eb=float(eb[0]), weight=float(w[0]))


@dataclass
class CoefficientTest:
    name: str
    estimate: float
    std_error: float
    z_value: Optional[float]
    p_value: Optional[float]
    valid: bool = True

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "estimate": self.estimate,
            "std_error": self.std_error,
            "z_value": self.z_value,
            "p_value": self.p_value,
            "valid": self.valid,
        }


def coefficient_significance(model: SpfModel) -> List[CoefficientTest]:
    """Тест Вальда для каждого коэффициента (нормальная аппроксимация)"""
    names = ["intercept"] + [
        f"ln({n})" if flag else n for n, flag in zip(model.feature_names, model.log_transform_flags)
    ]
    variances = np.diag(model.covariance)
    results = []
    for name, estimate, variance in zip(names, model.coefficients, variances):
        se = float(np.sqrt(variance)) if variance > 0 else 0.0
        if se == 0.0 or not np.isfinite(se):
            results.append(CoefficientTest(name, float(estimate), se, None, None, valid=False))
            continue
        z = float(estimate) / se
        results.append(CoefficientTest(name, float(estimate), se, z, float(2.0 * stats.norm.sf(abs(z)))))
    return results
