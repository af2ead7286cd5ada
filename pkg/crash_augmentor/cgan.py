import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.preprocessing import MinMaxScaler

from .config import TrainConfig
from .dataset import Dataset
from .errors import InvalidFeatureValue, ModelFormatError, TrainingDivergedError
from .nn_core import (
    Activation,
    AdamState,
    DenseLayer,
    DenseNetwork,
    adam_step,
    bce_gradient,
    bce_loss,
    dump_network,
    parse_network,
)

logger = logging.getLogger(__name__)

BRANCH_WIDTH = 100
TRUNK_WIDTH = 50
MODEL_MAGIC = "crash-cgan v1"

SeedLike = Union[int, np.random.Generator]


def build_generator(feature_size: int, rng: np.random.Generator) -> DenseNetwork:
    """Генератор: (y, z) -> Dense(100, ELU) x2 -> Concat(200) -> 3 x Dense(50, ELU) -> Dense(FS, ReLU)"""
    if feature_size < 1:
        raise ValueError(f"feature size must be >= 1, got {feature_size}")
    branches = [
        [DenseLayer.glorot(1, BRANCH_WIDTH, Activation.ELU, rng)],
        [DenseLayer.glorot(feature_size, BRANCH_WIDTH, Activation.ELU, rng)],
    ]
    trunk = [
        DenseLayer.glorot(2 * BRANCH_WIDTH, TRUNK_WIDTH, Activation.ELU, rng),
        DenseLayer.glorot(TRUNK_WIDTH, TRUNK_WIDTH, Activation.ELU, rng),
        DenseLayer.glorot(TRUNK_WIDTH, TRUNK_WIDTH, Activation.ELU, rng),
        DenseLayer.glorot(TRUNK_WIDTH, feature_size, Activation.RELU, rng),
    ]
    return DenseNetwork(input_widths=[1, feature_size], branches=branches, trunk=trunk)


def build_discriminator(feature_size: int, rng: np.random.Generator) -> DenseNetwork:
    """Дискриминатор: (X, y) -> Dense(100, ELU) x2 -> Concat(200) -> 2 x Dense(50, ELU) -> Dense(1, Sigmoid)"""
    if feature_size < 1:
        raise ValueError(f"feature size must be >= 1, got {feature_size}")
    branches = [
        [DenseLayer.glorot(feature_size, BRANCH_WIDTH, Activation.ELU, rng)],
        [DenseLayer.glorot(1, BRANCH_WIDTH, Activation.ELU, rng)],
    ]
    trunk = [
        DenseLayer.glorot(2 * BRANCH_WIDTH, TRUNK_WIDTH, Activation.ELU, rng),
        DenseLayer.glorot(TRUNK_WIDTH, TRUNK_WIDTH, Activation.ELU, rng),
        DenseLayer.glorot(TRUNK_WIDTH, 1, Activation.SIGMOID, rng),
    ]
    return DenseNetwork(input_widths=[feature_size, 1], branches=branches, trunk=trunk)


@dataclass
class NormalizationStats:
    """Минимумы и максимумы признаков обучающей выборки"""

    minimum: np.ndarray
    maximum: np.ndarray
    _scaler: MinMaxScaler = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.minimum = np.asarray(self.minimum, dtype=np.float64).reshape(-1)
        self.maximum = np.asarray(self.maximum, dtype=np.float64).reshape(-1)
        if self.minimum.shape != self.maximum.shape:
            raise ValueError("minimum and maximum have different lengths")
        if np.any(self.maximum < self.minimum):
            raise ValueError("maximum must be >= minimum for every feature")
        self._scaler = MinMaxScaler().fit(np.vstack([self.minimum, self.maximum]))

    @classmethod
    def fit(cls, features: np.ndarray) -> "NormalizationStats":
        scaler = MinMaxScaler().fit(np.asarray(features, dtype=np.float64))
        return cls(minimum=scaler.data_min_, maximum=scaler.data_max_)

    @property
    def constant(self) -> np.ndarray:
        return self.maximum == self.minimum

    def transform(self, features: np.ndarray) -> np.ndarray:
        normalized = self._scaler.transform(np.asarray(features, dtype=np.float64))
        # вырожденный признак (max == min) всегда 0, даже для новых значений
        normalized[:, self.constant] = 0.0
        return normalized

    def inverse(self, normalized: np.ndarray) -> np.ndarray:
        return self._scaler.inverse_transform(np.asarray(normalized, dtype=np.float64))


def normalize(dataset: Dataset,
              stats: Optional[NormalizationStats] = None) -> Tuple[Dataset, NormalizationStats]:
    if len(dataset) == 0:
        raise ValueError("cannot normalize an empty dataset")
    stats = stats or NormalizationStats.fit(dataset.features)
    normalized = Dataset(
        features=stats.transform(dataset.features),
        counts=dataset.counts,
        feature_names=dataset.feature_names,
        true_means=dataset.true_means,
        synthetic=dataset.synthetic,
    )
    return normalized, stats


def denormalize(features: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    return stats.inverse(features)


def to_model_space(features: np.ndarray, log_features: Sequence[bool]) -> np.ndarray:
    """Объёмные признаки (AADT) моделируются в логарифмах"""
    x = np.array(features, dtype=np.float64)
    for j, flag in enumerate(log_features):
        if flag:
            if np.any(x[:, j] <= 0):
                raise InvalidFeatureValue(f"feature {j} must be positive to be log-transformed")
            x[:, j] = np.log(x[:, j])
    return x


def from_model_space(features: np.ndarray, log_features: Sequence[bool]) -> np.ndarray:
    x = np.array(features, dtype=np.float64)
    for j, flag in enumerate(log_features):
        if flag:
            x[:, j] = np.exp(x[:, j])
    return x


@dataclass
class CganModel:
    generator: DenseNetwork
    discriminator: DenseNetwork
    norm: NormalizationStats
    empirical_counts: np.ndarray
    feature_names: Tuple[str, ...]
    log_features: Tuple[bool, ...]
    training_history: List[Tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        self.empirical_counts = np.asarray(self.empirical_counts, dtype=np.int64).reshape(-1)
        if self.empirical_counts.size == 0:
            raise ValueError("empirical count distribution is empty")
        self.feature_names = tuple(self.feature_names)
        self.log_features = tuple(bool(f) for f in self.log_features)
        fs = len(self.feature_names)
        if self.generator.output_width != fs:
            raise ValueError(f"generator emits {self.generator.output_width} features, expected {fs}")
        if self.discriminator.output_width != 1:
            raise ValueError("discriminator must emit a single probability")
        if len(self.log_features) != fs or self.norm.minimum.shape[0] != fs:
            raise ValueError("log flags / normalization stats do not match the feature size")

    @property
    def feature_size(self) -> int:
        return len(self.feature_names)

    def generate_normalized(self, counts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """X_hat = clip(G(y, z), 0, 1) в нормированном пространстве"""
        y = np.asarray(counts, dtype=np.float64).reshape(-1, 1)
        z = rng.standard_normal((y.shape[0], self.feature_size))
        return np.clip(self.generator.forward([y, z]), 0.0, 1.0)


def _train_step(epoch: int, generator: DenseNetwork, discriminator: DenseNetwork,
                opt_g: AdamState, opt_d: AdamState, x_real: np.ndarray, y: np.ndarray,
                rng: np.random.Generator) -> Tuple[float, float]:
    m, fs = x_real.shape

    # шаг дискриминатора: Loss(D) = -1/2 (log D(X|y) + log(1 - D(X_hat|y)));
    # D видит обрезанные строки, те же, что выдаёт synthesize()
    x_fake = np.clip(generator.forward([y, rng.standard_normal((m, fs))]), 0.0, 1.0)
    p_real, cache_real = discriminator.forward_cached([x_real, y])
    p_fake, cache_fake = discriminator.forward_cached([x_fake, y])
    loss_d = 0.5 * (bce_loss(p_real, 1.0).mean() + bce_loss(p_fake, 0.0).mean())
    if not np.isfinite(loss_d):
        raise TrainingDivergedError(epoch, float(loss_d), float("nan"))
    grads_real = discriminator.backward(cache_real, 0.5 * bce_gradient(p_real, 1.0) / m)
    grads_fake = discriminator.backward(cache_fake, 0.5 * bce_gradient(p_fake, 0.0) / m)
    adam_step(
        discriminator.parameters(),
        [a + b for a, b in zip(grads_real.parameters, grads_fake.parameters)],
        opt_d,
        decay_step=epoch,
    )

    # шаг генератора: Loss(G) = -log D(X_hat|y), параметры D заморожены;
    # обрезка и выходной ReLU пропускают градиент как тождество
    raw, cache_g = generator.forward_cached([y, rng.standard_normal((m, fs))])
    p, cache_d = discriminator.forward_cached([np.clip(raw, 0.0, 1.0), y])
    loss_g = bce_loss(p, 1.0).mean()
    if not np.isfinite(loss_g):
        raise TrainingDivergedError(epoch, float(loss_d), float(loss_g))
    through_d = discriminator.backward(cache_d, bce_gradient(p, 1.0) / m)
    grads_g = generator.backward(cache_g, through_d.inputs[0], through_output_activation=False)
    adam_step(generator.parameters(), grads_g.parameters, opt_g, decay_step=epoch)
    return float(loss_d), float(loss_g)


def _train_epoch(epoch: int, generator: DenseNetwork, discriminator: DenseNetwork,
                 opt_g: AdamState, opt_d: AdamState, x_all: np.ndarray, y_all: np.ndarray,
                 batch_size: int, rng: np.random.Generator) -> Tuple[float, float]:
    """Проход по перемешанной выборке минибатчами; возвращает средние потери эпохи"""
    order = rng.permutation(x_all.shape[0])
    losses = [
        _train_step(epoch, generator, discriminator, opt_g, opt_d,
                    x_all[rows], y_all[rows], rng)
        for rows in (order[i:i + batch_size] for i in range(0, len(order), batch_size))
    ]
    loss_d, loss_g = np.mean(losses, axis=0)
    return float(loss_d), float(loss_g)


def train_cgan(dataset: Dataset, config: TrainConfig,
               log_features: Optional[Sequence[bool]] = None) -> CganModel:
    """Обучает CGAN: за эпоху по шагу D и G на каждый минибатч перемешанной выборки"""
    if len(dataset) == 0:
        raise ValueError("cannot train a CGAN on an empty dataset")
    fs = dataset.feature_size
    flags = tuple(log_features) if log_features is not None else (False,) * fs
    if len(flags) != fs:
        raise ValueError(f"{len(flags)} log flags for {fs} features")

    rng = np.random.default_rng(config.seed)
    x_model = to_model_space(dataset.features, flags)
    norm = NormalizationStats.fit(x_model)
    x_all = norm.transform(x_model)
    y_all = dataset.counts.astype(np.float64).reshape(-1, 1)

    generator = build_generator(fs, rng)
    discriminator = build_discriminator(fs, rng)
    opt_g = AdamState(learning_rate=config.lr_g, decay=config.decay_g)
    opt_d = AdamState(learning_rate=config.lr_d, decay=config.decay_d)
    batch_size = min(config.batch_size, len(dataset))

    history: List[Tuple[float, float]] = []
    for epoch in range(config.epochs):
        losses = _train_epoch(epoch, generator, discriminator, opt_g, opt_d,
                              x_all, y_all, batch_size, rng)
        history.append(losses)
        if epoch % 500 == 0:
            logger.debug(f"epoch {epoch}: Loss(D)={losses[0]:.4f}, Loss(G)={losses[1]:.4f}")

    if history:
        logger.info(
            f"CGAN trained for {config.epochs} epochs on {len(dataset)} rows: "
            f"Loss(D)={history[-1][0]:.4f}, Loss(G)={history[-1][1]:.4f}"
        )
    return CganModel(
        generator=generator,
        discriminator=discriminator,
        norm=norm,
        empirical_counts=dataset.counts.copy(),
        feature_names=dataset.feature_names,
        log_features=flags,
        training_history=history,
    )


def synthesize(model: CganModel, n: int, seed: SeedLike) -> Dataset:
    """y ~ бутстреп эмпирических счётчиков, z ~ N(0, I), X_hat = G(z, y)"""
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if n == 0:
        return Dataset(
            features=np.empty((0, model.feature_size)),
            counts=np.empty(0, dtype=np.int64),
            feature_names=model.feature_names,
            synthetic=np.ones(0, dtype=bool),
        )
    counts = rng.choice(model.empirical_counts, size=n, replace=True)
    normalized = model.generate_normalized(counts, rng)
    features = from_model_space(model.norm.inverse(normalized), model.log_features)
    return Dataset(
        features=features,
        counts=counts,
        feature_names=model.feature_names,
        synthetic=np.ones(n, dtype=bool),
    )


def discriminator_accuracy(model: CganModel, real: Dataset, seed: SeedLike) -> float:
    """Доля верных ответов D на реальных строках и равном числе сгенерированных"""
    if len(real) == 0:
        raise ValueError("accuracy needs at least one real row")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    y = real.counts.astype(np.float64).reshape(-1, 1)
    x_real = model.norm.transform(to_model_space(real.features, model.log_features))
    x_fake = model.generate_normalized(real.counts, rng)
    p_real = model.discriminator.forward([x_real, y])
    p_fake = model.discriminator.forward([x_fake, y])
    correct = np.sum(p_real > 0.5) + np.sum(p_fake <= 0.5)
    return float(correct) / (2 * len(real))


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def save_model(model: CganModel, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        MODEL_MAGIC,
        "features " + json.dumps(list(model.feature_names)),
        "log_features " + " ".join("1" if f else "0" for f in model.log_features),
        "@generator",
        *dump_network(model.generator),
        "@discriminator",
        *dump_network(model.discriminator),
        "@normalization",
        "min " + " ".join(_fmt(v) for v in model.norm.minimum),
        "max " + " ".join(_fmt(v) for v in model.norm.maximum),
        "@counts",
        " ".join(str(int(c)) for c in model.empirical_counts),
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"Saved CGAN model to {path}")
    return path


def load_model(path: Path) -> CganModel:
    it = iter(Path(path).read_text(encoding="utf-8").splitlines())

    def take(prefix: str) -> str:
        try:
            line = next(it).strip()
        except StopIteration:
            raise ModelFormatError(f"{path}: truncated model file") from None
        if not line.startswith(prefix):
            raise ModelFormatError(f"{path}: expected '{prefix}'")
        return line[len(prefix):].strip()

    take(MODEL_MAGIC)
    try:
        feature_names = tuple(json.loads(take("features")))
        log_features = tuple(v == "1" for v in take("log_features").split())
        take("@generator")
        generator = parse_network(it)
        take("@discriminator")
        discriminator = parse_network(it)
        take("@normalization")
        norm = NormalizationStats(
            minimum=np.array(take("min").split(), dtype=np.float64),
            maximum=np.array(take("max").split(), dtype=np.float64),
        )
        take("@counts")
        counts = np.array(take("").split(), dtype=np.int64)
        return CganModel(
            generator=generator,
            discriminator=discriminator,
            norm=norm,
            empirical_counts=counts,
            feature_names=feature_names,
            log_features=log_features,
        )
    except (ValueError, json.JSONDecodeError) as e:
        if isinstance(e, ModelFormatError):
            raise
        raise ModelFormatError(f"{path}: {e}") from e


def write_history(model: CganModel, path: Path) -> Path:
    frame = pd.DataFrame(model.training_history, columns=["loss_d", "loss_g"])
    frame.insert(0, "epoch", np.arange(len(frame)))
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return Path(path)
