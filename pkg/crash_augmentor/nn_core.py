import copy
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from .errors import (
    DimensionMismatchError,
    MissingCacheError,
    ModelFormatError,
    NonFiniteGradientError,
)

logger = logging.getLogger(__name__)

BCE_CLAMP = 1e-7
GRADIENT_FLOOR = 1e-4
NETWORK_MAGIC = "dense-network v1"

ArrayLike = Union[np.ndarray, Sequence[float]]


class Activation(str, Enum):
    ELU = "elu"
    RELU = "relu"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"


def activate(z: np.ndarray, activation: Activation) -> np.ndarray:
    if activation is Activation.ELU:
        return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))
    if activation is Activation.RELU:
        return np.maximum(z, 0.0)
    if activation is Activation.SIGMOID:
        return expit(z)
    return z


def activation_derivative(z: np.ndarray, a: np.ndarray, activation: Activation) -> np.ndarray:
    """Производная активации по предактивации z (a = activate(z))"""
    if activation is Activation.ELU:
        return np.where(z > 0, 1.0, a + 1.0)
    if activation is Activation.RELU:
        return (z > 0).astype(np.float64)
    if activation is Activation.SIGMOID:
        return a * (1.0 - a)
    return np.ones_like(z)


@dataclass
class DenseLayer:
    """Полносвязный слой: a = act(x W^T + b), W имеет форму (out, in)"""

    weights: np.ndarray
    biases: np.ndarray
    activation: Activation = Activation.IDENTITY

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=np.float64, ndmin=2)
        self.biases = np.array(self.biases, dtype=np.float64).reshape(-1)
        self.activation = Activation(self.activation)
        if self.biases.shape[0] != self.weights.shape[0]:
            raise DimensionMismatchError("bias vector", self.weights.shape[0], self.biases.shape[0])

    @classmethod
    def glorot(cls, n_in: int, n_out: int, activation: Activation,
               rng: np.random.Generator) -> "DenseLayer":
        limit = np.sqrt(6.0 / (n_in + n_out))
        return cls(
            weights=rng.uniform(-limit, limit, size=(n_out, n_in)),
            biases=np.zeros(n_out),
            activation=activation,
        )

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        z = x @ self.weights.T + self.biases
        return z, activate(z, self.activation)


LayerRecord = Tuple[np.ndarray, np.ndarray, np.ndarray]


@dataclass
class ForwardCache:
    """Промежуточные значения прямого прохода (вход, z, a) для каждого слоя"""

    single: bool
    output: np.ndarray
    branches: List[List[LayerRecord]]
    trunk: List[LayerRecord]


@dataclass
class Gradients:
    parameters: List[np.ndarray]
    inputs: List[np.ndarray]


@dataclass
class DenseNetwork:
    """Ветви (по одной на вход) -> конкатенация -> общий ствол"""

    input_widths: List[int]
    branches: List[List[DenseLayer]]
    trunk: List[DenseLayer]

    def __post_init__(self):
        self.input_widths = [int(w) for w in self.input_widths]
        if len(self.input_widths) not in (1, 2):
            raise ValueError(f"input arity must be 1 or 2, got {len(self.input_widths)}")
        if len(self.branches) != len(self.input_widths):
            raise ValueError("one branch (possibly empty) is required per input")
        if not self.layers:
            raise ValueError("network has no layers")
        for b, (width, branch) in enumerate(zip(self.input_widths, self.branches)):
            self._check_chain(branch, width, f"branch[{b}]")
        self._check_chain(self.trunk, self.concat_width, "trunk")

    @staticmethod
    def _check_chain(layers: List[DenseLayer], width: int, name: str) -> None:
        for j, layer in enumerate(layers):
            if layer.n_in != width:
                raise DimensionMismatchError(f"{name}.layer[{j}]", layer.n_in, width)
            width = layer.n_out

    @classmethod
    def sequential(cls, layers: List[DenseLayer]) -> "DenseNetwork":
        return cls(input_widths=[layers[0].n_in], branches=[[]], trunk=list(layers))

    @property
    def input_arity(self) -> int:
        return len(self.input_widths)

    @property
    def branch_output_widths(self) -> List[int]:
        return [branch[-1].n_out if branch else width
                for width, branch in zip(self.input_widths, self.branches)]

    @property
    def concat_width(self) -> int:
        return sum(self.branch_output_widths)

    @property
    def output_width(self) -> int:
        return self.trunk[-1].n_out if self.trunk else self.concat_width

    @property
    def layers(self) -> List[DenseLayer]:
        return [layer for branch in self.branches for layer in branch] + list(self.trunk)

    def parameters(self) -> List[np.ndarray]:
        """Массивы параметров в фиксированном порядке (W, b по слоям); изменяются на месте"""
        params: List[np.ndarray] = []
        for layer in self.layers:
            params.extend([layer.weights, layer.biases])
        return params

    @property
    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "DenseNetwork":
        return copy.deepcopy(self)

    def _prepare(self, inputs) -> Tuple[List[np.ndarray], bool]:
        if isinstance(inputs, np.ndarray):
            inputs = [inputs]
        inputs = list(inputs)
        if len(inputs) != self.input_arity:
            raise DimensionMismatchError("network inputs (arity)", self.input_arity, len(inputs))
        single = all(np.ndim(x) <= 1 for x in inputs)
        batch = [np.atleast_2d(np.asarray(x, dtype=np.float64)) for x in inputs]
        rows = {x.shape[0] for x in batch}
        if len(rows) != 1:
            raise ValueError(f"input batches have different row counts: {sorted(rows)}")
        for b, (x, width) in enumerate(zip(batch, self.input_widths)):
            if x.shape[1] != width:
                raise DimensionMismatchError(f"branch[{b}] input", width, x.shape[1])
        return batch, single

    def forward_cached(self, inputs) -> Tuple[np.ndarray, ForwardCache]:
        batch, single = self._prepare(inputs)
        branch_records: List[List[LayerRecord]] = []
        outputs = []
        for x, branch in zip(batch, self.branches):
            records = []
            h = x
            for layer in branch:
                z, a = layer.forward(h)
                records.append((h, z, a))
                h = a
            branch_records.append(records)
            outputs.append(h)

        h = np.concatenate(outputs, axis=1) if len(outputs) > 1 else outputs[0]
        trunk_records = []
        for layer in self.trunk:
            z, a = layer.forward(h)
            trunk_records.append((h, z, a))
            h = a

        cache = ForwardCache(single=single, output=h, branches=branch_records, trunk=trunk_records)
        return (h[0] if single else h), cache

    def forward(self, inputs) -> np.ndarray:
        output, _ = self.forward_cached(inputs)
        return output

    def backward(self, cache: Optional[ForwardCache], upstream: ArrayLike,
                 through_output_activation: bool = True) -> Gradients:
        """Обратный проход: градиенты по всем параметрам и по каждому входу

        При through_output_activation=False производная активации выходного слоя
        ствола считается равной 1 (upstream уже относится к предактивации).
        """
        if cache is None:
            raise MissingCacheError("backward() requires the cache of a forward pass")
        g = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
        if g.shape != cache.output.shape:
            raise DimensionMismatchError("upstream gradient", cache.output.shape[1], g.shape[-1])

        trunk_grads, g = self._backprop(self.trunk, cache.trunk, g,
                                        skip_output_derivative=not through_output_activation)
        splits = np.cumsum(self.branch_output_widths)[:-1]
        parts = np.split(g, splits, axis=1)

        params: List[np.ndarray] = []
        input_grads: List[np.ndarray] = []
        for branch, records, part in zip(self.branches, cache.branches, parts):
            grads, dx = self._backprop(branch, records, part)
            params.extend(grads)
            input_grads.append(dx[0] if cache.single else dx)
        params.extend(trunk_grads)
        return Gradients(parameters=params, inputs=input_grads)

    @staticmethod
    def _backprop(layers: List[DenseLayer], records: List[LayerRecord], g: np.ndarray,
                  skip_output_derivative: bool = False) -> Tuple[List[np.ndarray], np.ndarray]:
        grads: List[np.ndarray] = []
        for j, (layer, (x, z, a)) in enumerate(zip(reversed(layers), reversed(records))):
            if j == 0 and skip_output_derivative:
                dz = g
            else:
                dz = g * activation_derivative(z, a, layer.activation)
            grads = [dz.T @ x, dz.sum(axis=0)] + grads
            g = dz @ layer.weights
        return grads, g


def forward(net: DenseNetwork, inputs) -> np.ndarray:
    return net.forward(inputs)


def backward(net: DenseNetwork, cache: Optional[ForwardCache], upstream: ArrayLike) -> Gradients:
    return net.backward(cache, upstream)


def bce_loss(prediction, target):
    """Бинарная кросс-энтропия с ограничением p в [eps, 1 - eps]"""
    p = np.clip(np.asarray(prediction, dtype=np.float64), BCE_CLAMP, 1.0 - BCE_CLAMP)
    t = np.asarray(target, dtype=np.float64)
    loss = -(t * np.log(p) + (1.0 - t) * np.log1p(-p))
    return float(loss) if loss.ndim == 0 else loss


def bce_gradient(prediction, target) -> np.ndarray:
    p = np.clip(np.asarray(prediction, dtype=np.float64), BCE_CLAMP, 1.0 - BCE_CLAMP)
    t = np.asarray(target, dtype=np.float64)
    return (p - t) / (p * (1.0 - p))


@dataclass
class AdamState:
    learning_rate: float = 0.001
    decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: List[np.ndarray] = field(default_factory=list)
    second_moment: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.decay < 0:
            raise ValueError("decay must be >= 0")
        if self.step_count < 0:
            raise ValueError("step_count must be >= 0")

    def learning_rate_at(self, t: int) -> float:
        # обратно-временное затухание: lr / (1 + decay * t)
        return self.learning_rate / (1.0 + self.decay * t)

    @property
    def effective_learning_rate(self) -> float:
        return self.learning_rate_at(self.step_count)


def adam_step(params: List[np.ndarray], grads: List[np.ndarray], state: AdamState,
              decay_step: Optional[int] = None) -> Tuple[List[np.ndarray], AdamState]:
    """Шаг Adam с коррекцией смещения; параметры обновляются на месте

    decay_step задаёт номер шага затухания (например, эпоху), по умолчанию step_count.
    """
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameters but {len(grads)} gradients")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise DimensionMismatchError(f"gradient[{i}]", p.size, g.size)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(
                f"non-finite gradient for parameter {i} at step {state.step_count}"
            )
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]

    lr = state.effective_learning_rate if decay_step is None else state.learning_rate_at(decay_step)
    t = state.step_count + 1
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
    state.step_count = t
    return params, state


def numerical_gradients(net: DenseNetwork, inputs, upstream: np.ndarray,
                        h: float) -> List[np.ndarray]:
    """Центральные разности для скалярной цели sum(upstream * forward(inputs))"""
    def objective() -> float:
        return float(np.sum(np.atleast_2d(net.forward(inputs)) * upstream))

    grads = []
    for param in net.parameters():
        grad = np.zeros_like(param)
        for idx in np.ndindex(param.shape):
            original = param[idx]
            param[idx] = original + h
            f_plus = objective()
            param[idx] = original - h
            f_minus = objective()
            param[idx] = original
            grad[idx] = (f_plus - f_minus) / (2.0 * h)
        grads.append(grad)
    return grads


def relative_error(analytic: List[np.ndarray], numeric: List[np.ndarray],
                   floor: float = GRADIENT_FLOOR) -> float:
    worst = 0.0
    for a, n in zip(analytic, numeric):
        if a.size == 0:
            continue
        err = np.abs(a - n) / np.maximum(np.abs(n), floor)
        worst = max(worst, float(err.max()))
    return worst


def gradient_check(net: DenseNetwork, inputs, h: float = 1e-5,
                   upstream: Optional[np.ndarray] = None) -> float:
    """Наихудшая относительная ошибка backward() против центральных разностей"""
    if not 0.0 < h <= 1e-3:
        raise ValueError(f"step h must lie in (0, 1e-3], got {h}")
    _, cache = net.forward_cached(inputs)
    if upstream is None:
        upstream = np.ones_like(cache.output)
    upstream = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    analytic = net.backward(cache, upstream).parameters
    numeric = numerical_gradients(net, inputs, upstream, h)
    return relative_error(analytic, numeric)


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def dump_network(net: DenseNetwork) -> List[str]:
    layers = net.layers
    lines = [
        NETWORK_MAGIC,
        "input_widths " + " ".join(str(w) for w in net.input_widths),
        "branch_layers " + " ".join(str(len(b)) for b in net.branches),
        f"trunk_layers {len(net.trunk)}",
    ]
    for i, layer in enumerate(layers):
        lines.append(f"layer {i} {layer.n_in} {layer.n_out} {layer.activation.value}")
    for i, layer in enumerate(layers):
        lines.append(f"block {i}")
        lines.extend(" ".join(_fmt(v) for v in row) for row in layer.weights)
        lines.append(" ".join(_fmt(v) for v in layer.biases))
    lines.append("end")
    return lines


def parse_network(lines: Iterable[str]) -> DenseNetwork:
    """Читает блок dump_network(); итератор остаётся на строке после 'end'"""
    it = iter(lines)

    def take() -> str:
        try:
            return next(it).strip()
        except StopIteration:
            raise ModelFormatError("unexpected end of network block") from None

    def keyed(key: str) -> List[str]:
        parts = take().split()
        if not parts or parts[0] != key:
            raise ModelFormatError(f"expected '{key}' line")
        return parts[1:]

    if take() != NETWORK_MAGIC:
        raise ModelFormatError(f"missing '{NETWORK_MAGIC}' header")
    try:
        input_widths = [int(v) for v in keyed("input_widths")]
        branch_sizes = [int(v) for v in keyed("branch_layers")]
        trunk_size = int(keyed("trunk_layers")[0])
        specs = []
        for i in range(sum(branch_sizes) + trunk_size):
            _, n_in, n_out, activation = keyed("layer")
            specs.append((int(n_in), int(n_out), Activation(activation)))

        layers = []
        for i, (n_in, n_out, activation) in enumerate(specs):
            if take() != f"block {i}":
                raise ModelFormatError(f"expected 'block {i}'")
            weights = np.array([take().split() for _ in range(n_out)], dtype=np.float64)
            biases = np.array(take().split(), dtype=np.float64)
            if weights.shape != (n_out, n_in) or biases.shape != (n_out,):
                raise ModelFormatError(f"layer {i}: values do not match declared {n_out}x{n_in}")
            layers.append(DenseLayer(weights, biases, activation))
    except (ValueError, IndexError) as e:
        if isinstance(e, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed network block: {e}") from e
    if take() != "end":
        raise ModelFormatError("missing 'end' of network block")

    branches, start = [], 0
    for size in branch_sizes:
        branches.append(layers[start:start + size])
        start += size
    return DenseNetwork(input_widths=input_widths, branches=branches, trunk=layers[start:])


def write_network(net: DenseNetwork, path: Path) -> Path:
    path = Path(path)
    path.write_text("\n".join(dump_network(net)) + "\n", encoding="utf-8")
    return path


def read_network(path: Path) -> DenseNetwork:
    return parse_network(Path(path).read_text(encoding="utf-8").splitlines())
