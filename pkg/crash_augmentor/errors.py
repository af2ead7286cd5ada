from typing import List, Optional


class CrashAugmentError(Exception):
    """Базовое исключение пакета"""


class DimensionMismatchError(CrashAugmentError, ValueError):
    """Размерность входа не совпадает с объявленной размерностью слоя"""

    def __init__(self, layer: str, expected: int, actual: int):
        self.layer = layer
        self.expected = expected
        self.actual = actual
        super().__init__(f"{layer}: expected width {expected}, got {actual}")


class MissingCacheError(CrashAugmentError, RuntimeError):
    """backward() вызван без кэша прямого прохода"""


class ModelFormatError(CrashAugmentError, ValueError):
    """Файл модели повреждён или имеет неизвестный формат"""


class DatasetFormatError(CrashAugmentError, ValueError):
    """Ошибка разбора CSV с данными; row - номер строки данных (с 1)"""

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        prefix = f"row {row}: " if row is not None else ""
        super().__init__(f"{prefix}{message}")


class SplitError(CrashAugmentError, ValueError):
    pass


class InvalidFeatureValue(CrashAugmentError, ValueError):
    pass


class NumericalError(CrashAugmentError, ArithmeticError):
    """Численный сбой во время вычислений (код выхода 3)"""


class NonFiniteGradientError(NumericalError):
    pass


class TrainingDivergedError(NumericalError):
    def __init__(self, epoch: int, loss_d: float, loss_g: float):
        self.epoch = epoch
        super().__init__(
            f"non-finite loss at epoch {epoch}: Loss(D)={loss_d}, Loss(G)={loss_g}"
        )


class SpfFitError(NumericalError):
    pass


class InsufficientData(SpfFitError):
    pass


class DegenerateResponse(SpfFitError):
    pass


class CollinearFeatures(SpfFitError):
    pass


class ConvergenceFailure(SpfFitError):
    def __init__(self, message: str, trace: List[float]):
        self.trace = list(trace)
        super().__init__(f"{message}; max |delta beta| per iteration: {self.trace}")
