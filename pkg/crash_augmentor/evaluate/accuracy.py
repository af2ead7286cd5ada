import numpy as np


def mape(predictions: np.ndarray, truths: np.ndarray, exclude_zero_truth: bool = False) -> float:
    """100 * mean(|p - t| / t); нулевые истинные значения можно исключить"""
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    t = np.asarray(truths, dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise ValueError(f"{p.shape[0]} predictions for {t.shape[0]} truths")
    if exclude_zero_truth:
        keep = t != 0
        p, t = p[keep], t[keep]
    if t.shape[0] == 0:
        raise ValueError("MAPE needs at least one non-zero truth value")
    if np.any(t <= 0):
        raise ValueError("MAPE is undefined for non-positive truth values")
    return float(100.0 * np.mean(np.abs(p - t) / t))
