"""Input validation helpers shared by the public estimators."""

from __future__ import annotations

import numpy as np

__all__ = [
    "as_float_matrix",
    "check_square",
    "check_symmetric_zero_diag",
    "check_binary",
    "check_probability",
    "check_positive_int",
]


def as_float_matrix(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name}: expected a 2-d array, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains non-finite values")
    return arr


def check_square(a, name: str) -> np.ndarray:
    arr = as_float_matrix(a, name)
    if arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name}: expected a square matrix, got shape {arr.shape}")
    return arr


def check_symmetric_zero_diag(a, name: str, tol: float = 1e-9) -> np.ndarray:
    arr = check_square(a, name)
    if arr.size and np.max(np.abs(arr - arr.T)) > tol:
        raise ValueError(f"{name}: matrix is not symmetric")
    if arr.size and np.max(np.abs(np.diag(arr))) > tol:
        raise ValueError(f"{name}: diagonal is not zero")
    return arr


def check_binary(x, name: str) -> np.ndarray:
    arr = np.asarray(x)
    values = np.unique(arr)
    if not np.all(np.isin(values, (0, 1))):
        raise ValueError(f"{name}: expected binary values, got {values[:8]}")
    return arr.astype(np.int64)


def check_probability(value: float, name: str) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name}: expected a probability in [0, 1], got {value}")
    return value


def check_positive_int(value, name: str) -> int:
    ivalue = int(value)
    if ivalue != value or ivalue <= 0:
        raise ValueError(f"{name}: expected a positive integer, got {value}")
    return ivalue
