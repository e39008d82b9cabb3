"""Input validation helpers used by the estimator-style classes."""

from __future__ import annotations

import numpy as np


def as_float_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinite entries")
    return arr


def as_binary_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size and not np.all((arr == 0.0) | (arr == 1.0)):
        raise ValueError(f"{name} must contain only 0/1 values")
    return arr


def check_probabilities(values, name: str, low: float = 0.0, high: float = 1.0) -> np.ndarray:
    arr = as_float_array(values, name)
    if arr.size and (arr.min() < low or arr.max() > high):
        raise ValueError(f"{name} must lie in [{low}, {high}]")
    return arr


def check_equal_length(a, b, name_a: str, name_b: str) -> None:
    if len(a) != len(b):
        raise ValueError(f"{name_a} and {name_b} must have equal length ({len(a)} != {len(b)})")
