"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def check_uncertainty(X, *, name: str = "X") -> np.ndarray:
    """Return uncertainty scores as a 1-d float array in [0, 1].

    Accepts shape ``(n,)`` or ``(n, 1)``.
    """
    arr = check_array(X, ensure_2d=False, dtype=np.float64, input_name=name)
    if arr.ndim == 2:
        if arr.shape[1] != 1:
            raise ValueError(f"{name} must hold a single uncertainty column, got shape {arr.shape}")
        arr = arr[:, 0]
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError(f"{name} uncertainty scores must lie in [0, 1]")
    return arr


def check_losses(y, n: int, lower: float, upper: float) -> np.ndarray:
    arr = check_array(y, ensure_2d=False, dtype=np.float64, input_name="y")
    arr = arr.reshape(-1)
    if arr.shape != (n,):
        raise ValueError(f"expected {n} losses, got {arr.shape[0]}")
    if arr.size and (arr.min() < lower or arr.max() > upper):
        raise ValueError(f"losses must lie in [{lower}, {upper}]")
    return arr
