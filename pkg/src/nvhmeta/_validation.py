"""Input checks shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, check_consistent_length

from .exceptions import DomainError


def check_X(X) -> np.ndarray:
    """Design matrix with columns ``[speed_kmph, frequency_hz]``, both positive."""
    X = check_array(X, dtype=float, ensure_2d=True, ensure_all_finite=True)
    if X.shape[1] != 2:
        raise ValueError(f"X must have 2 columns [speed_kmph, frequency_hz], got {X.shape[1]}")
    if np.any(X <= 0):
        raise DomainError("speeds and frequencies must be positive")
    return X


def check_X_y(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = check_X(X)
    y = check_array(y, dtype=float, ensure_2d=False, ensure_all_finite=True)
    if y.ndim != 1:
        y = y.ravel()
    check_consistent_length(X, y)
    return X, y
