"""Input-validation helpers shared by the estimators and the pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.utils import check_array


def as_load_matrix(X, n_bus: int | None = None) -> np.ndarray:
    """Coerce to a finite 2-D float array of load vectors (rows)."""
    X = check_array(X, dtype=float, ensure_2d=True)
    if n_bus is not None and X.shape[1] != n_bus:
        raise ValueError(f"expected load vectors of length {n_bus}, got {X.shape[1]}")
    return X


def as_load_vector(p_d, n_bus: int, non_negative: bool = False) -> np.ndarray:
    v = np.asarray(p_d, dtype=float).ravel()
    if v.shape != (n_bus,):
        raise ValueError(f"expected a load vector of length {n_bus}, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("load vector contains non-finite entries")
    if non_negative and np.any(v < 0):
        raise ValueError("load vector contains negative entries")
    return v


def as_target_matrix(y, n_rows: int, width: int | None = None) -> np.ndarray:
    y = check_array(y, dtype=float, ensure_2d=True)
    if y.shape[0] != n_rows:
        raise ValueError(f"X and y disagree on sample count: {n_rows} vs {y.shape[0]}")
    if width is not None and y.shape[1] != width:
        raise ValueError(f"expected targets of width {width}, got {y.shape[1]}")
    return y
