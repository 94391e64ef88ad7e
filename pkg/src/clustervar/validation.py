"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np

from .exceptions import NonFiniteError


def check_vector(x, name: str, n: int | None = None) -> np.ndarray:
    """Coerce to a 1-d float array, optionally checking its length."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise ValueError(f"{name} must have length {n}, got {arr.shape[0]}")
    return arr


def check_matrix(x, name: str, n_rows: int | None = None) -> np.ndarray:
    """Coerce to a 2-d float array (a 1-d input becomes a single column)."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if n_rows is not None and arr.shape[0] != n_rows:
        raise ValueError(f"{name} must have {n_rows} rows, got {arr.shape[0]}")
    return arr


def check_finite(arr: np.ndarray, name: str) -> None:
    if arr.size and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains NaN or Inf entries")


def readonly(arr: np.ndarray) -> np.ndarray:
    """Return a C-contiguous copy with the writeable flag cleared."""
    out = np.array(arr, dtype=float, order="C")
    out.setflags(write=False)
    return out


def check_symmetric(arr: np.ndarray, name: str, rtol: float = 1e-12) -> np.ndarray:
    scale = max(float(np.max(np.abs(arr))), 1.0) if arr.size else 1.0
    if arr.size and np.max(np.abs(arr - arr.T)) > rtol * scale:
        raise ValueError(f"{name} is not symmetric to relative tolerance {rtol}")
    return 0.5 * (arr + arr.T)
