"""Input validation helpers shared by the estimators."""
from __future__ import annotations

import numpy as np


def check_tensor(t, *, name: str = "tensor") -> np.ndarray:
    """Validate a single m x m x d feature tensor and return it as float32."""
    arr = np.asarray(t, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must have shape (m, m, d), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[2] < 1:
        raise ValueError(f"{name} has an empty dimension: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_tensor_batch(X, *, name: str = "X", allow_single: bool = True) -> np.ndarray:
    """Validate a batch of feature tensors, shape (n, m, m, d).

    A single (m, m, d) tensor is promoted to a batch of one when
    ``allow_single`` is set.
    """
    arr = np.asarray(X, dtype=np.float32)
    if arr.ndim == 3 and allow_single:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1] != arr.shape[2]:
        raise ValueError(f"{name} must have shape (n, m, m, d), got {arr.shape}")
    if arr.shape[1] < 1 or arr.shape[3] < 1:
        raise ValueError(f"{name} has an empty spatial or channel dimension: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_labels(y, n: int, num_classes: int | None = None) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim == 0:
        y = y[None]
    if y.ndim != 1 or y.shape[0] != n:
        raise ValueError(f"expected {n} labels, got shape {y.shape}")
    if y.size and (not np.issubdtype(y.dtype, np.integer)):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("labels must be integer class ids")
    y = y.astype(np.int64)
    if y.size and y.min() < 0:
        raise ValueError("labels must be non-negative")
    if num_classes is not None and y.size and y.max() >= num_classes:
        raise ValueError(f"label {y.max()} out of range for {num_classes} classes")
    return y


def one_hot(y, num_classes: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    out = np.zeros((y.shape[0], num_classes))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def check_soft_labels(Y, num_classes: int, atol: float = 1e-6) -> np.ndarray:
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[None]
    if Y.ndim != 2 or Y.shape[1] != num_classes:
        raise ValueError(f"soft labels must have shape (n, {num_classes}), got {Y.shape}")
    if np.any(Y < 0) or not np.allclose(Y.sum(axis=1), 1.0, atol=atol, rtol=0):
        raise ValueError("soft labels must be non-negative and sum to 1")
    return Y
