"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError


def check_images(X, *, name="X") -> np.ndarray:
    """Coerce to a float64 (N,C,H,W) batch with finite values in [0,1]."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:  # single-channel batches may omit the channel axis
        X = X[:, None, :, :]
    if X.ndim != 4:
        raise DimensionError(f"{name} must be (N,C,H,W) or (N,H,W), got shape {X.shape}")
    if X.shape[2] != X.shape[3]:
        raise DimensionError(f"{name} must be square images, got {X.shape[2]}x{X.shape[3]}")
    if X.size and not np.isfinite(X).all():
        raise ContractError(f"{name} contains non-finite values")
    if X.size and (X.min() < 0.0 or X.max() > 1.0):
        raise ContractError(f"{name} pixel values must lie in [0,1]")
    return X


def check_labels(y, *, n=None, name="y") -> np.ndarray:
    """Coerce to a 1-D integer label array."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {y.shape}")
    if n is not None and len(y) != n:
        raise DimensionError(f"{name} has {len(y)} entries for {n} samples")
    if y.size and not np.issubdtype(y.dtype, np.integer):
        rounded = np.rint(np.asarray(y, dtype=np.float64))
        if not np.array_equal(rounded, np.asarray(y, dtype=np.float64)):
            raise ContractError(f"{name} must hold integer class labels")
        y = rounded
    return y.astype(np.int64)


def check_fitted(estimator, attribute: str) -> None:
    if not hasattr(estimator, attribute):
        raise ContractError(
            f"{type(estimator).__name__} is not fitted yet; call fit before using this method")
