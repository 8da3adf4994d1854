"""Input validation helpers used by the estimators, trainer, and CLI."""
from __future__ import annotations

import numpy as np

from .errors import DataError


def check_finite(x: np.ndarray, name: str = "array") -> np.ndarray:
    if not np.isfinite(x).all():
        raise DataError(f"{name} contains NaN or Inf")
    return x


def as_series(x, dtype=None) -> np.ndarray:
    """Coerce a single series to shape (length, channels)."""
    x = np.asarray(x, dtype=dtype)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise DataError(f"expected a (length,) or (length, channels) series, got shape {x.shape}")
    return np.ascontiguousarray(x)


def as_batch(x, dtype=None) -> np.ndarray:
    """Coerce input to an activation batch of shape (batch, length, channels)."""
    x = np.asarray(x, dtype=dtype)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3:
        raise DataError(
            f"expected (batch, length) or (batch, length, channels) input, got shape {x.shape}"
        )
    return np.ascontiguousarray(x)


def check_batch_for_model(x, spec, dtype=None) -> np.ndarray:
    """Validate a batch against an architecture spec's input contract."""
    x = as_batch(x, dtype=dtype)
    if x.shape[1] != spec.input_length:
        raise DataError(f"input length {x.shape[1]} != model input length {spec.input_length}")
    if x.shape[2] != spec.channels:
        raise DataError(f"input channels {x.shape[2]} != model channels {spec.channels}")
    return x


def check_mask_batch(y, n: int | None = None, length: int | None = None) -> np.ndarray:
    """Validate a batch of binary masks, shape (batch, length, classes)."""
    y = np.asarray(y)
    if y.ndim == 2:
        y = y[:, :, None]
    if y.ndim != 3:
        raise DataError(f"expected (batch, length, classes) masks, got shape {y.shape}")
    if n is not None and y.shape[0] != n:
        raise DataError(f"mask batch size {y.shape[0]} != values batch size {n}")
    if length is not None and y.shape[1] != length:
        raise DataError(f"mask length {y.shape[1]} != series length {length}")
    if not np.isin(y, (0, 1)).all():
        raise DataError("mask entries must be 0 or 1")
    return np.ascontiguousarray(y)
