"""Input validation helpers shared across the package.

Small check_* functions in the spirit of sklearn's validation utilities:
they either return a canonicalized numpy array or raise ValueError with a
message naming the offending argument.
"""

from __future__ import annotations

import numpy as np


def check_finite(x: np.ndarray, name: str = "array") -> np.ndarray:
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains NaN or Inf")
    return x


def check_waveform(samples, sample_rate: int, name: str = "waveform") -> np.ndarray:
    """Canonicalize to a finite 1-D float64 array; sample_rate must be positive."""
    if sample_rate <= 0:
        raise ValueError(f"{name}: sample_rate must be positive, got {sample_rate}")
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"{name}: expected 1-D samples, got shape {x.shape}")
    return check_finite(x, name)


def check_nonnegative(x: np.ndarray, name: str = "array") -> np.ndarray:
    x = check_finite(x, name)
    if x.size and x.min() < 0:
        raise ValueError(f"{name} must be nonnegative")
    return x


def check_unit_range(x: np.ndarray, name: str = "array", atol: float = 0.0) -> np.ndarray:
    x = check_finite(x, name)
    if x.size and (x.min() < -atol or x.max() > 1.0 + atol):
        raise ValueError(f"{name} must lie in [0, 1], got range [{x.min()}, {x.max()}]")
    return x


def check_shape(x: np.ndarray, shape: tuple, name: str = "array") -> np.ndarray:
    x = np.asarray(x)
    if x.shape != tuple(shape):
        raise ValueError(f"{name}: expected shape {tuple(shape)}, got {x.shape}")
    return x


def check_same_shape(a: np.ndarray, b: np.ndarray, names: str = "arrays") -> None:
    if np.shape(a) != np.shape(b):
        raise ValueError(f"{names}: shape mismatch {np.shape(a)} vs {np.shape(b)}")
