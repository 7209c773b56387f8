"""Argument checks shared by the public estimators and functions."""

from __future__ import annotations

import numbers

import numpy as np


class ConfigurationError(ValueError):
    """Raised when a mechanism, event or monitor is configured inconsistently."""


def check_positive(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ConfigurationError(f"{name} must be a finite real > 0, got {value!r}")
    return float(value)


def check_positive_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 1:
        raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_open_unit(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or not 0.0 < value < 1.0:
        raise ConfigurationError(f"{name} must lie in (0, 1), got {value!r}")
    return float(value)


def check_beta(beta) -> float:
    if not isinstance(beta, numbers.Real) or not 0.0 <= beta < 0.5:
        raise ConfigurationError(f"beta must lie in [0, 1/2), got {beta!r}")
    return float(beta)


def check_counts(n, n_x, n_y) -> tuple[int, int, int]:
    """Validate one time point's batch size and hit counts."""
    n = check_positive_int(n, "n")
    for name, k in (("n_x", n_x), ("n_y", n_y)):
        if isinstance(k, bool) or not isinstance(k, numbers.Integral) or not 0 <= k <= n:
            raise ValueError(f"{name} must be an integer in [0, {n}], got {k!r}")
    return n, int(n_x), int(n_y)


def check_count_matrix(X) -> np.ndarray:
    """Coerce a count table to an ``(tau, 3)`` int64 array of ``(n, n_x, n_y)`` rows."""
    arr = np.asarray(X)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected count rows (n, n_x, n_y) of shape (tau, 3), got {arr.shape}")
    if arr.size and not np.all(np.equal(np.mod(arr, 1), 0)):
        raise ValueError("counts must be integer valued")
    arr = arr.astype(np.int64)
    n, nx, ny = arr.T
    if np.any(n < 1) or np.any((nx < 0) | (nx > n)) or np.any((ny < 0) | (ny > n)):
        raise ValueError("every row needs n >= 1 and 0 <= n_x, n_y <= n")
    return arr


def check_random_state(seed) -> np.random.Generator:
    """Turn None, an int or a Generator into a ``numpy.random.Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(seed)
    raise ValueError(f"{seed!r} cannot be used to seed a numpy Generator")


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent stream for a logical task identified by ``(seed, *keys)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))
