"""Weighted time-aggregating detector and its estimator front end.

At time ``tau`` the detector looks back over every window ending at ``tau``
and takes the largest weighted window sum of standardized gaps::

    D(tau) = max_{0 <= l < tau} (S_tau - S_{tau-l-1}) / ((l+1)^beta * T^(1/2-beta))

where ``S`` are prefix sums of the ratios. A violation is flagged the first
time ``D(tau)`` exceeds the threshold ``q``; the flag is absorbing.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import threshold as _threshold
from ._validation import (
    check_beta,
    check_count_matrix,
    check_open_unit,
    check_positive_int,
)
from .estimation import DEFAULT_STABILIZER, standardized_gaps

__all__ = ["WeightedDetector", "PrivacyMonitor", "window_weights"]


def window_weights(horizon: int, beta: float) -> np.ndarray:
    """``1 / ((l+1)^beta * T^(1/2-beta))`` for window lengths ``l+1 = 1..T``."""
    lengths = np.arange(1, horizon + 1, dtype=float)
    return 1.0 / (lengths**beta * horizon ** (0.5 - beta))


class WeightedDetector:
    """Online detector state for one monitoring run.

    Args:
      horizon: number of time points ``T``.
      beta: window weight exponent in ``[0, 1/2)``.
      threshold: critical value ``q``; decisions use a strict ``>``.
    """

    def __init__(self, horizon: int, beta: float = 0.25, threshold: float = math.inf):
        self.horizon = check_positive_int(horizon, "horizon T")
        self.beta = check_beta(beta)
        self.threshold = float(threshold)
        self._weights = window_weights(self.horizon, self.beta)
        # prefix sums carried as hi + lo (error-free TwoSum per push) so that
        # window sums stay accurate even when they nearly cancel
        self._cumsums = np.zeros(self.horizon + 1)
        self._lo = np.zeros(self.horizon + 1)
        self.tau = 0
        self.first_crossing: int | None = None
        self._max = -math.inf

    @property
    def cumsums(self) -> np.ndarray:
        return self._cumsums[: self.tau + 1] + self._lo[: self.tau + 1]

    @property
    def detected(self) -> bool:
        return self.first_crossing is not None

    def push(self, ratio: float) -> tuple[float, bool]:
        """Add the ratio for the next time point.

        Returns:
          ``(d_value, detected)`` where ``detected`` is True from the first
          crossing onward.
        """
        if self.tau >= self.horizon:
            raise RuntimeError(f"horizon T={self.horizon} exhausted; no further pushes allowed")
        ratio = float(ratio)
        if not math.isfinite(ratio):
            raise ValueError(f"ratios must be finite, got {ratio}; use a positive stabilizer")
        tau = self.tau + 1
        S, lo = self._cumsums, self._lo
        prev = S[tau - 1]
        S[tau] = prev + ratio
        b = S[tau] - prev
        lo[tau] = lo[tau - 1] + ((prev - (S[tau] - b)) + (ratio - b))
        # windows l = 0..tau-1 start right after S[tau-1], S[tau-2], ..., S[0]
        sums = (S[tau] - S[tau - 1 :: -1]) + (lo[tau] - lo[tau - 1 :: -1])
        d_value = float(np.max(sums * self._weights[:tau]))
        self.tau = tau
        self._max = max(self._max, d_value)
        if self.first_crossing is None and d_value > self.threshold:
            self.first_crossing = tau
        return d_value, self.detected

    def max_value(self) -> float:
        """Largest ``D(tau)`` seen so far."""
        if self.tau == 0:
            raise RuntimeError("no ratio has been pushed yet")
        return self._max

    def run(self, ratios) -> np.ndarray:
        """Push every ratio and return the sequence of detector values."""
        return np.array([self.push(r)[0] for r in ratios])


class PrivacyMonitor(BaseEstimator):
    """Continuous privacy monitor with a Brownian-motion calibrated threshold.

    ``fit`` calibrates the threshold (it never looks at data). ``predict``
    scans a sequence of time points and flags a violation from the first time
    the detector exceeds the threshold.

    Rows of ``X`` are either hit counts ``(n, n_x, n_y)`` or single
    standardized gaps, e.g. the output of
    :class:`~dpmonitor.estimation.StandardizedGap`.

    Args:
      epsilon: targeted privacy level.
      alpha: tolerated false alarm rate over the whole horizon.
      beta: window weight exponent in ``[0, 1/2)``; larger values favor
        fast detection of large violations.
      horizon: number of time points ``T``.
      stabilizer: floor applied to the standard error estimate.
      threshold: fixed critical value; ``None`` calibrates it by simulation.
      grid, n_paths, seed: Monte Carlo settings for calibration.
      cache_path: optional threshold cache file.
    """

    def __init__(
        self,
        epsilon=1.0,
        alpha=0.05,
        beta=0.25,
        horizon=100,
        stabilizer=DEFAULT_STABILIZER,
        threshold=None,
        grid=None,
        n_paths=None,
        seed=None,
        cache_path=None,
    ):
        self.epsilon = epsilon
        self.alpha = alpha
        self.beta = beta
        self.horizon = horizon
        self.stabilizer = stabilizer
        self.threshold = threshold
        self.grid = grid
        self.n_paths = n_paths
        self.seed = seed
        self.cache_path = cache_path

    def fit(self, X=None, y=None):
        check_open_unit(self.alpha, "alpha")
        check_beta(self.beta)
        check_positive_int(self.horizon, "horizon")
        if self.threshold is not None:
            self.threshold_ = float(self.threshold)
        else:
            req = _threshold.ThresholdRequest(
                alpha=self.alpha,
                beta=self.beta,
                grid=self.grid or _threshold.DEFAULT_GRID,
                reps=self.n_paths or _threshold.DEFAULT_REPS,
                seed=_threshold.DEFAULT_SEED if self.seed is None else self.seed,
            )
            self.threshold_ = _threshold.cached_quantile(req, self.cache_path)
        return self

    def _ratios(self, X) -> np.ndarray:
        arr = np.asarray(X, dtype=float)
        if arr.ndim == 2 and arr.shape[1] == 3:
            return standardized_gaps(check_count_matrix(X), self.epsilon, self.stabilizer)
        if arr.ndim == 1 or (arr.ndim == 2 and arr.shape[1] == 1):
            return arr.reshape(-1)
        raise ValueError(f"expected count rows (tau, 3) or ratios (tau,) / (tau, 1), got {arr.shape}")

    def _scan(self, X) -> WeightedDetector:
        check_is_fitted(self, "threshold_")
        ratios = self._ratios(X)
        if len(ratios) > self.horizon:
            raise ValueError(f"{len(ratios)} time points exceed horizon {self.horizon}")
        det = WeightedDetector(self.horizon, self.beta, self.threshold_)
        self.d_values_ = det.run(ratios)
        return det

    def decision_function(self, X) -> np.ndarray:
        """Detector value ``D(tau)`` at every time point."""
        self._scan(X)
        return self.d_values_

    def predict(self, X) -> np.ndarray:
        """Absorbing violation flags, one per time point."""
        det = self._scan(X)
        flags = np.zeros(len(self.d_values_), dtype=bool)
        if det.first_crossing is not None:
            flags[det.first_crossing - 1 :] = True
        return flags

    def first_detection(self, X) -> int | None:
        """1-based time of the first crossing, or None."""
        return self._scan(X).first_crossing
