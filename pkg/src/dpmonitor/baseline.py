"""Per-step auditor with a Bonferroni correction over the horizon.

Each time point is audited on its own batch with a one-sided normal
confidence interval for the privacy gap; a violation is reported when the
interval excludes 0. Correcting the level to ``alpha / T`` bounds the false
alarm rate over all ``T`` checks. Kept as the comparison point for
:class:`~dpmonitor.detector.PrivacyMonitor`.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.stats import norm
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_count_matrix, check_open_unit, check_positive_int
from .estimation import StepStatistic

__all__ = [
    "ConfidenceInterval",
    "naive_interval",
    "raw_ratio",
    "bonferroni_threshold",
    "naive_monitor",
    "BonferroniMonitor",
]


@dataclasses.dataclass(frozen=True)
class ConfidenceInterval:
    """The interval ``(lower, inf)``."""

    lower: float
    level: float

    def contains(self, value: float) -> bool:
        return value > self.lower

    @property
    def violation(self) -> bool:
        return self.lower >= 0.0


def naive_interval(step: StepStatistic, level: float) -> ConfidenceInterval:
    level = check_open_unit(level, "level")
    return ConfidenceInterval(step.p_hat + norm.ppf(level) * step.sigma_hat, level)


def raw_ratio(step: StepStatistic) -> float:
    """``p_hat / sigma_hat`` without stabilization (0/0 = 0, x/0 = +-inf)."""
    if step.p_hat == 0.0:
        return 0.0
    if step.sigma_hat == 0.0:
        return math.copysign(math.inf, step.p_hat)
    return step.p_hat / step.sigma_hat


def bonferroni_threshold(alpha: float, horizon: int) -> float:
    """Per-step critical ratio ``-Phi^{-1}(alpha / T)``."""
    return float(-norm.ppf(check_open_unit(alpha, "alpha") / check_positive_int(horizon, "T")))


def naive_monitor(steps, alpha: float, horizon: int) -> tuple[np.ndarray, bool]:
    """Audit every step at level ``alpha / T``.

    Args:
      steps: sequence of :class:`StepStatistic` or of raw ratios.
      alpha: overall false alarm rate.
      horizon: ``T``.

    Returns:
      ``(flags, violation)``: absorbing per-step flags and the overall decision.
    """
    ratios = np.array([raw_ratio(s) if isinstance(s, StepStatistic) else float(s) for s in steps])
    if len(ratios) > horizon:
        raise ValueError(f"{len(ratios)} steps exceed horizon {horizon}")
    crit = bonferroni_threshold(alpha, horizon)
    flags = np.maximum.accumulate(ratios >= crit) if len(ratios) else np.zeros(0, dtype=bool)
    return flags, bool(flags.any())


class BonferroniMonitor(BaseEstimator):
    """Estimator wrapper around :func:`naive_monitor` for count rows ``(n, n_x, n_y)``."""

    def __init__(self, epsilon=1.0, alpha=0.05, horizon=100):
        self.epsilon = epsilon
        self.alpha = alpha
        self.horizon = horizon

    def fit(self, X=None, y=None):
        self.threshold_ = bonferroni_threshold(self.alpha, self.horizon)
        return self

    def decision_function(self, X) -> np.ndarray:
        arr = check_count_matrix(X).astype(float)
        n, nx, ny = arr.T
        e = math.exp(self.epsilon)
        p_hat = (nx - e * ny) / n
        sigma = np.sqrt(nx / n**2 * (1 - nx / n) + e * e * ny / n**2 * (1 - ny / n))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = p_hat / sigma
        ratio[p_hat == 0.0] = 0.0
        return ratio

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "threshold_")
        ratios = self.decision_function(X)
        if len(ratios) > self.horizon:
            raise ValueError(f"{len(ratios)} steps exceed horizon {self.horizon}")
        return np.maximum.accumulate(ratios >= self.threshold_)
