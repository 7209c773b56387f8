"""Per-time-point estimate of the signed privacy gap and its standard error."""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_count_matrix, check_counts, check_positive
from .mechanisms import BitsBatch, Event, ScalarBatch, _as_batch

__all__ = [
    "DEFAULT_STABILIZER",
    "AuditTuple",
    "StepStatistic",
    "count_hits",
    "estimate_step",
    "standardized_gaps",
    "true_gap",
    "StandardizedGap",
]

DEFAULT_STABILIZER = 1e-6


@dataclasses.dataclass(frozen=True)
class AuditTuple:
    """Neighboring inputs ``x``, ``x_prime``, the witness event and the target epsilon."""

    x: tuple[float, ...]
    x_prime: tuple[float, ...]
    event: Event
    epsilon: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))
        object.__setattr__(self, "x_prime", tuple(float(v) for v in self.x_prime))
        if len(self.x) != len(self.x_prime):
            raise ValueError(
                f"neighboring inputs must have equal length, got {len(self.x)} and {len(self.x_prime)}"
            )
        check_positive(self.epsilon, "epsilon")


@dataclasses.dataclass(frozen=True)
class StepStatistic:
    n: int
    n_x: int
    n_y: int
    epsilon: float
    p_hat: float
    sigma_hat: float
    sigma_stab: float
    ratio: float


def count_hits(outputs, event: Event) -> int:
    """Number of outputs that fall in ``event``.

    ``outputs`` is a batch from :func:`~dpmonitor.mechanisms.sample_batch` or
    any sequence of single outputs.
    """
    if isinstance(outputs, (ScalarBatch, BitsBatch)):
        return event.count(outputs)
    return sum(event.count(_as_batch(o)) for o in outputs)


def estimate_step(n, n_x, n_y, epsilon, c_stab=DEFAULT_STABILIZER) -> StepStatistic:
    """Gap estimate, variance estimate and stabilized ratio for one time point.

    The ratio is ``p_hat / max(sigma_hat, c_stab)``; when ``sigma_hat`` and
    ``p_hat`` are both zero the ratio is 0 even for ``c_stab = 0``.
    """
    n, n_x, n_y = check_counts(n, n_x, n_y)
    if c_stab < 0:
        raise ValueError(f"c_stab must be >= 0, got {c_stab}")
    e = math.exp(epsilon)
    p_hat = (n_x - e * n_y) / n
    fx, fy = n_x / n, n_y / n
    var = n_x / n**2 * (1 - fx) + e * e * n_y / n**2 * (1 - fy)
    sigma_hat = math.sqrt(var)
    sigma_stab = max(sigma_hat, c_stab)
    if p_hat == 0.0:
        ratio = 0.0
    elif sigma_stab == 0.0:
        ratio = math.copysign(math.inf, p_hat)
    else:
        ratio = p_hat / sigma_stab
    return StepStatistic(n, n_x, n_y, float(epsilon), p_hat, sigma_hat, sigma_stab, ratio)


def standardized_gaps(counts, epsilon, c_stab=DEFAULT_STABILIZER) -> np.ndarray:
    """Vectorized ratios for rows ``(n, n_x, n_y)``; matches :func:`estimate_step`."""
    arr = check_count_matrix(counts).astype(float)
    n, nx, ny = arr.T
    e = math.exp(epsilon)
    p_hat = (nx - e * ny) / n
    var = nx / n**2 * (1 - nx / n) + e * e * ny / n**2 * (1 - ny / n)
    sigma = np.maximum(np.sqrt(var), c_stab)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = p_hat / sigma
    ratio[p_hat == 0.0] = 0.0
    return ratio


def true_gap(prob_x: float, prob_y: float, epsilon: float) -> float:
    """``P(A(x) in E) - e^eps P(A(x') in E)``; positive values are violations."""
    for p in (prob_x, prob_y):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"probabilities must lie in [0, 1], got {p}")
    return prob_x - math.exp(epsilon) * prob_y


class StandardizedGap(TransformerMixin, BaseEstimator):
    """Map hit-count rows ``(n, n_x, n_y)`` to standardized gap estimates.

    Stateless; ``fit`` only validates input so the transformer can sit at the
    head of a pipeline in front of :class:`~dpmonitor.detector.PrivacyMonitor`.
    """

    def __init__(self, epsilon=1.0, stabilizer=DEFAULT_STABILIZER):
        self.epsilon = epsilon
        self.stabilizer = stabilizer

    def fit(self, X, y=None):
        check_count_matrix(X)
        self.n_features_in_ = 3
        return self

    def transform(self, X) -> np.ndarray:
        return standardized_gaps(X, self.epsilon, self.stabilizer).reshape(-1, 1)

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        return tags
