"""Several monitors on one evolving mechanism, merged into a single decision.

Each member watches its own audit tuple at level ``global_alpha / m``; the
panel flags a violation as soon as any member does, which keeps the overall
false alarm rate at ``global_alpha`` by the union bound.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from ._validation import check_beta, check_open_unit, check_positive_int, derive_rng
from .estimation import DEFAULT_STABILIZER, AuditTuple
from .harness import Timeline, detector_path, simulate_counts
from .mechanisms import HalfLineLE, LaplaceNoise, LaplaceSum
from .threshold import DEFAULT_GRID, DEFAULT_REPS, DEFAULT_SEED, ThresholdRequest, cached_quantile

__all__ = ["PanelConfig", "PanelResult", "panel_run", "laplace_scale_panel"]


@dataclasses.dataclass(frozen=True)
class PanelConfig:
    members: tuple[AuditTuple, ...]
    global_alpha: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise ValueError("a panel needs at least one member")
        check_open_unit(self.global_alpha, "global_alpha")

    @property
    def per_member_alpha(self) -> float:
        return self.global_alpha / len(self.members)


@dataclasses.dataclass
class PanelResult:
    config: PanelConfig
    thresholds: np.ndarray
    first_detections: np.ndarray  # (reps, m), horizon + 1 when never detected
    member_curves: np.ndarray  # (m, horizon)
    aggregate_curve: np.ndarray  # (horizon,)
    member_d_values: np.ndarray  # (reps, m, horizon)


def panel_run(
    config: PanelConfig,
    timeline: Timeline,
    n: int = 750,
    horizon: int = 100,
    beta: float = 0.25,
    seed: int = 0,
    reps: int = 100,
    shared_batches: bool = False,
    thresholds=None,
    grid: int = DEFAULT_GRID,
    n_paths: int = DEFAULT_REPS,
    threshold_seed: int = DEFAULT_SEED,
    cache_path=None,
    c_stab: float = DEFAULT_STABILIZER,
) -> PanelResult:
    """Run every member over ``reps`` replications of the same timeline.

    Without ``shared_batches`` member ``j`` of replication ``r`` draws from
    its own stream ``(seed, r, j)``; with it, all members read the same
    batches drawn from ``(seed, r)``.
    """
    n = check_positive_int(n, "n")
    horizon = check_positive_int(horizon, "horizon")
    reps = check_positive_int(reps, "reps")
    beta = check_beta(beta)
    m = len(config.members)
    if thresholds is None:
        q = cached_quantile(
            ThresholdRequest(config.per_member_alpha, beta, grid, n_paths, threshold_seed), cache_path
        )
        thresholds = np.full(m, q)
    thresholds = np.broadcast_to(np.asarray(thresholds, dtype=float), (m,)).copy()

    firsts = np.full((reps, m), horizon + 1, dtype=np.int64)
    d_all = np.empty((reps, m, horizon))
    for r in range(reps):
        rngs = derive_rng(seed, r) if shared_batches else [derive_rng(seed, r, j) for j in range(m)]
        counts = simulate_counts(timeline, config.members, n, horizon, rngs)
        for j, tup in enumerate(config.members):
            d_values, first = detector_path(counts[j], tup.epsilon, horizon, beta, thresholds[j], c_stab)
            d_all[r, j] = d_values
            if first is not None:
                firsts[r, j] = first

    taus = np.arange(1, horizon + 1)
    member_curves = (firsts[:, :, None] <= taus).mean(axis=0)
    aggregate_curve = (firsts.min(axis=1)[:, None] <= taus).mean(axis=0)
    return PanelResult(config, thresholds, firsts, member_curves, aggregate_curve, d_all)


def laplace_scale_panel(
    events=(-1.0, -0.5, 0.0, 0.5),
    global_alpha: float = 0.05,
    scale_before: float = 1.0,
    scale_after: float = 0.9,
    change_time: int = 50,
    epsilon: float = 1.0,
) -> tuple[PanelConfig, Timeline]:
    """Laplace sum whose noise scale drops at ``change_time``, watched through tail events."""
    zeros = (0.0,) * 10
    one_hot = (1.0,) + (0.0,) * 9
    members = tuple(AuditTuple(zeros, one_hot, HalfLineLE(a), epsilon) for a in events)
    timeline = Timeline(
        (1, change_time),
        (LaplaceSum(noise=LaplaceNoise(scale_before)), LaplaceSum(noise=LaplaceNoise(scale_after))),
    )
    return PanelConfig(members, global_alpha), timeline
