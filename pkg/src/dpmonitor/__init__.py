"""Continuous auditing of evolving randomized algorithms for differential privacy."""

from .baseline import BonferroniMonitor, naive_interval, naive_monitor
from .detector import PrivacyMonitor, WeightedDetector
from .estimation import AuditTuple, StandardizedGap, StepStatistic, count_hits, estimate_step, true_gap
from .harness import ScenarioSpec, build_scenario, run_experiment, run_monitor
from .panel import PanelConfig, panel_run
from .threshold import ThresholdRequest, cached_quantile, quantile

__version__ = "0.1.0"

__all__ = [
    "AuditTuple",
    "BonferroniMonitor",
    "PanelConfig",
    "PrivacyMonitor",
    "ScenarioSpec",
    "StandardizedGap",
    "StepStatistic",
    "ThresholdRequest",
    "WeightedDetector",
    "build_scenario",
    "cached_quantile",
    "count_hits",
    "estimate_step",
    "naive_interval",
    "naive_monitor",
    "panel_run",
    "quantile",
    "run_experiment",
    "run_monitor",
    "true_gap",
]
