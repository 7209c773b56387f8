"""Simulation engine for monitoring an evolving mechanism.

A scenario is a mechanism timeline (one spec before the change point and one
after, optionally further changes) plus an audit tuple. Every replication
draws fresh batches on ``x`` and ``x_prime`` at each time point, feeds the
standardized gap into a :class:`~dpmonitor.detector.WeightedDetector` and
records the detector path. Replication ``r`` owns the random stream
``(seed, r)``, so results do not depend on execution order or ``n_jobs``.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
from joblib import Parallel, delayed

from ._validation import check_beta, check_open_unit, check_positive_int, derive_rng
from .detector import WeightedDetector
from .estimation import DEFAULT_STABILIZER, AuditTuple, standardized_gaps
from .mechanisms import (
    ExactBits,
    GaussianNoise,
    HalfLineLE,
    LaplaceNoise,
    LaplaceSum,
    MechanismSpec,
    PointSet,
    ReportNoisyMax,
    RNMVariant,
    Svt,
    SvtVariant,
    noiseless_output,
    sample_batch,
)
from .threshold import ThresholdRequest, cached_quantile

__all__ = [
    "SCENARIO_IDS",
    "HARMFUL_IDS",
    "Timeline",
    "ScenarioSpec",
    "RunRecord",
    "ScenarioResult",
    "build_scenario",
    "scenario_from_dict",
    "scenario_to_dict",
    "load_scenario",
    "run_monitor",
    "run_experiment",
    "summarize",
    "delay_rate_check",
    "write_results_csv",
    "write_summary_csv",
]

SCENARIO_IDS = tuple("abcdefgh")
HARMFUL_IDS = tuple("abcdef")

_SVT_X = (0, 0, 0, 0, 0, 1, 1, 1, 1, 1)
_SVT_X_PRIME = (1, 1, 1, 1, 1, 0, 0, 0, 0, 0)


@dataclasses.dataclass(frozen=True)
class Timeline:
    """Piecewise-constant mechanism schedule: ``specs[k]`` runs from ``starts[k]``."""

    starts: tuple[int, ...]
    specs: tuple[MechanismSpec, ...]

    def __post_init__(self):
        if not self.starts or self.starts[0] != 1:
            raise ValueError("a timeline starts at time 1")
        if any(b <= a for a, b in zip(self.starts, self.starts[1:])):
            raise ValueError(f"change times must increase strictly, got {self.starts}")
        if len(self.starts) != len(self.specs):
            raise ValueError("one mechanism per segment")
        if len({s.kind for s in self.specs}) != 1:
            raise ValueError("all mechanisms on a timeline must share the output space")

    def segment(self, t: int) -> int:
        return int(np.searchsorted(self.starts, t, side="right") - 1)

    def at(self, t: int) -> MechanismSpec:
        return self.specs[self.segment(t)]


@dataclasses.dataclass(frozen=True)
class ScenarioSpec:
    id: str
    pre_change: MechanismSpec
    post_change: MechanismSpec
    change_time: int
    audit_tuple: AuditTuple
    harmful: bool
    later_changes: tuple[tuple[int, MechanismSpec], ...] = ()

    def __post_init__(self):
        check_positive_int(self.change_time, "change_time")
        self.timeline()

    def timeline(self) -> Timeline:
        starts = [1]
        specs = [self.pre_change]
        if self.change_time > 1:
            starts.append(self.change_time)
            specs.append(self.post_change)
        else:
            specs = [self.post_change]
        for t, spec in self.later_changes:
            starts.append(int(t))
            specs.append(spec)
        return Timeline(tuple(starts), tuple(specs))


@dataclasses.dataclass
class RunRecord:
    scenario: str
    rep: int
    seed: int
    d_values: np.ndarray
    first_detection: int | None
    change_time: int

    @property
    def delay(self) -> int | None:
        if self.first_detection is None or self.first_detection < self.change_time:
            return None
        return self.first_detection - self.change_time

    def __eq__(self, other):
        return (
            isinstance(other, RunRecord)
            and (self.scenario, self.rep, self.seed, self.first_detection, self.change_time)
            == (other.scenario, other.rep, other.seed, other.first_detection, other.change_time)
            and np.array_equal(self.d_values, other.d_values)
        )


@dataclasses.dataclass
class ScenarioResult:
    scenario: str
    n: int
    horizon: int
    change_time: int
    q: float
    records: list[RunRecord]
    detection_curve: np.ndarray
    mean_delay: float | None
    median_delay: float | None
    false_alarm_frac: float

    @property
    def final_detection(self) -> float:
        return float(self.detection_curve[-1])


# --------------------------------------------------------------------------
# Scenario catalogue


def _svt(variant, epsilon):
    return Svt(variant=variant, epsilon=epsilon, threshold=1.0, bound=1, sensitivity=1.0)


def build_scenario(id: str, epsilon: float = 1.0, change_time: int = 50) -> ScenarioSpec:
    """One of the eight reference scenarios ``'a'`` to ``'h'``.

    Scenarios a-f introduce a violation at ``change_time``; g and h make a
    harmless change. Events for e and f are the outputs the post-change
    mechanism produces on ``x`` with all noise removed.
    """
    zeros = (0.0,) * 10
    one_hot = (1.0,) + (0.0,) * 9
    if id == "a":
        pre, post = LaplaceSum(noise=LaplaceNoise(1.0)), LaplaceSum(noise=LaplaceNoise(0.5))
        tup = AuditTuple(zeros, one_hot, HalfLineLE(0.0), epsilon)
        return ScenarioSpec("a", pre, post, change_time, tup, True)
    if id == "b":
        pre, post = LaplaceSum(noise=LaplaceNoise(1.0)), LaplaceSum(noise=GaussianNoise(2.0))
        tup = AuditTuple(zeros, one_hot, HalfLineLE(-1.0), epsilon)
        return ScenarioSpec("b", pre, post, change_time, tup, True)
    if id in ("c", "g"):
        pre = ReportNoisyMax(epsilon=epsilon, variant=RNMVariant.RETURN_INDEX)
        if id == "c":
            post = dataclasses.replace(pre, variant=RNMVariant.RETURN_MAX_VALUE)
            event = HalfLineLE(2.0)
        else:
            post = dataclasses.replace(pre, variant=RNMVariant.EXPONENTIAL_NOISE_INDEX)
            event = PointSet({3})
        tup = AuditTuple((1.0,) * 5, (2.0,) * 5, event, epsilon)
        return ScenarioSpec(id, pre, post, change_time, tup, id == "c")
    if id in ("d", "e", "f", "h"):
        pre = _svt(SvtVariant.V2, epsilon)
        post = _svt({"d": SvtVariant.V4, "e": SvtVariant.V5, "f": SvtVariant.V6, "h": SvtVariant.V1}[id], epsilon)
        x, xp = (_SVT_X_PRIME, _SVT_X) if id == "f" else (_SVT_X, _SVT_X_PRIME)
        if id in ("e", "f"):
            event = ExactBits(noiseless_output(post.with_input(x)).bits)
        else:
            event = ExactBits((0, 0, 0, 0, 0, 0, 1))
        tup = AuditTuple(x, xp, event, epsilon)
        return ScenarioSpec(id, pre, post, change_time, tup, id != "h")
    raise ValueError(f"unknown scenario {id!r}; expected one of {', '.join(SCENARIO_IDS)}")


# --------------------------------------------------------------------------
# JSON scenario files


def _schema():
    return json.loads(resources.files("dpmonitor").joinpath("scenario_schema.json").read_text())


def _mechanism_from_dict(d) -> MechanismSpec:
    kind = d["mechanism"]
    if kind == "laplace_sum":
        nz = d["noise"]
        noise = LaplaceNoise(nz["scale"]) if nz["type"] == "laplace" else GaussianNoise(nz["variance"])
        return LaplaceSum(noise=noise)
    if kind == "report_noisy_max":
        return ReportNoisyMax(epsilon=d.get("epsilon", 1.0), variant=d.get("variant", "return_index"))
    return Svt(
        variant=d.get("variant", "V2"),
        epsilon=d.get("epsilon", 1.0),
        threshold=d.get("threshold", 1.0),
        bound=d.get("bound", 1),
        sensitivity=d.get("sensitivity", 1.0),
    )


def _mechanism_to_dict(spec: MechanismSpec) -> dict:
    if isinstance(spec, LaplaceSum):
        if isinstance(spec.noise, LaplaceNoise):
            noise = {"type": "laplace", "scale": spec.noise.scale}
        else:
            noise = {"type": "gaussian", "variance": spec.noise.variance}
        return {"mechanism": "laplace_sum", "noise": noise}
    if isinstance(spec, ReportNoisyMax):
        return {"mechanism": "report_noisy_max", "epsilon": spec.epsilon, "variant": spec.variant.value}
    return {
        "mechanism": "svt",
        "variant": spec.variant.value,
        "epsilon": spec.epsilon,
        "threshold": spec.threshold,
        "bound": spec.bound,
        "sensitivity": spec.sensitivity,
    }


def _event_from_dict(d):
    if d["type"] == "half_line_le":
        return HalfLineLE(d["a"])
    if d["type"] == "point_set":
        return PointSet(d["points"])
    return ExactBits(tuple(d["bits"]))


def _event_to_dict(e) -> dict:
    if isinstance(e, HalfLineLE):
        return {"type": "half_line_le", "a": e.a}
    if isinstance(e, PointSet):
        return {"type": "point_set", "points": sorted(e.points)}
    return {"type": "exact_bits", "bits": list(e.pattern)}


def scenario_from_dict(d: dict) -> ScenarioSpec:
    """Build a scenario from its JSON form (validated against the shipped schema)."""
    jsonschema.validate(d, _schema())
    t = d["tuple"]
    tup = AuditTuple(t["x"], t["x_prime"], _event_from_dict(t["event"]), t.get("epsilon", 1.0))
    later = tuple((c["time"], _mechanism_from_dict(c["mechanism"])) for c in d.get("later_changes", []))
    return ScenarioSpec(
        d["id"],
        _mechanism_from_dict(d["pre_change"]),
        _mechanism_from_dict(d["post_change"]),
        d["change_time"],
        tup,
        d["harmful"],
        later,
    )


def scenario_to_dict(s: ScenarioSpec) -> dict:
    out = {
        "id": s.id,
        "pre_change": _mechanism_to_dict(s.pre_change),
        "post_change": _mechanism_to_dict(s.post_change),
        "change_time": s.change_time,
        "tuple": {
            "x": list(s.audit_tuple.x),
            "x_prime": list(s.audit_tuple.x_prime),
            "event": _event_to_dict(s.audit_tuple.event),
            "epsilon": s.audit_tuple.epsilon,
        },
        "harmful": s.harmful,
    }
    if s.later_changes:
        out["later_changes"] = [{"time": t, "mechanism": _mechanism_to_dict(m)} for t, m in s.later_changes]
    return out


def load_scenario(path) -> ScenarioSpec:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


# --------------------------------------------------------------------------
# Simulation


def simulate_counts(timeline: Timeline, tuples, n: int, horizon: int, rngs) -> np.ndarray:
    """Hit counts ``(n, n_x, n_y)`` for every tuple and time point.

    Args:
      timeline: mechanism schedule.
      tuples: audit tuples evaluated on the same timeline.
      n: batch size per input and time point.
      horizon: number of time points.
      rngs: one generator per tuple, or a single shared generator in which
        case all tuples must use the same inputs and share each batch.

    Returns:
      int64 array of shape ``(len(tuples), horizon, 3)``.
    """
    m = len(tuples)
    counts = np.empty((m, horizon, 3), dtype=np.int64)
    counts[:, :, 0] = n
    shared = isinstance(rngs, np.random.Generator)
    if shared and len({(t.x, t.x_prime) for t in tuples}) != 1:
        raise ValueError("shared batches require every member to use the same inputs")
    bound = [
        [(spec.with_input(t.x), spec.with_input(t.x_prime)) for spec in timeline.specs] for t in tuples
    ]
    for step in range(horizon):
        seg = timeline.segment(step + 1)
        if shared:
            sx, sy = bound[0][seg]
            bx, by = sample_batch(sx, n, rngs), sample_batch(sy, n, rngs)
            for j, t in enumerate(tuples):
                counts[j, step, 1] = t.event.count(bx)
                counts[j, step, 2] = t.event.count(by)
        else:
            for j, t in enumerate(tuples):
                sx, sy = bound[j][seg]
                counts[j, step, 1] = t.event.count(sample_batch(sx, n, rngs[j]))
                counts[j, step, 2] = t.event.count(sample_batch(sy, n, rngs[j]))
    return counts


def detector_path(counts, epsilon, horizon, beta, q, c_stab=DEFAULT_STABILIZER):
    """Detector values and first crossing for one count sequence."""
    det = WeightedDetector(horizon, beta, q)
    d_values = det.run(standardized_gaps(counts, epsilon, c_stab))
    return d_values, det.first_crossing


def run_monitor(
    scenario: ScenarioSpec,
    n: int = 750,
    horizon: int = 100,
    alpha: float = 0.05,
    beta: float = 0.25,
    q: float | None = None,
    seed: int = 0,
    rep: int = 0,
    c_stab: float = DEFAULT_STABILIZER,
) -> RunRecord:
    """One monitoring run over ``t = 1..horizon``.

    ``alpha`` is only used to calibrate ``q`` when it is not given.
    """
    n = check_positive_int(n, "n")
    horizon = check_positive_int(horizon, "horizon")
    if scenario.change_time > horizon:
        raise ValueError(f"change time {scenario.change_time} lies beyond horizon {horizon}")
    if q is None:
        q = cached_quantile(ThresholdRequest(alpha, beta))
    tup = scenario.audit_tuple
    counts = simulate_counts(scenario.timeline(), [tup], n, horizon, [derive_rng(seed, rep)])[0]
    d_values, first = detector_path(counts, tup.epsilon, horizon, beta, q, c_stab)
    return RunRecord(scenario.id, rep, seed, d_values, first, scenario.change_time)


def summarize(records: list[RunRecord], horizon: int) -> tuple[np.ndarray, float | None, float | None, float]:
    """Detection curve, mean and median delay, and pre-change false alarm fraction."""
    if not records:
        raise ValueError("no replications to summarize")
    firsts = np.array([r.first_detection if r.first_detection is not None else horizon + 1 for r in records])
    taus = np.arange(1, horizon + 1)
    curve = (firsts[None, :] <= taus[:, None]).mean(axis=1)
    delays = [r.delay for r in records if r.delay is not None]
    mean_delay = float(np.mean(delays)) if delays else None
    median_delay = float(np.median(delays)) if delays else None
    change = records[0].change_time
    false_alarm = float(np.mean(firsts < change))
    return curve, mean_delay, median_delay, false_alarm


def run_experiment(
    scenario: ScenarioSpec,
    reps: int = 100,
    n: int = 750,
    horizon: int = 100,
    alpha: float = 0.05,
    beta: float = 0.25,
    seed: int = 0,
    q: float | None = None,
    threshold_request: ThresholdRequest | None = None,
    cache_path=None,
    out=None,
    n_jobs: int = 1,
) -> ScenarioResult:
    """Run ``reps`` independent replications and aggregate them.

    The threshold is ``q`` if given, otherwise the (cached) quantile for
    ``threshold_request`` or, by default, for ``(alpha, beta)``. With ``out``
    set, per-replication rows go to ``out`` and the summary next to it.
    """
    reps = check_positive_int(reps, "reps")
    check_open_unit(alpha, "alpha")
    check_beta(beta)
    if q is None:
        req = threshold_request or ThresholdRequest(alpha, beta)
        q = cached_quantile(req, cache_path)
    if n_jobs == 1:
        records = [run_monitor(scenario, n, horizon, alpha, beta, q, seed, r) for r in range(reps)]
    else:
        records = Parallel(n_jobs=n_jobs)(
            delayed(run_monitor)(scenario, n, horizon, alpha, beta, q, seed, r) for r in range(reps)
        )
    curve, mean_d, median_d, fa = summarize(records, horizon)
    result = ScenarioResult(scenario.id, n, horizon, scenario.change_time, q, records, curve, mean_d, median_d, fa)
    if out is not None:
        write_results_csv([result], out)
        write_summary_csv([result], summary_path(out))
    return result


def delay_rate_check(mean_delays: dict, horizon: int, beta: float) -> list[dict]:
    """Mean delay rescaled by the rate ``n^(1/(2(1-beta)))`` for each ``n``.

    The delay bound holds only up to a random factor, so the table is meant
    for eyeballing trends rather than for exact comparisons.
    """
    if len(mean_delays) < 2:
        raise ValueError("need mean delays for at least two sample sizes")
    beta = check_beta(beta)
    exponent = 1.0 / (2.0 * (1.0 - beta))
    horizon_factor = horizon ** ((0.5 - beta) / (1.0 - beta))
    rows = []
    for n in sorted(mean_delays):
        d = mean_delays[n]
        rows.append(
            {
                "n": n,
                "mean_delay": d,
                "rate": horizon_factor / n**exponent,
                "scaled_delay": None if d is None else d * n**exponent,
            }
        )
    return rows


# --------------------------------------------------------------------------
# CSV output


def _g(x) -> str:
    if x is None:
        return ""
    return f"{x:.9g}"


def summary_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + "_summary" + (out.suffix or ".csv"))


def _write(path, text: str):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def results_csv(results: list[ScenarioResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "rep", "tau", "d_value", "q", "detected", "first_detection"])
    for res in results:
        for rec in res.records:
            first = "" if rec.first_detection is None else rec.first_detection
            for tau, d in enumerate(rec.d_values, start=1):
                detected = int(rec.first_detection is not None and tau >= rec.first_detection)
                w.writerow([rec.scenario, rec.rep, tau, _g(d), _g(res.q), detected, first])
    return buf.getvalue()


def summary_csv(results: list[ScenarioResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "tau", "detect_fraction"])
    for res in results:
        for tau, frac in enumerate(res.detection_curve, start=1):
            w.writerow([res.scenario, tau, _g(frac)])
    w.writerow([])
    w.writerow(["scenario", "mean_delay", "median_delay", "false_alarm_frac"])
    for res in results:
        w.writerow([res.scenario, _g(res.mean_delay), _g(res.median_delay), _g(res.false_alarm_frac)])
    return buf.getvalue()


def write_results_csv(results: list[ScenarioResult], path):
    _write(path, results_csv(results))


def write_summary_csv(results: list[ScenarioResult], path):
    _write(path, summary_csv(results))

