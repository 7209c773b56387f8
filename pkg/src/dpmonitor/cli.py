"""Command line entry point: ``dpmonitor {threshold,run,panel,sweep-n}``."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys

from . import harness, panel, threshold
from .harness import SCENARIO_IDS, _g, _write


def _threshold_request(args, alpha) -> threshold.ThresholdRequest:
    return threshold.ThresholdRequest(alpha, args.beta, args.grid, args.paths, args.threshold_seed)


def _add_threshold_opts(p, paths_flag="--paths"):
    p.add_argument("--grid", type=int, default=threshold.DEFAULT_GRID, help="Brownian path grid points")
    p.add_argument(paths_flag, dest="paths", type=int, default=threshold.DEFAULT_REPS,
                   help="Monte Carlo paths for the threshold")
    p.add_argument("--threshold-seed", type=int, default=threshold.DEFAULT_SEED)
    p.add_argument("--cache", default=None, help="threshold cache file (default: ~/.cache/dpmonitor)")


def _add_run_opts(p):
    p.add_argument("--n", type=int, default=750, help="batch size per input and time point")
    p.add_argument("--t-horizon", type=int, default=100)
    p.add_argument("--reps", type=int, default=100, help="independent replications")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--beta", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--change-time", type=int, default=50)
    p.add_argument("--n-jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    _add_threshold_opts(p)


def _cache(args):
    return args.cache if args.cache is not None else threshold.default_cache_path()


def cmd_threshold(args):
    req = threshold.ThresholdRequest(args.alpha, args.beta, args.grid, args.reps, args.seed)
    q = threshold.cached_quantile(req, _cache(args))
    print(f"{q:.17g}")


def cmd_run(args):
    if args.scenario_file:
        scenario = harness.load_scenario(args.scenario_file)
    else:
        scenario = harness.build_scenario(args.scenario, change_time=args.change_time)
    q = threshold.cached_quantile(_threshold_request(args, args.alpha), _cache(args))
    res = harness.run_experiment(
        scenario, args.reps, args.n, args.t_horizon, args.alpha, args.beta, args.seed,
        q=q, out=args.out, n_jobs=args.n_jobs,
    )
    print(f"scenario {res.scenario}: q={q:.6g} detected by T: {res.final_detection:.2f} "
          f"pre-change false alarms: {res.false_alarm_frac:.2f} "
          f"median delay: {_g(res.median_delay) or '-'}")


def cmd_panel(args):
    if args.scenario_base != "laplace-scale":
        raise SystemExit(f"unknown scenario base {args.scenario_base!r}")
    events = [float(a) for a in args.events.split(",")]
    config, timeline = panel.laplace_scale_panel(events, args.global_alpha, change_time=args.change_time)
    q = threshold.cached_quantile(_threshold_request(args, config.per_member_alpha), _cache(args))
    res = panel.panel_run(
        config, timeline, args.n, args.t_horizon, args.beta, args.seed, args.reps,
        shared_batches=args.shared_batches, thresholds=q,
    )
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["member", "event", "tau", "detect_fraction"])
    for j, a in enumerate(events):
        for tau, frac in enumerate(res.member_curves[j], start=1):
            w.writerow([j, _g(a), tau, _g(frac)])
    for tau, frac in enumerate(res.aggregate_curve, start=1):
        w.writerow(["aggregate", "", tau, _g(frac)])
    _write(args.out, buf.getvalue())
    finals = ", ".join(f"(-inf,{a:g}]: {c[-1]:.2f}" for a, c in zip(events, res.member_curves))
    print(f"per-member alpha {config.per_member_alpha:g}, q={q:.6g}; {finals}; aggregate: {res.aggregate_curve[-1]:.2f}")


def cmd_sweep(args):
    scenario = harness.build_scenario(args.scenario, change_time=args.change_time)
    q = threshold.cached_quantile(_threshold_request(args, args.alpha), _cache(args))
    ns = [int(v) for v in args.n_list.split(",")]
    results = {
        n: harness.run_experiment(scenario, args.reps, n, args.t_horizon, args.alpha, args.beta,
                                  args.seed, q=q, n_jobs=args.n_jobs)
        for n in ns
    }
    rates = harness.delay_rate_check({n: r.mean_delay for n, r in results.items()}, args.t_horizon, args.beta)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "n", "tau", "detect_fraction"])
    for n, res in results.items():
        for tau, frac in enumerate(res.detection_curve, start=1):
            w.writerow([scenario.id, n, tau, _g(frac)])
    w.writerow([])
    w.writerow(["scenario", "n", "mean_delay", "median_delay", "false_alarm_frac", "scaled_delay"])
    for row in rates:
        res = results[row["n"]]
        w.writerow([scenario.id, row["n"], _g(res.mean_delay), _g(res.median_delay),
                    _g(res.false_alarm_frac), _g(row["scaled_delay"])])
    _write(args.out, buf.getvalue())
    for row in rates:
        print(f"n={row['n']}: mean delay {_g(row['mean_delay']) or '-'}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpmonitor", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("threshold", help="print the calibrated detector threshold q(alpha)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--beta", type=float, default=0.25)
    p.add_argument("--grid", type=int, default=threshold.DEFAULT_GRID)
    p.add_argument("--reps", type=int, default=threshold.DEFAULT_REPS)
    p.add_argument("--seed", type=int, default=threshold.DEFAULT_SEED)
    p.add_argument("--cache", default=None)
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("run", help="replicate one monitoring scenario and write CSVs")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--scenario", choices=SCENARIO_IDS)
    group.add_argument("--scenario-file", help="JSON scenario (see scenario_schema.json)")
    _add_run_opts(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("panel", help="several tail events on a Laplace noise-scale change")
    p.add_argument("--scenario-base", default="laplace-scale", choices=["laplace-scale"])
    p.add_argument("--events", default="-1,-0.5,0,0.5", help="comma separated half-line endpoints")
    p.add_argument("--global-alpha", type=float, default=0.05)
    p.add_argument("--shared-batches", action="store_true")
    _add_run_opts(p)
    p.set_defaults(func=cmd_panel)

    p = sub.add_parser("sweep-n", help="detection delay across batch sizes")
    p.add_argument("--scenario", choices=["b", "d"], required=True)
    p.add_argument("--n-list", default="200,500,1000,2000")
    _add_run_opts(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def _join_list_values(argv):
    # "--events -1,..." would otherwise be parsed as an unknown flag.
    out, it = [], iter(argv)
    for tok in it:
        if tok in ("--events", "--n-list"):
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(_join_list_values(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    args.func(args)


if __name__ == "__main__":
    main()
