"""Command-line entry point.

Subcommands: solve (backward tables to disk), simulate (trajectory CSVs and a
summary), nash-gap (n-player gap report), plot (SVG from a trajectory CSV),
calibrate (parameter estimation from metered data).  Every command is a pure
function of (scenario file, seed): reruns produce byte-identical outputs.

Exit codes: 0 ok, 2 configuration error, 3 numerical refusal, 4 missing
artifact.  DSMFG_OUTPUT_DIR overrides the scenario's output directory.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import artifacts, control, costs
from .bsde import b_on_path, estimate_b_path
from .calibration import (FormatSpec, calibrate, ingest_csv, write_result,
                          write_seasonality_csv)
from .control import (forward_common_control, forward_player_control,
                      price_on_path, solve_equilibrium, write_trajectory_csv)
from .dynamics import simulate_common_path, simulate_player_path, write_common_csv
from .errors import ConfigError, DsmfgError, MissingArtifactError, RefusalError
from .plotting import read_table, render_timeseries
from .scenario import parse_scenario

EXIT_CONFIG = 2
EXIT_REFUSAL = 3
EXIT_MISSING = 4


def _out_dir(scenario):
    return Path(os.environ.get("DSMFG_OUTPUT_DIR", scenario.out_dir))


def cmd_solve(args):
    scenario = parse_scenario(args.scenario)
    out = _out_dir(scenario)
    tables = solve_equilibrium(scenario.params, scenario.grid(), mode=scenario.mode,
                               agg_double_f=scenario.agg_double_f)
    written = artifacts.write_artifacts(scenario, tables, out)
    for path in written:
        print(f"wrote {path}")
    return 0


def _tables_for(scenario, out, auto_solve):
    try:
        return artifacts.load_tables(scenario, out)
    except MissingArtifactError:
        if not auto_solve:
            raise
        tables = solve_equilibrium(scenario.params, scenario.grid(), mode=scenario.mode,
                                   agg_double_f=scenario.agg_double_f)
        artifacts.write_artifacts(scenario, tables, out)
        return tables


def cmd_simulate(args):
    scenario = parse_scenario(args.scenario)
    out = _out_dir(scenario)
    tables = _tables_for(scenario, out, args.auto_solve)
    params, grid, seed = scenario.params, scenario.grid(), scenario.seed
    abs_ah, abs_as, prices, peaks, act_dev, act_n = [], [], [], [], 0.0, 0
    ah_all, qh_all = [], []
    for j in range(scenario.n_common_paths):
        common = simulate_common_path(params, grid, seed, path_index=j)
        forward_common_control(common, tables)
        with open(out / f"common_{j:04d}.csv", "w", newline="") as f:
            write_common_csv(common, f)
        if scenario.b_mode == "exact":
            b = b_on_path(common, tables)
        else:
            b, _ = estimate_b_path(common, tables, scenario.m_inner, seed, path_index=j)
        for i in range(scenario.n_players):
            player = simulate_player_path(common, params, grid, seed, player_index=(j, i))
            traj = forward_player_control(player, common, tables, b)
            with open(out / f"trajectory_{j:04d}_p{i:04d}.csv", "w", newline="") as f:
                write_trajectory_csv(common, traj, tables, f)
            abs_as.append(np.mean(np.abs(traj.alpha_star[:-1])))
        abs_ah.append(np.mean(np.abs(common.alpha_hat[:-1])))
        ah_all.append(common.alpha_hat[:-1])
        qh_all.append(common.q_hat[:-1])
        price = price_on_path(common, tables)
        prices.append(price)
        peaks.append(np.max(price))
        active = common.J[:-1] == 1
        if np.any(active):
            dev = np.abs(common.q_hat[:-1] + common.alpha_hat[:-1]
                         - common.mean_q[:-1] - params.alpha_bar)
            act_dev += float(np.sum(dev[active]))
            act_n += int(np.sum(active))
    prices = np.concatenate(prices)
    # pooled correlation of the effort with the consumption level: negative
    # under real-time pricing (valley filling)
    ah_flat, qh_flat = np.concatenate(ah_all), np.concatenate(qh_all)
    if np.std(ah_flat) > 0 and np.std(qh_flat) > 0:
        corr = float(np.corrcoef(ah_flat, qh_flat)[0, 1])
    else:
        corr = float("nan")
    lines = [
        f"mode = {scenario.mode}",
        f"n_common_paths = {scenario.n_common_paths}",
        f"n_players = {scenario.n_players}",
        "time_avg_abs_alpha_hat = %.17g" % float(np.mean(abs_ah)),
        "time_avg_abs_alpha_star = %.17g" % float(np.mean(abs_as)),
        "price_mean = %.17g" % float(np.mean(prices)),
        "price_min = %.17g" % float(np.min(prices)),
        "price_max = %.17g" % float(np.max(prices)),
        "price_peak_mean = %.17g" % float(np.mean(peaks)),
        "corr_alpha_hat_q_hat = %.17g" % corr,
        f"activation_steps = {act_n}",
        "activation_deviation_mean = %.17g" % (act_dev / act_n if act_n else float("nan")),
    ]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print(f"wrote {out / 'summary.txt'}")
    return 0


def cmd_nash_gap(args):
    scenario = parse_scenario(args.scenario)
    out = _out_dir(scenario)
    out.mkdir(parents=True, exist_ok=True)
    tables = _tables_for(scenario, out, args.auto_solve)
    if args.sweep:
        sizes = [int(x) for x in args.sweep.split(",")]
    else:
        sizes = [scenario.n_players]
    reports = []
    for n in sizes:
        reports.append(costs.nash_gap(n, tables, scenario.mc_samples, scenario.seed,
                                      deviations=args.deviations, tag=f"nash{n}"))
    with open(out / "nash_gap.txt", "w") as txt, \
            open(out / "nash_gap.csv", "w", newline="") as csvfile:
        costs.write_nash_reports(reports, txt, csvfile)
    print(f"wrote {out / 'nash_gap.txt'}")
    return 0


def cmd_plot(args):
    table = read_table(args.csv)
    render_timeseries(table, args.y, args.out, shade_j=not args.no_shade,
                      title=args.title)
    print(f"wrote {args.out}")
    return 0


def cmd_calibrate(args):
    fmt = FormatSpec(timestamp_col=args.timestamp_col, meter_col=args.meter_col,
                     value_col=args.value_col, slot_count=args.slot_count,
                     delimiter=args.delimiter, day_filter=args.day_filter)
    panel = ingest_csv(args.data, fmt)
    pairs = None
    if args.price_data:
        table = read_table(args.price_data)
        if "demand" not in table or "price" not in table:
            raise ConfigError(f"{args.price_data}: need 'demand' and 'price' columns")
        pairs = np.column_stack([table["demand"], table["price"]])
    dt = args.slot_hours if args.slot_hours else 24.0 / fmt.slot_count
    result = calibrate(panel, dt, demand_price_pairs=pairs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "calibration.txt", "w") as f:
        write_result(result, f)
    with open(out / "seasonality.csv", "w", newline="") as f:
        write_seasonality_csv(result.seasonality, f)
    print(f"ingested {panel.day_count} days x {panel.slot_count} slots x "
          f"{panel.meter_count} meters "
          f"({panel.dropped_rows} rows dropped, {panel.dropped_days} days dropped)")
    print(f"wrote {out / 'calibration.txt'}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="dsmfg",
                                     description="Mean-field DSM equilibrium toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve the backward tables and write artifacts")
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="simulate equilibrium trajectories")
    p.add_argument("--scenario", required=True)
    p.add_argument("--auto-solve", action="store_true",
                   help="solve first if artifacts are absent")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("nash-gap", help="estimate the n-player Nash gap")
    p.add_argument("--scenario", required=True)
    p.add_argument("--sweep", default="", help="comma-separated player counts")
    p.add_argument("--deviations", action="store_true",
                   help="also probe unilateral deviations of player 1")
    p.add_argument("--auto-solve", action="store_true")
    p.set_defaults(func=cmd_nash_gap)

    p = sub.add_parser("plot", help="render columns of a trajectory CSV to SVG")
    p.add_argument("csv")
    p.add_argument("--y", action="append", required=True, help="column to plot")
    p.add_argument("--out", required=True)
    p.add_argument("--no-shade", action="store_true",
                   help="do not shade activation windows")
    p.add_argument("--title", default=None)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("calibrate", help="estimate parameters from metered data")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--timestamp-col", default="timestamp")
    p.add_argument("--meter-col", default="meter")
    p.add_argument("--value-col", default="kw")
    p.add_argument("--slot-count", type=int, default=48)
    p.add_argument("--slot-hours", type=float, default=0.0,
                   help="slot length in hours (default 24/slot_count)")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--day-filter", default="all", choices=("all", "weekday", "weekend"))
    p.add_argument("--price-data", default="")
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RefusalError as exc:
        print(f"numerical refusal: {exc}", file=sys.stderr)
        return EXIT_REFUSAL
    except MissingArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except DsmfgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())
