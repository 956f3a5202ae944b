"""Command line entry point: ``podsim run|sweep|inverter|validate <config>``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from podsim.config import ConfigError, load_config
from podsim.report import run_scenario, write_inverter_run, write_sweep
from podsim.runner import METRICS, ScenarioError, run_inverter, sweep_seeds


def _load(path):
    try:
        return load_config(path)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        raise SystemExit(2)
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        raise SystemExit(2)


def cmd_validate(args) -> int:
    cfg = _load(args.config)
    print(f"{args.config}: ok ({cfg.trajectory.n_steps} steps, seeds {cfg.seeds})")
    return 0


def cmd_run(args) -> int:
    cfg = _load(args.config)
    try:
        report = run_scenario(cfg, args.out, plots=False if args.no_plots else None)
    except ScenarioError as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return 1
    print("seed," + ",".join(METRICS))
    for row in report.rmse:
        print(",".join([str(row["seed"])] + [f"{row[m]:.4f}" for m in METRICS]))
    for seed, n in report.fault_event_counts.items():
        if n:
            print(f"seed {seed}: {n} fault event(s), latency {report.fault_latencies[seed]} s, "
                  f"brake latency {report.brake_latency_ticks[seed]} ticks, stopped at tick {report.stopped_tick[seed]}")
    if report.inverter_dominant_hz is not None:
        print(f"inverter dominant frequency: {report.inverter_dominant_hz:.2f} Hz")
    print(f"wrote {len(report.manifest)} files to {args.out or cfg.output.dir}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args.config)
    try:
        result = sweep_seeds(cfg, args.seeds, jobs=args.jobs)
    except ScenarioError as exc:
        print(f"sweep aborted: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out or cfg.output.dir)
    write_sweep(result, out)
    print("statistic," + ",".join(METRICS))
    print("mean," + ",".join(f"{result.mean[m]:.4f}" for m in METRICS))
    print("std," + ",".join(f"{result.std[m]:.4f}" for m in METRICS))
    for p, name in zip("avx", ("acceleration", "velocity", "position")):
        print(f"Kalman beats raw ({name}): {100 * result.beats_raw[p]:.0f}% of {len(result.seeds)} seeds")
    return 0


def cmd_inverter(args) -> int:
    cfg = _load(args.config)
    run = run_inverter(cfg)
    out = Path(args.out or cfg.output.dir) / "inverter"
    write_inverter_run(run, out)
    if not args.no_plots and cfg.output.plots:
        from podsim.plots import inverter_figures
        inverter_figures(run, out, cfg.inverter.f_fundamental)
    icfg = cfg.inverter_config()
    print(f"dominant frequency: {run.dominant_hz:.2f} Hz (bin {run.filtered_spectrum.bin_hz:.3f} Hz, "
          f"RC cutoff {icfg.cutoff_hz:.2f} Hz)")
    print("order,freq_hz,raw_amplitude,filtered_amplitude,raw_ratio,filtered_ratio")
    for row in run.harmonics[: args.harmonics]:
        k, f, a_raw, a_f, r_raw, r_f = row
        print(f"{k},{f:.2f},{a_raw:.4f},{a_f:.4f},{r_raw:.5f},{r_f:.5f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="podsim", description="Hyperloop pod on-board systems simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("run", help="run every seed of a scenario and write CSVs, figures and a report")
    s.add_argument("config", help="scenario file, or a bundled scenario name")
    s.add_argument("--out", help="output directory (default: [output] dir)")
    s.add_argument("--no-plots", action="store_true", help="write CSVs only")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="RMSE statistics across consecutive seeds")
    s.add_argument("config", help="scenario file, or a bundled scenario name")
    s.add_argument("--seeds", type=int, default=100, help="number of consecutive seeds (default: 100)")
    s.add_argument("--jobs", type=int, default=1, help="worker processes (default: 1)")
    s.add_argument("--out", help="output directory (default: [output] dir)")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("inverter", help="inverter waveform, spectrum and harmonic table")
    s.add_argument("config", help="scenario file, or a bundled scenario name")
    s.add_argument("--out", help="output directory (default: [output] dir)")
    s.add_argument("--harmonics", type=int, default=10, help="rows of the harmonic table to print")
    s.add_argument("--no-plots", action="store_true", help="write CSVs only")
    s.set_defaults(func=cmd_inverter)

    s = sub.add_parser("validate", help="check a scenario file")
    s.add_argument("config", help="scenario file, or a bundled scenario name")
    s.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
