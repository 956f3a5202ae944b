"""CSV/JSON emission for scenario runs.

Every CSV is comma-separated with a header row; floats are written with
``repr`` so identical runs give byte-identical files.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from podsim.busnet import VehicleMode
from podsim.config import ScenarioConfig, dump_config
from podsim.runner import METRICS, InverterRun, SeedRun, SweepResult, run_inverter, simulate

log = logging.getLogger(__name__)


def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def write_two_column(path: Path, xname: str, yname: str, xs, ys) -> Path:
    return write_csv(path, (xname, yname), zip((float(x) for x in xs), (float(y) for y in ys)))


@dataclass
class RunReport:
    scenario: str
    rmse: list[dict] = field(default_factory=list)
    fault_latencies: dict[int, list[float]] = field(default_factory=dict)
    fault_event_counts: dict[int, int] = field(default_factory=dict)
    brake_latency_ticks: dict[int, Optional[int]] = field(default_factory=dict)
    stopped_tick: dict[int, Optional[int]] = field(default_factory=dict)
    inverter_dominant_hz: Optional[float] = None
    manifest: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "scenario": self.scenario,
            "rmse": self.rmse,
            "fault_latencies_s": {str(k): v for k, v in self.fault_latencies.items()},
            "fault_event_counts": {str(k): v for k, v in self.fault_event_counts.items()},
            "brake_latency_ticks": {str(k): v for k, v in self.brake_latency_ticks.items()},
            "stopped_tick": {str(k): v for k, v in self.stopped_tick.items()},
            "inverter_dominant_hz": self.inverter_dominant_hz,
            "manifest": self.manifest,
        }, indent=2, sort_keys=True)


def write_seed_run(run: SeedRun, out: Path) -> list[Path]:
    files = []
    obs, est = run.observations, run.estimates
    files.append(write_csv(out / "world.csv",
                           ("t", "a_true", "v_true", "x_true", "z_imu", "z_tacho", "z_encoder", "fiducial_flag"),
                           ((o.truth.t, o.truth.a, o.truth.v, o.truth.x, o.imu.value, o.tachometer.value,
                             o.encoder.value, int(bool(o.fiducials))) for o in obs)))
    files.append(write_csv(out / "estimates.csv",
                           ("t", "a_est", "a_var", "v_est", "v_var", "x_est", "x_var", "K_a", "K_v", "K_x"),
                           ((e.t, e.accel.mean, e.accel.var, e.vel.mean, e.vel.var, e.pos.mean, e.pos.var,
                             *e.kalman_gains) for e in est)))
    files.append(write_csv(out / "metrics_summary.csv", METRICS, [[run.metrics[m] for m in METRICS]]))
    files.append(write_csv(out / "buslog.csv", ("tick", "priority", "msg_id", "source", "kind"),
                           run.bus_log.rows()))
    files.append(write_csv(out / "vehicle_modes.csv", ("tick", "mode"),
                           ((k, m.value) for k, m in enumerate(run.modes))))
    if run.battery_t is not None:
        files.append(write_csv(out / "battery_trace.csv", ("t", "v_cell1", "v_cell2"),
                               zip(run.battery_t.tolist(), run.battery_x1.tolist(), run.battery_x2.tolist())))
        files.append(write_csv(out / "fault_events.csv", ("t", "pair_id", "icc", "threshold"),
                               ((e.t, e.cell_pair, e.icc_value, e.threshold_used) for _, e in run.fault_events)))

    t = [o.truth.t for o in obs]
    series = {
        "accel_true": [o.truth.a for o in obs],
        "accel_raw": [o.imu.value for o in obs],
        "accel_kf": [e.accel.mean for e in est],
        "vel_true": [o.truth.v for o in obs],
        "vel_raw": [o.tachometer.value / run.tach_gain for o in obs],
        "vel_kf": [e.vel.mean for e in est],
        "pos_true": [o.truth.x for o in obs],
        "pos_raw": [o.encoder.value / run.enc_gain for o in obs],
        "pos_kf": [e.pos.mean for e in est],
    }
    for name, ys in series.items():
        files.append(write_two_column(out / "plots" / f"{name}.csv", "t", name, t, ys))
    return files


def write_inverter_run(run: InverterRun, out: Path) -> list[Path]:
    files = [
        write_two_column(out / "waveform_raw.csv", "t", "v_raw", run.raw.t, run.raw.samples),
        write_two_column(out / "waveform_filtered.csv", "t", "v_filtered", run.filtered.t, run.filtered.samples),
        write_two_column(out / "spectrum_raw.csv", "f", "amplitude", run.raw_spectrum.freqs,
                         run.raw_spectrum.magnitudes),
        write_two_column(out / "spectrum_filtered.csv", "f", "amplitude", run.filtered_spectrum.freqs,
                         run.filtered_spectrum.magnitudes),
        write_csv(out / "harmonics.csv",
                  ("order", "freq_hz", "raw_amplitude", "filtered_amplitude", "raw_ratio", "filtered_ratio"),
                  run.harmonics),
    ]
    return files


def run_scenario(cfg: ScenarioConfig, out_dir: Optional[Path] = None, plots: Optional[bool] = None) -> RunReport:
    """Simulate every configured seed and write all outputs under ``out_dir``."""
    out = Path(out_dir if out_dir is not None else cfg.output.dir)
    plots = cfg.output.plots if plots is None else plots
    report = RunReport(cfg.output.name)
    files: list[Path] = []
    out.mkdir(parents=True, exist_ok=True)
    (out / "scenario.toml").write_text(dump_config(cfg))
    files.append(out / "scenario.toml")
    for seed in cfg.seeds:
        run = simulate(cfg, seed)
        seed_dir = out / f"seed_{seed}"
        files += write_seed_run(run, seed_dir)
        report.rmse.append({"seed": seed, **run.metrics})
        report.fault_latencies[seed] = run.fault_latencies
        report.fault_event_counts[seed] = len(run.fault_events)
        report.brake_latency_ticks[seed] = run.brake_latency_ticks
        report.stopped_tick[seed] = run.first_tick(VehicleMode.STOPPED)
        if plots:
            from podsim import plots as plotting
            files += plotting.pose_figures(run, seed_dir / "plots")
            if run.battery_t is not None:
                files.append(plotting.battery_figure(run, seed_dir / "plots" / "battery.png"))
    files.append(write_csv(out / "rmse.csv", ("seed", *METRICS),
                           ([r["seed"], *(r[m] for m in METRICS)] for r in report.rmse)))
    if cfg.inverter.enabled:
        inv = run_inverter(cfg)
        report.inverter_dominant_hz = inv.dominant_hz
        files += write_inverter_run(inv, out / "inverter")
        if plots:
            from podsim import plots as plotting
            files += plotting.inverter_figures(inv, out / "inverter", cfg.inverter_config().f_fundamental)
    report.manifest = [str(p.relative_to(out)) for p in files]
    (out / "report.json").write_text(report.to_json())
    report.manifest.append("report.json")
    return report


def write_sweep(result: SweepResult, out: Path) -> list[Path]:
    rows = ([s, *(r[m] for m in METRICS)] for s, r in zip(result.seeds, result.rows))
    return [
        write_csv(out / "sweep.csv", ("seed", *METRICS), rows),
        write_csv(out / "sweep_summary.csv", ("statistic", *METRICS),
                  [["mean", *(result.mean[m] for m in METRICS)], ["std", *(result.std[m] for m in METRICS)]]),
    ]
