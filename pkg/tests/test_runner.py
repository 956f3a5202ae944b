import csv
import json
import math

import pytest

from podsim.busnet import MsgKind, VehicleMode
from podsim.cli import main
from podsim.config import load_config
from podsim.report import run_scenario
from podsim.runner import METRICS, ScenarioError, simulate, sweep_seeds


@pytest.fixture(scope="module")
def reference():
    return load_config("paper_scenario").replace(battery={"enabled": False}, inverter={"enabled": False})


@pytest.fixture(scope="module")
def fault_run():
    return simulate(load_config("battery_fault"), 0)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_zero_noise_scenario_is_exact():
    run = simulate(load_config("zero_noise"), 0)
    for k in ("rmse_kf_a", "rmse_kf_v", "rmse_kf_x", "rmse_raw_a", "rmse_raw_v", "rmse_raw_x"):
        assert run.metrics[k] < 1e-9
    assert run.fault_events == []
    assert run.modes == [VehicleMode.NOMINAL] * 120


@pytest.mark.parametrize("seed", [0, 7, 42])
def test_reference_scenario_kalman_beats_raw(reference, seed):
    m = simulate(reference, seed).metrics
    assert m["rmse_kf_a"] < m["rmse_raw_a"]
    assert m["rmse_kf_v"] < m["rmse_raw_v"]


def test_healthy_run_logs_one_pose_per_tick(reference):
    run = simulate(reference, 1)
    poses = [(t, m) for t, m in run.bus_log.delivered if m.kind is MsgKind.POSE]
    assert len(poses) == 120 == len(run.estimates)
    assert [t for t, _ in poses] == list(range(2, 122))
    assert [m.payload for _, m in poses] == run.estimates
    polls = [m for _, m in run.bus_log.delivered if m.kind is MsgKind.MOTOR_POLL]
    assert len(polls) == 120
    assert not any(m.kind is MsgKind.FAULT for _, m in run.bus_log.delivered)


def test_fault_scenario_single_event_and_stop(fault_run):
    run = fault_run
    assert len(run.fault_events) == 1
    tick, event = run.fault_events[0]
    assert event.sample_index - 3050 < 100
    assert run.fault_latencies == [pytest.approx((event.sample_index - 3050) * 0.01)]
    assert run.brake_latency_ticks is not None and run.brake_latency_ticks <= 3
    assert run.first_tick(VehicleMode.STOPPED) is not None
    assert run.modes[-1] is VehicleMode.STOPPED
    assert run.observations[-1].truth.v == 0.0


def test_fault_message_delivered_next_tick(fault_run):
    tick, _ = fault_run.fault_events[0]
    log = fault_run.bus_log.delivered
    faults = [(t, m) for t, m in log if m.kind is MsgKind.FAULT]
    brakes = [(t, m) for t, m in log if m.kind is MsgKind.BRAKE_COMMAND]
    assert len(faults) == 1 and faults[0][1].priority == 0
    # sim tick k publishes while the bus clock reads k + 1
    assert faults[0][0] == tick + 2
    assert brakes and brakes[0][0] == faults[0][0] + 1
    assert fault_run.first_tick(VehicleMode.FAULT_RECEIVED) == tick + 1
    assert fault_run.first_tick(VehicleMode.BRAKING) == tick + 2


def test_modes_move_forward_only(fault_run):
    order = list(VehicleMode)
    idx = [order.index(m) for m in fault_run.modes]
    assert all(0 <= b - a <= 1 for a, b in zip(idx, idx[1:]))


def test_brake_latency_under_telemetry_load():
    cfg = load_config("battery_fault").replace(bus={"load_per_tick": 1000})
    run = simulate(cfg, 0)
    assert len(run.fault_events) == 1
    assert run.brake_latency_ticks <= 3
    assert run.modes[-1] is VehicleMode.STOPPED
    assert run.bus_dropped > 0


def test_run_aborts_with_tick_and_module():
    cfg = load_config("battery_fault").replace(bus={"max_extra_ticks": 5})
    with pytest.raises(ScenarioError) as info:
        simulate(cfg, 0)
    assert info.value.module == "vehicle"
    assert "tick" in str(info.value)


def test_sweep_single_seed_equals_run(reference):
    res = sweep_seeds(reference, 1)
    single = simulate(reference, reference.seeds[0]).metrics
    assert res.rows == [single]
    assert res.mean == single
    assert all(v == 0.0 for v in res.std.values())


def test_sweep_is_deterministic_and_parallel_safe(reference):
    a = sweep_seeds(reference, 6)
    b = sweep_seeds(reference, 6)
    c = sweep_seeds(reference, 6, jobs=2)
    assert a.mean == b.mean == c.mean
    assert a.rows == c.rows
    assert a.beats_raw == {"a": 1.0, "v": 1.0, "x": 1.0}


def test_sweep_rejects_zero_seeds(reference):
    with pytest.raises(ValueError):
        sweep_seeds(reference, 0)


def test_report_manifest_and_traceability(tmp_path):
    cfg = load_config("battery_fault").replace(inverter={"enabled": True})
    report = run_scenario(cfg, tmp_path, plots=False)
    for name in report.manifest:
        p = tmp_path / name
        assert p.exists() and p.stat().st_size > 0, name
    rmse_rows = read_csv(tmp_path / "rmse.csv")
    assert rmse_rows[0] == ["seed", *METRICS]
    for row, rec in zip(rmse_rows[1:], report.rmse):
        assert [float(v) for v in row[1:]] == [rec[m] for m in METRICS]
    events = read_csv(tmp_path / "seed_0" / "fault_events.csv")
    assert events[0] == ["t", "pair_id", "icc", "threshold"] and len(events) == 2
    modes = read_csv(tmp_path / "seed_0" / "vehicle_modes.csv")
    braking = next(int(t) for t, m in modes[1:] if m == "BRAKING")
    fault_tick = report.brake_latency_ticks[0]
    assert braking - fault_tick == next(k for k, _ in simulate(cfg, 0).fault_events)
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["fault_event_counts"] == {"0": 1}
    assert math.isclose(doc["inverter_dominant_hz"], 277.77, abs_tol=3.0)


def test_csv_headers(tmp_path):
    run_scenario(load_config("zero_noise"), tmp_path, plots=False)
    seed = tmp_path / "seed_0"
    assert read_csv(seed / "world.csv")[0] == [
        "t", "a_true", "v_true", "x_true", "z_imu", "z_tacho", "z_encoder", "fiducial_flag"]
    assert read_csv(seed / "estimates.csv")[0] == [
        "t", "a_est", "a_var", "v_est", "v_var", "x_est", "x_var", "K_a", "K_v", "K_x"]
    assert read_csv(seed / "metrics_summary.csv")[0] == list(METRICS)
    assert read_csv(seed / "buslog.csv")[0] == ["tick", "priority", "msg_id", "source", "kind"]
    assert read_csv(seed / "battery_trace.csv")[0] == ["t", "v_cell1", "v_cell2"]
    assert read_csv(seed / "plots" / "vel_kf.csv")[0] == ["t", "vel_kf"]
    assert len(read_csv(seed / "world.csv")) == 121


def test_outputs_byte_identical(tmp_path):
    cfg = load_config("battery_fault")
    run_scenario(cfg, tmp_path / "a", plots=False)
    run_scenario(cfg, tmp_path / "b", plots=False)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


def test_plots_rendered(tmp_path):
    cfg = load_config("battery_fault").replace(inverter={"enabled": True, "n_periods": 10})
    report = run_scenario(cfg, tmp_path, plots=True)
    pngs = [n for n in report.manifest if n.endswith(".png")]
    assert {"seed_0/plots/accel.png", "seed_0/plots/velocity.png", "seed_0/plots/position.png",
            "seed_0/plots/battery.png", "inverter/waveform.png", "inverter/spectrum.png"} <= set(pngs)
    for n in pngs:
        assert (tmp_path / n).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


# ---- cli ----

def test_cli_validate(capsys):
    assert main(["validate", "paper_scenario"]) == 0
    assert "ok" in capsys.readouterr().out


def test_cli_validate_reports_errors(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[trajectory]\npeak_accel = 1.0\nn_steps = 10\nwat = 1\n[output]\nseeds = [0]\n")
    with pytest.raises(SystemExit) as info:
        main(["validate", str(bad)])
    assert info.value.code == 2
    assert "trajectory.wat" in capsys.readouterr().err


def test_cli_run(tmp_path, capsys):
    assert main(["run", "battery_fault", "--out", str(tmp_path), "--no-plots"]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "seed," + ",".join(METRICS)
    assert "1 fault event" in out
    assert (tmp_path / "report.json").exists()


def test_cli_sweep(tmp_path, capsys):
    assert main(["sweep", "paper_scenario", "--seeds", "3", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "mean," in out and "100% of 3 seeds" in out
    assert len(read_csv(tmp_path / "sweep.csv")) == 4
    assert [r[0] for r in read_csv(tmp_path / "sweep_summary.csv")] == ["statistic", "mean", "std"]


def test_cli_inverter(tmp_path, capsys):
    assert main(["inverter", "inverter", "--out", str(tmp_path), "--no-plots", "--harmonics", "3"]) == 0
    out = capsys.readouterr().out
    assert "dominant frequency: 277.77 Hz" in out
    assert len([line for line in out.splitlines() if line[:1].isdigit()]) == 3
    assert read_csv(tmp_path / "inverter" / "spectrum_filtered.csv")[0] == ["f", "amplitude"]
    assert read_csv(tmp_path / "inverter" / "waveform_raw.csv")[0] == ["t", "v_raw"]


def test_cli_unknown_scenario(capsys):
    with pytest.raises(SystemExit):
        main(["run", "no_such_scenario"])
