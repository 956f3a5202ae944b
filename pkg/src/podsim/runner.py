"""Closed-loop scenario execution: world, navigation, power node, vehicle controller and bus."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from podsim.battery import BatteryBank, FaultDetector, FaultEvent
from podsim.busnet import (
    Bus, BusLog, MsgKind, NodeId, NodeState, VehicleMode, motor_reading, navigation_node_step,
    power_node_step, relay_node_step, vehicle_controller_step,
)
from podsim.config import ScenarioConfig
from podsim.estimation import CascadeFilter, ObservationModel, PoseEstimate, pipeline_metrics
from podsim.inverter import (
    Spectrum, Waveform, dominant_frequency, fft_spectrum, harmonic_table, inverter_output,
)
from podsim.world import TickObservation, World, generate_accel_profile

log = logging.getLogger(__name__)

METRICS = ("rmse_raw_a", "rmse_kf_a", "rmse_raw_v", "rmse_kf_v", "rmse_raw_x", "rmse_kf_x")


class ScenarioError(RuntimeError):
    def __init__(self, tick: int, module: str, cause: Exception):
        self.tick, self.module, self.cause = tick, module, cause
        super().__init__(f"tick {tick}, {module}: {cause}")


@dataclass
class SeedRun:
    seed: int
    plan: list[float]
    commanded: list[float]
    observations: list[TickObservation]
    estimates: list[PoseEstimate]
    metrics: dict[str, float]
    bus_log: BusLog
    bus_dropped: int
    fault_events: list[tuple[int, FaultEvent]] = field(default_factory=list)
    modes: list[VehicleMode] = field(default_factory=list)
    battery_t: Optional[np.ndarray] = None
    battery_x1: Optional[np.ndarray] = None
    battery_x2: Optional[np.ndarray] = None
    fault_indices: list[int] = field(default_factory=list)
    dt_sample: float = 0.0
    tach_gain: float = 1.0
    enc_gain: float = 1.0

    def first_tick(self, mode: VehicleMode) -> Optional[int]:
        return next((k for k, m in enumerate(self.modes) if m is mode), None)

    @property
    def fault_latencies(self) -> list[float]:
        """Seconds from each injected fault to the first event detected at or after it."""
        out = []
        for idx in self.fault_indices:
            hits = [e.sample_index for _, e in self.fault_events if e.sample_index >= idx]
            out.append((min(hits) - idx) * self.dt_sample if hits else math.inf)
        return out

    @property
    def brake_latency_ticks(self) -> Optional[int]:
        """Ticks from the first fault event to the controller entering BRAKING."""
        if not self.fault_events:
            return None
        braking = self.first_tick(VehicleMode.BRAKING)
        return None if braking is None else braking - self.fault_events[0][0]


def simulate(cfg: ScenarioConfig, seed: int) -> SeedRun:
    dt = cfg.trajectory.dt
    n_steps = cfg.trajectory.n_steps
    plan = generate_accel_profile(cfg.profile()).tolist()
    suite = cfg.sensor_suite()
    world = World(suite, dt, seed, cfg.trajectory.process_std, cfg.trajectory.v0, cfg.trajectory.x0)
    kf = CascadeFilter(cfg.filter_config(), ObservationModel(suite.tachometer.gain),
                       ObservationModel(suite.encoder.gain), dt)
    bus = Bus(cfg.bus.bandwidth, cfg.bus.capacity, cfg.priorities())
    vehicle = NodeState(NodeId.VEHICLE)
    max_ticks = n_steps + cfg.bus.max_extra_ticks

    bank = detector = None
    spt = 0
    if cfg.battery.enabled:
        b = cfg.battery
        spt = max(1, int(round(b.sample_rate * dt)))
        dt_sample = 1.0 / b.sample_rate
        bank = BatteryBank.build(
            max_ticks * spt, dt_sample, np.random.default_rng([seed, b.seed]), cfg.faults(),
            voltage=b.voltage, load_ripple=b.load_ripple, load_hz=b.load_hz,
            common_std=b.common_noise_std, diff_std=b.diff_noise_std)
        detector = FaultDetector(cfg.policy(), dt_sample, b.window, b.pair_id)

    commanded: list[float] = []
    observations: list[TickObservation] = []
    estimates: list[PoseEstimate] = []
    modes: list[VehicleMode] = []
    fault_events: list[tuple[int, FaultEvent]] = []
    braking = False
    k = 0
    while k < n_steps or vehicle.mode in (VehicleMode.FAULT_RECEIVED, VehicleMode.BRAKING):
        if k >= max_ticks:
            raise ScenarioError(k, "vehicle", RuntimeError("pod did not stop within bus.max_extra_ticks"))
        inbox = bus.deliver()
        if any(m.kind is MsgKind.BRAKE_COMMAND for m in inbox):
            braking = True
        if vehicle.mode is VehicleMode.STOPPED:
            a_cmd = 0.0
        elif braking:
            a_cmd = cfg.bus.brake_decel
        else:
            a_cmd = plan[k] if k < n_steps else 0.0
        commanded.append(a_cmd)
        try:
            obs = world.step(a_cmd, stop_at_rest=braking)
        except ValueError as exc:
            raise ScenarioError(k, "sim-world", exc) from exc
        try:
            est = kf.step(k, commanded, obs)
        except ValueError as exc:
            raise ScenarioError(k, "estimation", exc) from exc
        observations.append(obs)
        estimates.append(est)

        outbox = navigation_node_step(est, bus)
        if detector is not None:
            try:
                events, msgs = power_node_step(detector, bank.take(spt), inbox, bus)
            except ValueError as exc:
                raise ScenarioError(k, "battery", exc) from exc
            fault_events.extend((k, e) for e in events)
            outbox += msgs
        motor = motor_reading(obs.truth.v, cfg.tachometer.wheel_radius, obs.truth.x)
        vehicle, vc_out = vehicle_controller_step(vehicle, inbox, bus, motor, cfg.bus.stop_tolerance)
        modes.append(vehicle.mode)
        outbox += vc_out
        outbox += relay_node_step(NodeId.FRONT_MODULE, bus)
        outbox += relay_node_step(NodeId.REAR_MODULE, bus)
        for m in outbox:
            bus.publish(m)
        for _ in range(cfg.bus.load_per_tick):
            bus.send(MsgKind.TELEMETRY, NodeId.LOAD.value)
        k += 1
    # closing bus tick: the last tick's publishes reach the log, nothing consumes them
    bus.deliver()

    run = SeedRun(seed, plan, commanded, observations, estimates,
                  pipeline_metrics(estimates, observations, suite.tachometer.gain, suite.encoder.gain),
                  bus.log, len(bus.dropped), fault_events, modes,
                  tach_gain=suite.tachometer.gain, enc_gain=suite.encoder.gain)
    if bank is not None:
        used = bank.cursor
        run.battery_t = bank.trace.times[:used]
        run.battery_x1 = bank.trace.x1[:used]
        run.battery_x2 = bank.trace.x2[:used]
        run.fault_indices = [f.at_index for f in bank.faults if f.at_index < used]
        run.dt_sample = bank.trace.dt_sample
    return run


@dataclass
class InverterRun:
    raw: Waveform
    filtered: Waveform
    raw_spectrum: Spectrum
    filtered_spectrum: Spectrum
    dominant_hz: float
    harmonics: list[tuple]


def run_inverter(cfg: ScenarioConfig) -> InverterRun:
    icfg = cfg.inverter_config()
    raw, filtered = inverter_output(icfg)
    s_raw, s_f = fft_spectrum(raw), fft_spectrum(filtered)
    return InverterRun(raw, filtered, s_raw, s_f, dominant_frequency(s_f, exclude_dc=True),
                       harmonic_table(s_raw, s_f, icfg.f_fundamental))


def _metrics_only(args) -> dict[str, float]:
    cfg, seed = args
    return simulate(cfg, seed).metrics


@dataclass
class SweepResult:
    seeds: list[int]
    rows: list[dict[str, float]]
    mean: dict[str, float]
    std: dict[str, float]
    beats_raw: dict[str, float]


def sweep_seeds(cfg: ScenarioConfig, n_seeds: int, jobs: int = 1) -> SweepResult:
    """Metrics over ``n_seeds`` consecutive seeds starting at the scenario's first seed."""
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    start = cfg.seeds[0]
    seeds = list(range(start, start + n_seeds))
    work = [(cfg, s) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            rows = list(pool.map(_metrics_only, work))
    else:
        rows = [_metrics_only(w) for w in work]
    table = np.array([[r[m] for m in METRICS] for r in rows])
    mean = dict(zip(METRICS, table.mean(axis=0).tolist()))
    std = dict(zip(METRICS, table.std(axis=0).tolist()))
    beats = {p: float(np.mean([r[f"rmse_kf_{p}"] < r[f"rmse_raw_{p}"] for r in rows])) for p in "avx"}
    return SweepResult(seeds, rows, mean, std, beats)
