"""Scenario files: a sectioned TOML document, strictly validated.

Sections and keys (all optional unless marked required):

[trajectory]    peak_accel (required), n_steps (required), dt, accel_steps,
                decel_steps, decel_ratios, process_std, v0, x0
[sensors.imu]          noise_std, seed
[sensors.tachometer]   noise_std, wheel_radius, seed
[sensors.encoder]      noise_std, counts_per_rev, wheel_radius, quantize, seed
[sensors.fiducial]     enabled, spacing
[sensors.orientation]  noise_std, true_value, window, seed
[filter]        accel_process_std, accel_meas_std, vel_process_std,
                vel_meas_std, pos_process_std, pos_meas_std, marker_var
[battery]       enabled, sample_rate, window, base_threshold, base_rate,
                rpm_bands, velocity_bands, accel_bands, voltage, load_ripple,
                load_hz, common_noise_std, diff_noise_std, pair_id, seed, faults
[bus]           bandwidth, capacity, brake_decel, stop_tolerance,
                load_per_tick, max_extra_ticks, priorities
[inverter]      enabled, v_dc, f_fundamental, filter_r, filter_c, fs,
                n_periods, duration, modulation, carrier_hz,
                modulation_index, highpass_hz
[output]        seeds (required), dir, plots, name

Measurement noise in [filter] is in each sensor's own units (rad/s for the
tachometer, counts for the encoder). Bands are lists of
``[lower, threshold, rate]``; faults are tables with ``kind``, ``at_index``,
``magnitude`` and optionally ``cell``.
"""

from __future__ import annotations

import dataclasses
import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Union

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from podsim.battery import AdaptivePolicy, Band, FaultKind, FaultSpec
from podsim.busnet import MsgKind
from podsim.estimation import FilterConfig, NoiseParams
from podsim.inverter import InverterConfig, Modulation
from podsim.world import SensorSpec, SensorSuite, TrajectoryProfile, balanced_profile


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


REQUIRED = object()


def _req():
    return field(default=REQUIRED, metadata={"required": True})


@dataclass
class TrajectorySection:
    peak_accel: float = _req()
    n_steps: int = _req()
    dt: float = 1.0
    accel_steps: Optional[int] = None
    decel_steps: Optional[list] = None
    decel_ratios: list = field(default_factory=lambda: [1.0, 0.5])
    process_std: float = 0.0
    v0: float = 0.0
    x0: float = 0.0


@dataclass
class ImuSection:
    noise_std: float = 0.0
    seed: int = 1


@dataclass
class TachometerSection:
    noise_std: float = 0.0
    wheel_radius: float = 0.5
    seed: int = 2


@dataclass
class EncoderSection:
    noise_std: float = 0.0
    counts_per_rev: int = 1024
    wheel_radius: float = 0.5
    quantize: bool = False
    seed: int = 3


@dataclass
class FiducialSection:
    enabled: bool = True
    spacing: float = 30.48


@dataclass
class OrientationSection:
    noise_std: float = 0.0
    true_value: float = 0.0
    window: int = 10
    seed: int = 4


@dataclass
class FilterSection:
    accel_process_std: float = 5.0
    accel_meas_std: float = 10.0
    vel_process_std: float = 35.0
    vel_meas_std: float = 10.0
    pos_process_std: float = 10.0
    pos_meas_std: float = 3000.0
    marker_var: float = 0.01


@dataclass
class BatterySection:
    enabled: bool = True
    sample_rate: float = 100.0
    window: int = 100
    base_threshold: float = 0.9
    base_rate: float = 10.0
    rpm_bands: list = field(default_factory=lambda: [[20000.0, 0.92, 20.0], [60000.0, 0.95, 100.0]])
    velocity_bands: list = field(default_factory=lambda: [[1000.0, 0.92, 20.0], [3000.0, 0.95, 100.0]])
    accel_bands: list = field(default_factory=lambda: [[50.0, 0.92, 20.0], [150.0, 0.95, 100.0]])
    voltage: float = 3.3
    load_ripple: float = 0.02
    load_hz: float = 0.5
    common_noise_std: float = 0.005
    diff_noise_std: float = 0.0005
    pair_id: str = "hv_cells_01_02"
    seed: int = 5
    faults: list = field(default_factory=list)


@dataclass
class BusSection:
    bandwidth: int = 8
    capacity: int = 1024
    brake_decel: float = -20.0
    stop_tolerance: float = 0.5
    load_per_tick: int = 0
    max_extra_ticks: int = 2000
    priorities: dict = field(default_factory=lambda: {"fault": 0, "brake_command": 0, "motor_poll": 1,
                                                       "pose": 3, "telemetry": 5})


@dataclass
class InverterSection:
    enabled: bool = False
    v_dc: float = 350.0
    f_fundamental: float = 277.77
    filter_r: float = 1000.0
    filter_c: float = 40e-9
    fs: float = 100_000.0
    n_periods: int = 100
    duration: Optional[float] = None
    modulation: str = "square"
    carrier_hz: float = 5000.0
    modulation_index: float = 0.8
    highpass_hz: Optional[float] = None


@dataclass
class OutputSection:
    seeds: list = _req()
    dir: str = "out"
    plots: bool = True
    name: str = "scenario"


SECTIONS = {
    "trajectory": TrajectorySection,
    "sensors.imu": ImuSection,
    "sensors.tachometer": TachometerSection,
    "sensors.encoder": EncoderSection,
    "sensors.fiducial": FiducialSection,
    "sensors.orientation": OrientationSection,
    "filter": FilterSection,
    "battery": BatterySection,
    "bus": BusSection,
    "inverter": InverterSection,
    "output": OutputSection,
}

# keys that must be >= 0 / > 0, by dotted name
NON_NEGATIVE = {
    "trajectory.process_std", "sensors.imu.noise_std", "sensors.tachometer.noise_std",
    "sensors.encoder.noise_std", "sensors.orientation.noise_std", "filter.accel_process_std",
    "filter.accel_meas_std", "filter.vel_process_std", "filter.vel_meas_std",
    "filter.pos_process_std", "filter.pos_meas_std", "filter.marker_var", "battery.load_ripple",
    "battery.common_noise_std", "battery.diff_noise_std", "bus.stop_tolerance", "bus.load_per_tick",
    "bus.max_extra_ticks", "inverter.v_dc", "battery.load_hz",
}
POSITIVE = {
    "trajectory.dt", "sensors.tachometer.wheel_radius", "sensors.encoder.wheel_radius",
    "sensors.encoder.counts_per_rev", "sensors.fiducial.spacing", "sensors.orientation.window",
    "battery.sample_rate", "battery.base_rate", "bus.bandwidth", "bus.capacity",
    "inverter.f_fundamental", "inverter.filter_r", "inverter.filter_c", "inverter.fs",
    "inverter.n_periods", "battery.voltage",
}


@dataclass
class ScenarioConfig:
    trajectory: TrajectorySection
    imu: ImuSection = field(default_factory=ImuSection)
    tachometer: TachometerSection = field(default_factory=TachometerSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    fiducial: FiducialSection = field(default_factory=FiducialSection)
    orientation: OrientationSection = field(default_factory=OrientationSection)
    filter: FilterSection = field(default_factory=FilterSection)
    battery: BatterySection = field(default_factory=BatterySection)
    bus: BusSection = field(default_factory=BusSection)
    inverter: InverterSection = field(default_factory=InverterSection)
    output: OutputSection = field(default_factory=lambda: OutputSection(seeds=[0]))

    _attr = {
        "sensors.imu": "imu", "sensors.tachometer": "tachometer", "sensors.encoder": "encoder",
        "sensors.fiducial": "fiducial", "sensors.orientation": "orientation",
    }

    def section(self, name: str):
        return getattr(self, self._attr.get(name, name))

    @property
    def seeds(self) -> list[int]:
        return list(self.output.seeds)

    # domain objects

    def profile(self) -> TrajectoryProfile:
        t = self.trajectory
        if t.decel_steps is None:
            return balanced_profile(t.peak_accel, t.n_steps, t.dt, t.accel_steps, tuple(t.decel_ratios))
        steps = tuple((int(s), float(level)) for s, level in t.decel_steps)
        return TrajectoryProfile(t.peak_accel, t.n_steps, t.dt, steps, t.accel_steps)

    def sensor_suite(self) -> SensorSuite:
        return SensorSuite(
            imu=SensorSpec.imu(self.imu.noise_std, self.imu.seed),
            tachometer=SensorSpec.tachometer(self.tachometer.wheel_radius, self.tachometer.noise_std,
                                             self.tachometer.seed),
            encoder=SensorSpec.encoder(self.encoder.counts_per_rev, self.encoder.wheel_radius,
                                       self.encoder.noise_std, self.encoder.seed, self.encoder.quantize),
            orientation=SensorSpec.orientation(self.orientation.noise_std, self.orientation.seed),
            strip_spacing=self.fiducial.spacing if self.fiducial.enabled else None,
            true_orientation=self.orientation.true_value,
        )

    def filter_config(self) -> FilterConfig:
        f = self.filter
        return FilterConfig(
            accel=NoiseParams.from_std(f.accel_process_std, f.accel_meas_std),
            vel=NoiseParams.from_std(f.vel_process_std, f.vel_meas_std),
            pos=NoiseParams.from_std(f.pos_process_std, f.pos_meas_std),
            marker_var=f.marker_var,
            use_fiducials=self.fiducial.enabled,
            orientation_window=self.orientation.window,
        )

    def policy(self) -> AdaptivePolicy:
        b = self.battery
        return AdaptivePolicy(
            b.base_threshold, b.base_rate,
            tuple(Band(*map(float, r)) for r in b.rpm_bands),
            tuple(Band(*map(float, r)) for r in b.velocity_bands),
            tuple(Band(*map(float, r)) for r in b.accel_bands),
        )

    def faults(self) -> list[FaultSpec]:
        return [FaultSpec(FaultKind(f["kind"]), int(f["at_index"]), float(f["magnitude"]), int(f.get("cell", 2)))
                for f in self.battery.faults]

    def inverter_config(self) -> InverterConfig:
        i = self.inverter
        return InverterConfig(i.v_dc, i.f_fundamental, i.filter_r, i.filter_c, i.fs, i.duration, i.n_periods,
                              Modulation(i.modulation), i.carrier_hz, i.modulation_index, i.highpass_hz)

    def priorities(self) -> dict[MsgKind, int]:
        return {MsgKind(k): int(v) for k, v in self.bus.priorities.items()}

    def replace(self, **sections) -> ScenarioConfig:
        """Copy with some section fields overridden, e.g. ``replace(imu={"noise_std": 0})``."""
        out = dataclasses.replace(self)
        for name, changes in sections.items():
            setattr(out, name, dataclasses.replace(getattr(self, name), **changes))
        return out


def _type_ok(value, annotation: str) -> bool:
    if "Optional" in annotation and value is None:
        return True
    if "bool" in annotation:
        return isinstance(value, bool)
    if "int" in annotation:
        return isinstance(value, int) and not isinstance(value, bool)
    if "float" in annotation:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if "str" in annotation:
        return isinstance(value, str)
    if "list" in annotation:
        return isinstance(value, list)
    if "dict" in annotation:
        return isinstance(value, dict)
    return True


def _flatten(doc: dict) -> dict[str, dict]:
    """Map top-level tables to dotted section names (``sensors.imu`` etc.)."""
    out: dict[str, Any] = {}
    for key, value in doc.items():
        if key == "sensors" and isinstance(value, dict):
            for sub, body in value.items():
                out[f"sensors.{sub}"] = body
        else:
            out[key] = value
    return out


def from_dict(doc: dict) -> ScenarioConfig:
    errors: list[str] = []
    built: dict[str, Any] = {}
    sections = _flatten(doc)
    for name in sections:
        if name not in SECTIONS:
            errors.append(f"unknown section [{name}]")
    for name, cls in SECTIONS.items():
        body = sections.get(name, {})
        if not isinstance(body, dict):
            errors.append(f"[{name}] must be a table")
            continue
        known = {f.name: f for f in dataclasses.fields(cls)}
        for key in body:
            if key not in known:
                errors.append(f"unknown key {name}.{key}")
        kwargs = {}
        for key, f in known.items():
            dotted = f"{name}.{key}"
            if key not in body:
                if f.metadata.get("required"):
                    errors.append(f"missing required key {dotted}")
                continue
            value = body[key]
            if not _type_ok(value, str(f.type)):
                errors.append(f"{dotted}: expected {f.type}, got {type(value).__name__}")
                continue
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                if f"{dotted}" in NON_NEGATIVE and not value >= 0:
                    errors.append(f"{dotted} must be >= 0, got {value}")
                if f"{dotted}" in POSITIVE and not value > 0:
                    errors.append(f"{dotted} must be > 0, got {value}")
                if not math.isfinite(value):
                    errors.append(f"{dotted} must be finite")
            if "float" in str(f.type) and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            kwargs[key] = value
        # missing required values stay as the sentinel until errors are raised
        built[name] = cls(**kwargs) if not any(
            k for k, f in known.items() if f.metadata.get("required") and k not in kwargs) else None
    if errors:
        raise ConfigError(errors)
    cfg = ScenarioConfig(**{ScenarioConfig._attr.get(n, n): s for n, s in built.items()})
    errors.extend(_semantic_errors(cfg))
    if errors:
        raise ConfigError(errors)
    return cfg


def _semantic_errors(cfg: ScenarioConfig) -> list[str]:
    errors = []

    def check(key, fn):
        try:
            fn()
        except (ValueError, TypeError, KeyError, IndexError) as exc:
            errors.append(f"{key}: {exc}")

    seeds = cfg.output.seeds
    if not seeds:
        errors.append("output.seeds must list at least one seed")
    elif not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds):
        errors.append("output.seeds must be non-negative integers")
    check("trajectory", cfg.profile)
    check("sensors", cfg.sensor_suite)
    f = cfg.filter
    for stage in ("accel", "vel", "pos"):
        if getattr(f, f"{stage}_process_std") == 0 and getattr(f, f"{stage}_meas_std") == 0:
            errors.append(f"filter.{stage}_process_std and filter.{stage}_meas_std cannot both be 0")
    check("battery.bands", cfg.policy)
    check("battery.faults", cfg.faults)
    if cfg.battery.window < 2:
        errors.append("battery.window must be >= 2")
    check("bus.priorities", cfg.priorities)
    for kind, p in cfg.bus.priorities.items():
        if isinstance(p, bool) or not isinstance(p, int) or p < 0:
            errors.append(f"bus.priorities.{kind} must be a non-negative integer")
    if cfg.bus.brake_decel >= 0:
        errors.append("bus.brake_decel must be < 0")
    check("inverter", cfg.inverter_config)
    return errors


def parse_config(text: str) -> ScenarioConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"syntax error: {exc}"]) from None
    return from_dict(doc)


def to_dict(cfg: ScenarioConfig) -> dict:
    doc: dict[str, Any] = {}
    for name in SECTIONS:
        body = {k: v for k, v in dataclasses.asdict(cfg.section(name)).items() if v is not None}
        if name.startswith("sensors."):
            doc.setdefault("sensors", {})[name.split(".", 1)[1]] = body
        else:
            doc[name] = body
    return doc


def dump_config(cfg: ScenarioConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


BUILTIN = ("paper_scenario", "zero_noise", "battery_fault", "inverter")


def builtin_text(name: str) -> str:
    return resources.files("podsim.scenarios").joinpath(f"{name}.toml").read_text()


def load_config(path_or_name: Union[str, Path]) -> ScenarioConfig:
    """Read a scenario file, or one of the bundled scenarios by name."""
    p = Path(path_or_name)
    if p.exists():
        return parse_config(p.read_text())
    if str(path_or_name) in BUILTIN:
        return parse_config(builtin_text(str(path_or_name)))
    raise FileNotFoundError(f"no scenario file or bundled scenario named {path_or_name!r}")
