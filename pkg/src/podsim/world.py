"""Ground-truth pod trajectory and simulated on-board sensors.

Motion is one-dimensional along the tube axis. States are integrated with
the same discrete kinematics the estimator uses for prediction, so a
noiseless world is reproduced exactly by the filter.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

DEFAULT_STRIP_SPACING = 30.48  # m, 100 ft


class SensorKind(str, enum.Enum):
    IMU_ACCEL = "imu_accel"
    TACHOMETER = "tachometer"
    ENCODER = "encoder"
    FIDUCIAL = "fiducial"
    ORIENTATION = "orientation"


@dataclass(frozen=True)
class GroundTruthState:
    t: float
    a: float
    v: float
    x: float


@dataclass(frozen=True)
class TrajectoryProfile:
    """Planned acceleration curve.

    The first ``accel_steps`` ticks follow a decaying base-10 log curve from
    ``peak_accel`` down to zero; ``decel_steps`` are ``(start_index, level)``
    pairs defining constant braking segments that run until the next start
    (or the end of the profile).
    """

    peak_accel: float = 260.0
    n_steps: int = 120
    dt: float = 1.0
    decel_steps: tuple[tuple[int, float], ...] = ()
    accel_steps: Optional[int] = None

    def __post_init__(self):
        if self.n_steps < 2:
            raise ValueError(f"n_steps must be >= 2, got {self.n_steps}")
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if not math.isfinite(self.peak_accel):
            raise ValueError("peak_accel must be finite")
        k = self.ramp_length
        if not 1 <= k <= self.n_steps:
            raise ValueError(f"accel_steps must lie in [1, n_steps], got {k}")
        starts = [s for s, _ in self.decel_steps]
        if starts != sorted(starts) or len(set(starts)) != len(starts):
            raise ValueError("decel_steps start indices must be strictly increasing")
        if starts and (starts[0] < k or starts[-1] >= self.n_steps):
            raise ValueError("decel_steps must start after the log segment and inside the profile")

    @property
    def ramp_length(self) -> int:
        if self.accel_steps is not None:
            return self.accel_steps
        if self.decel_steps:
            return self.decel_steps[0][0]
        return self.n_steps


def log_ramp(peak: float, length: int) -> np.ndarray:
    k = np.arange(length, dtype=float)
    return peak * (1.0 - np.log10(1.0 + 9.0 * k / length))


def balanced_profile(peak_accel=260.0, n_steps=120, dt=1.0, accel_steps=None, ratios=(1.0, 0.5)):
    """Profile whose braking steps bring the pod back to rest at the last tick.

    The deceleration phase is split into ``len(ratios)`` equal-length steps
    with levels proportional to ``ratios``.
    """
    k_ramp = n_steps // 2 if accel_steps is None else accel_steps
    n_dec = n_steps - k_ramp
    if n_dec < len(ratios):
        raise ValueError("not enough ticks left for the deceleration steps")
    bounds = [k_ramp + (n_dec * i) // len(ratios) for i in range(len(ratios) + 1)]
    ramp_sum = float(np.sum(log_ramp(peak_accel, k_ramp)))
    weight = sum(r * (bounds[i + 1] - bounds[i]) for i, r in enumerate(ratios))
    unit = -ramp_sum / weight if weight else 0.0
    steps = tuple((bounds[i], unit * r) for i, r in enumerate(ratios))
    return TrajectoryProfile(peak_accel, n_steps, dt, steps, k_ramp)


def generate_accel_profile(profile: TrajectoryProfile) -> np.ndarray:
    k_ramp = profile.ramp_length
    series = np.zeros(profile.n_steps)
    series[:k_ramp] = log_ramp(profile.peak_accel, k_ramp)
    for i, (start, level) in enumerate(profile.decel_steps):
        end = profile.decel_steps[i + 1][0] if i + 1 < len(profile.decel_steps) else profile.n_steps
        series[start:end] = level
    return series


def kinematic_step(prev_v: float, prev_x: float, a: float, dt: float) -> tuple[float, float]:
    """One forward step; the estimator's predictions use the identical expressions."""
    v = prev_v + dt * a
    x = prev_x + dt * prev_v + 0.5 * dt**2 * a
    return v, x


def integrate_kinematics(accel: Sequence[float], dt: float, v0: float = 0.0, x0: float = 0.0) -> list[GroundTruthState]:
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    accel = np.asarray(accel, dtype=float)
    if not np.all(np.isfinite(accel)):
        raise ValueError("acceleration series contains non-finite values")
    states = []
    v, x = v0, x0
    for k, a in enumerate(accel.tolist()):
        v, x = kinematic_step(v, x, a, dt)
        states.append(GroundTruthState((k + 1) * dt, a, v, x))
    return states


@dataclass(frozen=True)
class SensorSpec:
    """Noise model and observation gain of one sensor.

    ``gain`` maps the observed true quantity to sensor units: 1 for the IMU,
    1/R for a tachometer on a wheel of radius R, N/(2 pi R) for an encoder
    with N counts per revolution. ``seed`` selects this sensor's RNG stream
    within a run.
    """

    kind: SensorKind
    gain: float = 1.0
    noise_std: float = 0.0
    seed: int = 0
    quantize: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", SensorKind(self.kind))
        if not (self.noise_std >= 0 and math.isfinite(self.noise_std)):
            raise ValueError(f"{self.kind.value}: noise_std must be finite and >= 0")
        if self.kind in (SensorKind.IMU_ACCEL, SensorKind.TACHOMETER, SensorKind.ENCODER):
            if self.gain == 0 or not math.isfinite(self.gain):
                raise ValueError(f"{self.kind.value}: gain must be finite and non-zero")

    @classmethod
    def imu(cls, noise_std=0.0, seed=1):
        return cls(SensorKind.IMU_ACCEL, 1.0, noise_std, seed)

    @classmethod
    def tachometer(cls, wheel_radius, noise_std=0.0, seed=2):
        if not wheel_radius > 0:
            raise ValueError(f"wheel_radius must be > 0, got {wheel_radius}")
        return cls(SensorKind.TACHOMETER, 1.0 / wheel_radius, noise_std, seed)

    @classmethod
    def encoder(cls, counts_per_rev, wheel_radius, noise_std=0.0, seed=3, quantize=False):
        if not counts_per_rev > 0:
            raise ValueError(f"counts_per_rev must be > 0, got {counts_per_rev}")
        if not wheel_radius > 0:
            raise ValueError(f"wheel_radius must be > 0, got {wheel_radius}")
        return cls(SensorKind.ENCODER, counts_per_rev / (2 * math.pi * wheel_radius), noise_std, seed, quantize)

    @classmethod
    def orientation(cls, noise_std=0.0, seed=4):
        return cls(SensorKind.ORIENTATION, 1.0, noise_std, seed)


@dataclass(frozen=True)
class SensorReading:
    t: float
    value: float
    kind: SensorKind


@dataclass(frozen=True)
class FiducialEvent:
    """A strip crossing. ``t`` is the crossing instant, which may fall between ticks."""

    t: float
    marker_position: float
    marker_index: int


def _noise(spec: SensorSpec, rng: np.random.Generator) -> float:
    if spec.noise_std == 0:
        return 0.0
    return float(rng.normal(0.0, spec.noise_std))


def _check_kind(spec: SensorSpec, kind: SensorKind):
    if spec.kind is not kind:
        raise ValueError(f"expected a {kind.value} sensor, got {spec.kind.value}")


def imu_sample(truth: GroundTruthState, spec: SensorSpec, rng: np.random.Generator) -> SensorReading:
    _check_kind(spec, SensorKind.IMU_ACCEL)
    return SensorReading(truth.t, spec.gain * truth.a + _noise(spec, rng), spec.kind)


def tachometer_sample(truth: GroundTruthState, spec: SensorSpec, rng: np.random.Generator) -> SensorReading:
    _check_kind(spec, SensorKind.TACHOMETER)
    return SensorReading(truth.t, spec.gain * truth.v + _noise(spec, rng), spec.kind)


def encoder_sample(truth: GroundTruthState, spec: SensorSpec, rng: np.random.Generator) -> SensorReading:
    _check_kind(spec, SensorKind.ENCODER)
    value = spec.gain * truth.x + _noise(spec, rng)
    if spec.quantize:
        value = float(math.floor(value))
    return SensorReading(truth.t, value, spec.kind)


def orientation_sample(true_angle: float, t: float, spec: SensorSpec, rng: np.random.Generator) -> SensorReading:
    _check_kind(spec, SensorKind.ORIENTATION)
    return SensorReading(t, true_angle + _noise(spec, rng), spec.kind)


def crossing_time(prev: GroundTruthState, truth: GroundTruthState, position: float, dt: float) -> float:
    """Instant within (prev.t, truth.t] at which the pod passes ``position``.

    Motion inside a tick is the constant-acceleration arc that connects the
    two discrete states.
    """
    a, v0, gap = truth.a, prev.v, position - prev.x
    # smaller root of 0.5 a tau^2 + v0 tau - gap = 0, in cancellation-free form
    denom = v0 + math.sqrt(max(v0 * v0 + 2 * a * gap, 0.0))
    tau = 2 * gap / denom if denom > 0 else dt
    tau = min(max(tau, 0.0), dt)
    return prev.t + tau


def fiducial_detect(truth: GroundTruthState, strip_spacing: float, last_index: int,
                    prev: Optional[GroundTruthState] = None, dt: Optional[float] = None) -> Optional[FiducialEvent]:
    """Event for the next strip (``last_index + 1``) once the pod has reached it.

    Call repeatedly with the returned index to collect every strip passed in
    one tick; see :func:`fiducial_events`. Without ``prev`` the event is
    stamped at the tick time.
    """
    if not strip_spacing > 0:
        raise ValueError(f"strip_spacing must be > 0, got {strip_spacing}")
    index = last_index + 1
    position = strip_spacing * index
    if truth.x < position:
        return None
    t = truth.t
    if prev is not None and dt is not None and prev.x < position:
        t = crossing_time(prev, truth, position, dt)
    return FiducialEvent(t, position, index)


def fiducial_events(truth, strip_spacing, last_index, prev=None, dt=None) -> Iterator[FiducialEvent]:
    while True:
        event = fiducial_detect(truth, strip_spacing, last_index, prev, dt)
        if event is None:
            return
        last_index = event.marker_index
        yield event


def orientation_estimate(window: Sequence[float]) -> float:
    if len(window) == 0:
        raise ValueError("orientation window is empty")
    return float(np.mean(np.asarray(window, dtype=float)))


@dataclass
class SensorSuite:
    imu: SensorSpec
    tachometer: SensorSpec
    encoder: SensorSpec
    orientation: SensorSpec = field(default_factory=SensorSpec.orientation)
    strip_spacing: Optional[float] = DEFAULT_STRIP_SPACING
    true_orientation: float = 0.0


@dataclass(frozen=True)
class TickObservation:
    truth: GroundTruthState
    imu: SensorReading
    tachometer: SensorReading
    encoder: SensorReading
    orientation: SensorReading
    fiducials: tuple[FiducialEvent, ...]


def sensor_rngs(seed: int, suite: SensorSuite) -> dict[SensorKind, np.random.Generator]:
    specs = (suite.imu, suite.tachometer, suite.encoder, suite.orientation)
    return {s.kind: np.random.default_rng([seed, s.seed]) for s in specs}


class World:
    """Tick-by-tick plant: integrates commanded acceleration plus process noise.

    When ``stop_at_rest`` is set (braking), the pod never reverses: a step that
    would make the velocity negative is replaced by the exact stopping
    acceleration and the pod is held at rest afterwards.
    """

    def __init__(self, suite: SensorSuite, dt: float, seed: int, process_std: float = 0.0,
                 v0: float = 0.0, x0: float = 0.0):
        if not dt > 0:
            raise ValueError(f"dt must be > 0, got {dt}")
        if process_std < 0:
            raise ValueError("process_std must be >= 0")
        self.suite = suite
        self.dt = dt
        self.process_std = process_std
        self.state = GroundTruthState(0.0, 0.0, v0, x0)
        self.tick = 0
        self.last_strip = int(math.floor(x0 / suite.strip_spacing)) if suite.strip_spacing else 0
        self.at_rest = False
        self._process_rng = np.random.default_rng([seed, 0])
        self._rngs = sensor_rngs(seed, suite)

    def step(self, commanded_accel: float, stop_at_rest: bool = False) -> TickObservation:
        if not math.isfinite(commanded_accel):
            raise ValueError(f"non-finite commanded acceleration at tick {self.tick}")
        prev = self.state
        # draw unconditionally so the noise stream does not depend on braking
        disturbance = float(self._process_rng.normal(0.0, self.process_std)) if self.process_std else 0.0
        if self.at_rest:
            a = 0.0
        else:
            a = commanded_accel + disturbance
            if stop_at_rest and prev.v + self.dt * a <= 0:
                a = -prev.v / self.dt
                self.at_rest = True
        v, x = kinematic_step(prev.v, prev.x, a, self.dt)
        if self.at_rest:
            v = 0.0
        truth = GroundTruthState((self.tick + 1) * self.dt, a, v, x)
        self.state = truth
        self.tick += 1
        return self._observe(prev, truth)

    def _observe(self, prev, truth) -> TickObservation:
        s, r = self.suite, self._rngs
        fids: tuple[FiducialEvent, ...] = ()
        if s.strip_spacing:
            fids = tuple(fiducial_events(truth, s.strip_spacing, self.last_strip, prev, self.dt))
            if fids:
                self.last_strip = fids[-1].marker_index
        return TickObservation(
            truth,
            imu_sample(truth, s.imu, r[SensorKind.IMU_ACCEL]),
            tachometer_sample(truth, s.tachometer, r[SensorKind.TACHOMETER]),
            encoder_sample(truth, s.encoder, r[SensorKind.ENCODER]),
            orientation_sample(s.true_orientation, truth.t, s.orientation, r[SensorKind.ORIENTATION]),
            fids,
        )


def simulate_open_loop(plan: Sequence[float], suite: SensorSuite, dt: float, seed: int,
                       process_std: float = 0.0, v0: float = 0.0, x0: float = 0.0) -> list[TickObservation]:
    world = World(suite, dt, seed, process_std, v0, x0)
    return [world.step(float(a)) for a in plan]
