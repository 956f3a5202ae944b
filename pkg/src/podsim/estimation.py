"""Scalar Kalman cascade: acceleration -> velocity -> position.

Noise naming follows the pod literature rather than the textbook:
``process_var`` (R_t) is the prediction noise and ``meas_var`` (Q_t) the
measurement noise. Measurement variances are in sensor units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from podsim.world import FiducialEvent, TickObservation, orientation_estimate


class DegenerateUpdateError(ValueError):
    """Prior variance and measurement variance are both zero."""


@dataclass(frozen=True)
class Gaussian1D:
    mean: float
    var: float

    def __post_init__(self):
        if self.var < 0:
            raise ValueError(f"variance must be >= 0, got {self.var}")


@dataclass(frozen=True)
class NoiseParams:
    process_var: float
    meas_var: float

    def __post_init__(self):
        if self.process_var < 0 or self.meas_var < 0:
            raise ValueError("noise variances must be >= 0")

    @classmethod
    def from_std(cls, process_std: float, meas_std: float) -> NoiseParams:
        return cls(process_std**2, meas_std**2)


@dataclass(frozen=True)
class ObservationModel:
    h: float

    def __post_init__(self):
        if self.h == 0 or not math.isfinite(self.h):
            raise ValueError("observation gain must be finite and non-zero")


@dataclass(frozen=True)
class PoseEstimate:
    t: float
    accel: Gaussian1D
    vel: Gaussian1D
    pos: Gaussian1D
    kalman_gains: tuple[float, float, float]
    orientation: float = 0.0


def kf_update(prior: Gaussian1D, z: float, obs: ObservationModel, noise: NoiseParams) -> tuple[Gaussian1D, float]:
    """Scalar measurement update; returns the posterior and the Kalman gain."""
    if not math.isfinite(prior.var):
        raise ValueError("prior variance must be finite")
    h = obs.h
    denom = h * h * prior.var + noise.meas_var
    if denom <= 0:
        raise DegenerateUpdateError("prior and measurement variance are both zero")
    gain = prior.var * h / denom
    mean = prior.mean + gain * (z - h * prior.mean)
    # clamp guards against rounding pushing (1 - gain*h) outside [0, 1]
    var = min(max((1.0 - gain * h) * prior.var, 0.0), prior.var)
    return Gaussian1D(mean, var), gain


def predict_accel(t_index: int, profile_lookup: Sequence[float], noise: NoiseParams) -> Gaussian1D:
    if not 0 <= t_index < len(profile_lookup):
        raise IndexError(f"tick {t_index} outside the acceleration profile (length {len(profile_lookup)})")
    return Gaussian1D(float(profile_lookup[t_index]), noise.process_var)


def predict_velocity(prev: Gaussian1D, accel_est: float, dt: float, noise: NoiseParams) -> Gaussian1D:
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    return Gaussian1D(prev.mean + dt * accel_est, prev.var + noise.process_var)


def predict_position(prev: Gaussian1D, vel_est: float, accel_est: float, dt: float,
                     noise: NoiseParams) -> Gaussian1D:
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    return Gaussian1D(prev.mean + dt * vel_est + 0.5 * dt**2 * accel_est, prev.var + noise.process_var)


def recalibrate_on_fiducial(pos: Gaussian1D, event: FiducialEvent, marker_var: float) -> Gaussian1D:
    """Hard reset to the surveyed strip position; later gains restart from ``marker_var``."""
    if marker_var < 0:
        raise ValueError("marker_var must be >= 0")
    return Gaussian1D(event.marker_position, marker_var)


def propagate_from_marker(fix: Gaussian1D, vel: Gaussian1D, accel_est: float, elapsed: float) -> Gaussian1D:
    """Carry a strip fix taken ``elapsed`` seconds ago forward to the tick.

    ``vel`` is the velocity at the tick, so the pod's speed at the crossing
    is ``vel.mean - accel_est * elapsed``.
    """
    if elapsed <= 0:
        return fix
    mean = fix.mean + elapsed * vel.mean - 0.5 * elapsed**2 * accel_est
    return Gaussian1D(mean, fix.var + elapsed**2 * vel.var)


def rmse(pred: Sequence[float], real: Sequence[float]) -> float:
    pred = np.asarray(pred, dtype=float)
    real = np.asarray(real, dtype=float)
    if pred.shape != real.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {real.shape}")
    if pred.size == 0:
        raise ValueError("rmse of an empty series")
    return float(np.sqrt(np.mean((pred - real) ** 2)))


@dataclass(frozen=True)
class FilterConfig:
    accel: NoiseParams = NoiseParams.from_std(5.0, 10.0)
    vel: NoiseParams = NoiseParams.from_std(35.0, 10.0)
    pos: NoiseParams = NoiseParams.from_std(10.0, 3000.0)
    marker_var: float = 0.01
    use_fiducials: bool = True
    orientation_window: int = 10


class CascadeFilter:
    """Per-tick estimator. State is the previous tick's posteriors."""

    def __init__(self, cfg: FilterConfig, tach: ObservationModel, enc: ObservationModel, dt: float):
        if not dt > 0:
            raise ValueError(f"dt must be > 0, got {dt}")
        self.cfg = cfg
        self.tach = tach
        self.enc = enc
        self.dt = dt
        self.imu = ObservationModel(1.0)
        # pod starts at rest at the origin
        self.vel = Gaussian1D(0.0, cfg.vel.process_var)
        self.pos = Gaussian1D(0.0, cfg.pos.process_var)
        self._orient: list[float] = []

    def step(self, t_index: int, plan: Sequence[float], obs: TickObservation) -> PoseEstimate:
        cfg, dt = self.cfg, self.dt
        a_prior = predict_accel(t_index, plan, cfg.accel)
        accel, k_a = kf_update(a_prior, obs.imu.value, self.imu, cfg.accel)

        v_prior = predict_velocity(self.vel, accel.mean, dt, cfg.vel)
        vel, k_v = kf_update(v_prior, obs.tachometer.value, self.tach, cfg.vel)

        # position integrates over the interval, so it takes the velocity at its start
        x_prior = predict_position(self.pos, self.vel.mean, accel.mean, dt, cfg.pos)
        pos, k_x = kf_update(x_prior, obs.encoder.value, self.enc, cfg.pos)

        if cfg.use_fiducials and obs.fiducials:
            latest = obs.fiducials[-1]
            fix = recalibrate_on_fiducial(pos, latest, cfg.marker_var)
            pos = propagate_from_marker(fix, vel, accel.mean, obs.truth.t - latest.t)

        self._orient.append(obs.orientation.value)
        del self._orient[:-cfg.orientation_window]
        self.vel, self.pos = vel, pos
        return PoseEstimate(obs.truth.t, accel, vel, pos, (k_a, k_v, k_x), orientation_estimate(self._orient))


@dataclass
class PipelineResult:
    estimates: list[PoseEstimate]
    observations: list[TickObservation]
    tach_gain: float
    enc_gain: float
    metrics: dict[str, float] = field(default_factory=dict)


def pipeline_metrics(estimates: Sequence[PoseEstimate], observations: Sequence[TickObservation],
                     tach_gain: float, enc_gain: float) -> dict[str, float]:
    """Raw-sensor and filtered RMSE per parameter; raw readings are mapped back through their gains."""
    truth = [o.truth for o in observations]
    a_true = [s.a for s in truth]
    v_true = [s.v for s in truth]
    x_true = [s.x for s in truth]
    return {
        "rmse_raw_a": rmse([o.imu.value for o in observations], a_true),
        "rmse_kf_a": rmse([e.accel.mean for e in estimates], a_true),
        "rmse_raw_v": rmse([o.tachometer.value / tach_gain for o in observations], v_true),
        "rmse_kf_v": rmse([e.vel.mean for e in estimates], v_true),
        "rmse_raw_x": rmse([o.encoder.value / enc_gain for o in observations], x_true),
        "rmse_kf_x": rmse([e.pos.mean for e in estimates], x_true),
    }


def run_pipeline(plan: Sequence[float], observations: Sequence[TickObservation], cfg: FilterConfig,
                 tach_gain: float, enc_gain: float, dt: float) -> PipelineResult:
    kf = CascadeFilter(cfg, ObservationModel(tach_gain), ObservationModel(enc_gain), dt)
    estimates = [kf.step(k, plan, obs) for k, obs in enumerate(observations)]
    result = PipelineResult(estimates, list(observations), tach_gain, enc_gain)
    result.metrics = pipeline_metrics(estimates, observations, tach_gain, enc_gain)
    return result
