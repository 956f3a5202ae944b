"""Adjoining-cell voltage traces, fault injection and ICC-based fault detection."""

from __future__ import annotations

import enum
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_WINDOW = 100
DEFAULT_THRESHOLD = 0.9


class DegenerateTraceError(ValueError):
    """Every residual is zero, so the coefficient is undefined."""


@dataclass(frozen=True)
class CellPairTrace:
    dt_sample: float
    x1: np.ndarray
    x2: np.ndarray

    def __post_init__(self):
        x1 = np.asarray(self.x1, dtype=float)
        x2 = np.asarray(self.x2, dtype=float)
        if x1.shape != x2.shape or x1.ndim != 1:
            raise ValueError("cell traces must be 1-D and of equal length")
        if x1.size < 2:
            raise ValueError("cell traces need at least 2 samples")
        if not (np.all(np.isfinite(x1)) and np.all(np.isfinite(x2))):
            raise ValueError("cell voltages must be finite")
        if np.any(x1 < 0) or np.any(x2 < 0):
            raise ValueError("cell voltages must be >= 0")
        if not self.dt_sample > 0:
            raise ValueError("dt_sample must be > 0")
        object.__setattr__(self, "x1", x1)
        object.__setattr__(self, "x2", x2)

    def __len__(self):
        return self.x1.size

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) * self.dt_sample


def icc_values(x1: np.ndarray, x2: np.ndarray) -> float:
    n = x1.size
    # the coefficient is shift invariant; re-centring on a sample makes a
    # constant pair exactly zero instead of leaving rounding residue
    ref = min(x1[0], x2[0])
    x1, x2 = x1 - ref, x2 - ref
    grand_mean = (x1.sum() + x2.sum()) / (2 * n)
    r1 = x1 - grand_mean
    r2 = x2 - grand_mean
    denom = float(np.dot(r1, r1) + np.dot(r2, r2))
    if denom == 0.0:
        raise DegenerateTraceError("both traces are constant at the grand mean")
    return 2.0 * float(np.dot(r1, r2)) / denom


def icc(trace: CellPairTrace) -> float:
    """Interclass correlation of two cells' voltages: 2 sum(R1 R2) / (sum R1^2 + sum R2^2)."""
    return icc_values(trace.x1, trace.x2)


class FaultKind(str, enum.Enum):
    ABRUPT_DIP = "abrupt_dip"
    SHORT_CIRCUIT = "short_circuit"


@dataclass(frozen=True)
class FaultSpec:
    """``magnitude`` is the dip depth in V, or the decay rate in V/sample for a short."""

    kind: FaultKind
    at_index: int
    magnitude: float
    cell: int = 2

    def __post_init__(self):
        object.__setattr__(self, "kind", FaultKind(self.kind))
        if self.at_index < 0:
            raise ValueError("at_index must be >= 0")
        if self.magnitude < 0:
            raise ValueError("fault magnitude must be >= 0")
        if self.cell not in (1, 2):
            raise ValueError("fault target cell must be 1 or 2")


def inject_fault(trace: CellPairTrace, fault: FaultSpec, target: Optional[int] = None) -> CellPairTrace:
    target = fault.cell if target is None else target
    if target not in (1, 2):
        raise ValueError("target cell must be 1 or 2")
    if fault.at_index >= len(trace):
        raise ValueError(f"fault index {fault.at_index} outside trace of length {len(trace)}")
    cell = (trace.x1 if target == 1 else trace.x2).copy()
    if fault.kind is FaultKind.ABRUPT_DIP:
        cell[fault.at_index] -= fault.magnitude
    else:
        steps = np.arange(1, len(trace) - fault.at_index + 1, dtype=float)
        cell[fault.at_index:] -= fault.magnitude * steps
    if np.any(cell < 0):
        raise ValueError("fault drives a cell voltage below 0 V")
    x1, x2 = (cell, trace.x2) if target == 1 else (trace.x1, cell)
    return CellPairTrace(trace.dt_sample, x1, x2)


def healthy_pair(n: int, dt_sample: float, rng: np.random.Generator, voltage: float = 3.3,
                 load_ripple: float = 0.02, load_hz: float = 0.5, common_std: float = 0.005,
                 diff_std: float = 0.0005) -> CellPairTrace:
    """Two cells under a shared load: common ripple and noise plus small per-cell noise."""
    t = np.arange(n) * dt_sample
    common = voltage + load_ripple * np.sin(2 * np.pi * load_hz * t) + rng.normal(0.0, common_std, n)
    x1 = common + rng.normal(0.0, diff_std, n)
    x2 = common + rng.normal(0.0, diff_std, n)
    return CellPairTrace(dt_sample, x1, x2)


@dataclass(frozen=True)
class Band:
    """Pod-state level at or above which ``threshold`` and ``rate`` apply."""

    lower: float
    threshold: float
    rate: float


@dataclass(frozen=True)
class PodState:
    rpm: float = 0.0
    velocity: float = 0.0
    accel: float = 0.0


@dataclass(frozen=True)
class AdaptivePolicy:
    base_threshold: float = DEFAULT_THRESHOLD
    base_rate: float = 10.0
    rpm_bands: tuple[Band, ...] = ()
    velocity_bands: tuple[Band, ...] = ()
    accel_bands: tuple[Band, ...] = ()

    def __post_init__(self):
        if not -1 < self.base_threshold < 1:
            raise ValueError("base_threshold must lie in (-1, 1)")
        if not self.base_rate > 0:
            raise ValueError("base_rate must be > 0")
        for name in ("rpm_bands", "velocity_bands", "accel_bands"):
            bands = tuple(Band(*b) if not isinstance(b, Band) else b for b in getattr(self, name))
            object.__setattr__(self, name, bands)
            prev_lower, prev_thr, prev_rate = -math.inf, self.base_threshold, self.base_rate
            for b in bands:
                if not b.lower > prev_lower or b.lower < 0:
                    raise ValueError(f"{name}: band lower bounds must be >= 0 and increasing")
                if not -1 < b.threshold < 1:
                    raise ValueError(f"{name}: thresholds must lie in (-1, 1)")
                if b.threshold < prev_thr or b.rate < prev_rate:
                    raise ValueError(f"{name}: threshold and rate must not relax with severity")
                prev_lower, prev_thr, prev_rate = b.lower, b.threshold, b.rate

    def strictest(self) -> tuple[float, float]:
        thr, rate = self.base_threshold, self.base_rate
        for bands in (self.rpm_bands, self.velocity_bands, self.accel_bands):
            if bands:
                thr, rate = max(thr, bands[-1].threshold), max(rate, bands[-1].rate)
        return thr, rate


def _band_lookup(value: float, bands: Sequence[Band], base: tuple[float, float]) -> tuple[float, float]:
    chosen = base
    for b in bands:
        if value >= b.lower:
            chosen = (b.threshold, b.rate)
    return chosen


def adaptive_params(state: PodState, policy: AdaptivePolicy) -> tuple[float, float]:
    """Threshold and sampling rate for the current pod state; the strictest band wins.

    Severity is taken as the magnitude of each quantity, so hard braking counts
    like hard acceleration.
    """
    base = (policy.base_threshold, policy.base_rate)
    picks = [
        _band_lookup(abs(state.rpm), policy.rpm_bands, base),
        _band_lookup(abs(state.velocity), policy.velocity_bands, base),
        _band_lookup(abs(state.accel), policy.accel_bands, base),
    ]
    return max(p[0] for p in picks), max(p[1] for p in picks)


@dataclass(frozen=True)
class FaultEvent:
    t: float
    cell_pair: str
    icc_value: float
    threshold_used: float
    sample_index: int


class FaultDetector:
    """Sliding-window ICC detector fed one paired sample at a time.

    The coefficient is evaluated every ``stride`` samples, where the stride
    follows the policy's sampling rate. An event is raised when the
    coefficient first drops below the threshold; the detector re-arms once
    it recovers, so one fault episode yields one event.
    """

    def __init__(self, policy: AdaptivePolicy, dt_sample: float, window: int = DEFAULT_WINDOW,
                 pair_id: str = "pair0"):
        if window < 2:
            raise ValueError("window must be >= 2")
        if not dt_sample > 0:
            raise ValueError("dt_sample must be > 0")
        self.policy = policy
        self.dt_sample = dt_sample
        self.window = window
        self.pair_id = pair_id
        self._x1: deque[float] = deque(maxlen=window)
        self._x2: deque[float] = deque(maxlen=window)
        self.index = -1
        self.armed = True
        self.pod_state = PodState()
        self.degenerate_windows = 0
        self.last_icc: Optional[float] = None

    def stride(self, rate: float) -> int:
        sample_rate = 1.0 / self.dt_sample
        return max(1, min(self.window, int(round(sample_rate / rate))))

    def update_pod_state(self, state: PodState):
        self.pod_state = state

    def feed(self, v1: float, v2: float) -> Optional[FaultEvent]:
        self.index += 1
        self._x1.append(v1)
        self._x2.append(v2)
        if len(self._x1) < self.window:
            return None
        threshold, rate = adaptive_params(self.pod_state, self.policy)
        if self.index % self.stride(rate):
            return None
        try:
            value = icc_values(np.fromiter(self._x1, float, self.window), np.fromiter(self._x2, float, self.window))
        except DegenerateTraceError:
            self.degenerate_windows += 1
            log.debug("%s: degenerate window ending at sample %d skipped", self.pair_id, self.index)
            return None
        self.last_icc = value
        if value >= threshold:
            self.armed = True
            return None
        if not self.armed:
            return None
        self.armed = False
        return FaultEvent(self.index * self.dt_sample, self.pair_id, value, threshold, self.index)


def detect_faults(trace: CellPairTrace, policy: AdaptivePolicy, window: int = DEFAULT_WINDOW,
                  pod_states: Optional[Iterable[PodState]] = None, pair_id: str = "pair0") -> list[FaultEvent]:
    """Run a detector over a whole trace; ``pod_states`` gives one state per sample."""
    det = FaultDetector(policy, trace.dt_sample, window, pair_id)
    states = iter(pod_states) if pod_states is not None else None
    events = []
    for v1, v2 in zip(trace.x1.tolist(), trace.x2.tolist()):
        if states is not None:
            det.update_pod_state(next(states))
        event = det.feed(v1, v2)
        if event is not None:
            events.append(event)
    if det.degenerate_windows:
        log.info("%s: skipped %d degenerate windows", pair_id, det.degenerate_windows)
    return events


@dataclass
class BatteryBank:
    """Voltage source for one monitored cell pair, served in chunks per pod tick."""

    trace: CellPairTrace
    faults: list[FaultSpec] = field(default_factory=list)
    cursor: int = 0

    @classmethod
    def build(cls, n_samples, dt_sample, rng, faults=(), **healthy_kw) -> BatteryBank:
        trace = healthy_pair(n_samples, dt_sample, rng, **healthy_kw)
        for f in faults:
            trace = inject_fault(trace, f)
        return cls(trace, list(faults))

    def take(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        start, stop = self.cursor, min(self.cursor + n, len(self.trace))
        self.cursor = stop
        return self.trace.x1[start:stop], self.trace.x2[start:stop]
