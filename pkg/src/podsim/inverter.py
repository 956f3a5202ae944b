"""DC-to-AC inverter output, RC filtering and spectrum checks.

Switches are ideal: the bridge output is +v_dc or -v_dc, nothing else.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np


class Modulation(str, enum.Enum):
    SQUARE = "square"
    PWM_SINE = "pwm_sine"


@dataclass(frozen=True)
class InverterConfig:
    v_dc: float = 350.0
    f_fundamental: float = 277.77
    filter_r: float = 1000.0
    filter_c: float = 40e-9
    fs: float = 100_000.0
    duration: Optional[float] = None  # defaults to n_periods whole periods
    n_periods: int = 100
    modulation: Modulation = Modulation.SQUARE
    carrier_hz: float = 5_000.0
    modulation_index: float = 0.8
    highpass_hz: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "modulation", Modulation(self.modulation))
        if self.v_dc < 0:
            raise ValueError("v_dc must be >= 0")
        for name in ("f_fundamental", "filter_r", "filter_c", "fs"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.fs < 20 * self.f_fundamental:
            raise ValueError("fs must be at least 20x the fundamental")
        if self.duration is not None and not self.duration > 0:
            raise ValueError("duration must be > 0")
        if self.n_periods < 1:
            raise ValueError("n_periods must be >= 1")
        if self.modulation is Modulation.PWM_SINE:
            if not self.carrier_hz > self.f_fundamental or self.carrier_hz * 2 > self.fs:
                raise ValueError("carrier_hz must sit between the fundamental and Nyquist")
            if not 0 < self.modulation_index <= 1:
                raise ValueError("modulation_index must lie in (0, 1]")
        if self.highpass_hz is not None and not 0 < self.highpass_hz < self.fs / 2:
            raise ValueError("highpass_hz must lie in (0, fs/2)")

    @property
    def n_samples(self) -> int:
        duration = self.duration if self.duration is not None else self.n_periods / self.f_fundamental
        return max(2, int(round(duration * self.fs)))

    @property
    def cutoff_hz(self) -> float:
        return rc_cutoff(self.filter_r, self.filter_c)


@dataclass(frozen=True)
class Waveform:
    fs: float
    samples: np.ndarray

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.samples.size) / self.fs

    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.samples**2)))


@dataclass(frozen=True)
class Spectrum:
    """One-sided amplitude spectrum; a sinusoid of amplitude A shows up as A."""

    bin_hz: float
    magnitudes: np.ndarray
    n_samples: int

    @property
    def freqs(self) -> np.ndarray:
        return np.arange(self.magnitudes.size) * self.bin_hz

    def energy(self) -> float:
        """Sum of squared time samples implied by this spectrum."""
        m = self.magnitudes
        n = self.n_samples
        interior = m[1:-1] if n % 2 == 0 else m[1:]
        total = m[0] ** 2 + 0.5 * np.sum(interior**2)
        if n % 2 == 0:
            total += m[-1] ** 2
        return float(n * total)

    def amplitude_at(self, freq: float) -> float:
        return float(self.magnitudes[int(round(freq / self.bin_hz))])


def rc_cutoff(r: float, c: float) -> float:
    return 1.0 / (2 * math.pi * r * c)


def generate_waveform(cfg: InverterConfig) -> Waveform:
    n = cfg.n_samples
    t = np.arange(n) / cfg.fs
    if cfg.modulation is Modulation.SQUARE:
        phase = np.mod(t * cfg.f_fundamental, 1.0)
        out = np.where(phase < 0.5, cfg.v_dc, -cfg.v_dc)
    else:
        reference = cfg.modulation_index * np.sin(2 * np.pi * cfg.f_fundamental * t)
        carrier_phase = np.mod(t * cfg.carrier_hz, 1.0)
        carrier = 4.0 * np.abs(carrier_phase - 0.5) - 1.0  # triangle in [-1, 1]
        out = np.where(reference >= carrier, cfg.v_dc, -cfg.v_dc)
    return Waveform(cfg.fs, out.astype(float))


def _first_order(w: Waveform, b0: float, b1: float, a1: float) -> Waveform:
    x = w.samples
    y = np.empty_like(x)
    prev_x = prev_y = 0.0  # uncharged capacitor
    for i, xi in enumerate(x.tolist()):
        yi = b0 * xi + b1 * prev_x - a1 * prev_y
        y[i] = yi
        prev_x, prev_y = xi, yi
    return Waveform(w.fs, y)


def rc_lowpass(w: Waveform, r: float, c: float) -> Waveform:
    """Series-R shunt-C low-pass, bilinear-transformed at the waveform's rate."""
    if not (r > 0 and c > 0):
        raise ValueError("r and c must be > 0")
    k = 2.0 * w.fs * r * c
    return _first_order(w, 1.0 / (1.0 + k), 1.0 / (1.0 + k), (1.0 - k) / (1.0 + k))


def rc_highpass(w: Waveform, cutoff_hz: float) -> Waveform:
    if not cutoff_hz > 0:
        raise ValueError("cutoff must be > 0")
    k = 2.0 * w.fs / (2 * math.pi * cutoff_hz)
    return _first_order(w, k / (1.0 + k), -k / (1.0 + k), (1.0 - k) / (1.0 + k))


def fft_spectrum(w: Waveform) -> Spectrum:
    n = w.samples.size
    if n < 2:
        raise ValueError("waveform needs at least 2 samples")
    mags = np.abs(np.fft.rfft(w.samples)) / n
    mags[1:] *= 2.0
    if n % 2 == 0:
        mags[-1] /= 2.0  # Nyquist bin has no mirror
    return Spectrum(w.fs / n, mags, n)


def dominant_frequency(s: Spectrum, exclude_dc: bool = True) -> float:
    mags = s.magnitudes
    if mags.size == 0:
        raise ValueError("empty spectrum")
    lo = 1 if exclude_dc else 0
    if mags.size <= lo or not np.any(mags[lo:] > 0):
        raise ValueError("spectrum has no non-zero component")
    return float((lo + int(np.argmax(mags[lo:]))) * s.bin_hz)


def inverter_output(cfg: InverterConfig) -> tuple[Waveform, Waveform]:
    """Raw bridge output and the filtered load voltage."""
    raw = generate_waveform(cfg)
    filtered = rc_lowpass(raw, cfg.filter_r, cfg.filter_c)
    if cfg.highpass_hz is not None:
        filtered = rc_highpass(filtered, cfg.highpass_hz)
    return raw, filtered


def harmonic_table(raw: Spectrum, filtered: Spectrum, f0: float, max_order: Optional[int] = None):
    """Rows of (order, freq, raw amplitude, filtered amplitude, raw ratio, filtered ratio) for odd harmonics."""
    nyquist = raw.bin_hz * (raw.magnitudes.size - 1)
    top = int(nyquist // f0) if max_order is None else max_order
    fund_raw, fund_f = raw.amplitude_at(f0), filtered.amplitude_at(f0)
    rows = []
    for k in range(1, top + 1, 2):
        f = k * f0
        if f > nyquist:
            break
        a_raw, a_f = raw.amplitude_at(f), filtered.amplitude_at(f)
        rows.append((k, f, a_raw, a_f, a_raw / fund_raw if fund_raw else math.nan,
                     a_f / fund_f if fund_f else math.nan))
    return rows
