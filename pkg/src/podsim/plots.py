"""Matplotlib figures written next to the plot-data CSVs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 3.6),
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.0,
    "legend.fontsize": 8,
    "savefig.dpi": 120,
}
# no timestamps, so re-rendering gives the same bytes
PNG_META = {"Software": None}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, metadata=PNG_META)
    plt.close(fig)
    return path


def filtering_figure(t, truth, raw, kf, ylabel, title, path: Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(t, raw, ".", ms=2.5, color="0.6", label="raw sensor")
        ax.plot(t, truth, "-", color="k", label="ground truth")
        ax.plot(t, kf, "-", color="tab:red", label="Kalman estimate")
        ax.set_xlabel("time (s)")
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.legend(loc="best")
        return _save(fig, path)


def pose_figures(run, out: Path) -> list[Path]:
    obs, est = run.observations, run.estimates
    t = [o.truth.t for o in obs]
    m = run.metrics
    return [
        filtering_figure(t, [o.truth.a for o in obs], [o.imu.value for o in obs], [e.accel.mean for e in est],
                         "acceleration (m/s$^2$)",
                         f"Acceleration: RMSE raw {m['rmse_raw_a']:.2f}, KF {m['rmse_kf_a']:.2f}",
                         out / "accel.png"),
        filtering_figure(t, [o.truth.v for o in obs], [o.tachometer.value / run.tach_gain for o in obs],
                         [e.vel.mean for e in est], "velocity (m/s)",
                         f"Velocity: RMSE raw {m['rmse_raw_v']:.2f}, KF {m['rmse_kf_v']:.2f}", out / "velocity.png"),
        filtering_figure(t, [o.truth.x for o in obs], [o.encoder.value / run.enc_gain for o in obs],
                         [e.pos.mean for e in est], "position (m)",
                         f"Position: RMSE raw {m['rmse_raw_x']:.2f}, KF {m['rmse_kf_x']:.2f}", out / "position.png"),
    ]


def battery_figure(run, path: Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(run.battery_t, run.battery_x1, lw=0.6, label="cell 1")
        ax.plot(run.battery_t, run.battery_x2, lw=0.6, label="cell 2")
        for _, e in run.fault_events:
            ax.axvline(e.t, color="tab:red", ls="--", lw=0.8)
        ax.set_xlabel("time (s)")
        ax.set_ylabel("cell voltage (V)")
        ax.set_title(f"Cell pair {run.fault_events[0][1].cell_pair if run.fault_events else ''}"
                     f" ({len(run.fault_events)} fault events)")
        ax.legend(loc="lower left")
        return _save(fig, path)


def inverter_figures(run, out: Path, f0: float, periods: int = 4) -> list[Path]:
    n_show = min(run.raw.samples.size, int(round(periods * run.raw.fs / f0)))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        t_ms = run.raw.t[:n_show] * 1e3
        ax.plot(t_ms, run.raw.samples[:n_show], color="0.6", label="bridge output")
        ax.plot(t_ms, run.filtered.samples[:n_show], color="tab:blue", label="after RC filter")
        ax.set_xlabel("time (ms)")
        ax.set_ylabel("voltage (V)")
        ax.legend(loc="upper right")
        time_png = _save(fig, out / "waveform.png")

        fig, ax = plt.subplots()
        f = run.filtered_spectrum.freqs
        keep = f <= 20 * f0
        ax.plot(f[keep], run.raw_spectrum.magnitudes[keep], color="0.6", label="bridge output")
        ax.plot(f[keep], run.filtered_spectrum.magnitudes[keep], color="tab:blue", label="after RC filter")
        ax.axvline(run.dominant_hz, color="tab:red", ls="--", lw=0.8)
        ax.set_xlabel("frequency (Hz)")
        ax.set_ylabel("amplitude (V)")
        ax.set_title(f"Dominant component {run.dominant_hz:.2f} Hz")
        ax.legend(loc="upper right")
        freq_png = _save(fig, out / "spectrum.png")
    return [time_png, freq_png]
