"""Curve rendering and tidy CSV export for run logs.

The CSV is the source of truth and is always written unsmoothed; plots are
derived artifacts. Optional smoothing is a Savitzky-Golay filter with the
configured odd window length and polynomial order (window 1 disables it).
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import ConfigError

CSV_COLUMNS = ("run", "cycle", "env_steps", "updates", "m_used", "return_mean",
               "success_rate", "il_loss", "rho", "gnorm_il", "gnorm_rl")


def smooth_series(values, window, polyorder=3):
    """Savitzky-Golay smoothing; window 1 (or too-short input) returns the raw series."""
    values = np.asarray(values, dtype=np.float64)
    if window == 1:
        return values.copy()
    if window < 1 or window % 2 == 0:
        raise ConfigError("smoothing window must be a positive odd integer, got %d" % window)
    if values.size < window or window <= polyorder:
        return values.copy()
    from scipy.signal import savgol_filter
    return savgol_filter(values, window_length=window, polyorder=polyorder)


def write_tidy_csv(named_logs, path):
    """One row per cycle record across all logs, raw values only."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for name, log in named_logs:
            for rec in log.cycles():
                writer.writerow([name] + [rec.get(c) for c in CSV_COLUMNS[1:]])
    return path


def _plot_metric(named_logs, metric, ylabel, out_path, window, polyorder):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    drew = False
    for name, log in named_logs:
        xs, ys = [], []
        for rec in log.cycles():
            if rec.get(metric) is None:
                continue
            xs.append(rec["env_steps"])
            ys.append(rec[metric])
        if not ys:
            continue
        ax.plot(xs, smooth_series(ys, window, polyorder), label=name)
        drew = True
    ax.set_xlabel("environment steps")
    ax.set_ylabel(ylabel)
    if drew:
        ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def render_plots(named_logs, out_dir, window=11, polyorder=3):
    """Reward and imitation-loss overlays vs env steps; returns written paths."""
    out_dir = Path(out_dir)
    written = [
        _plot_metric(named_logs, "return_mean", "mean episode return",
                     out_dir / "return_vs_env_steps.png", window, polyorder),
        _plot_metric(named_logs, "il_loss", "imitation loss (full batch)",
                     out_dir / "il_loss_vs_env_steps.png", window, polyorder),
    ]
    return written
