"""Interleaving-ratio sweeps: the modes x m x seeds grid and its summary.

The symbolic m value "infinity" maps to the rl_only mode (one such run per
seed regardless of how many modes are swept). Cell failures are recorded
and the sweep continues. The summary is a pure reduction of the stored
per-run logs, so it can always be regenerated from them alone.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import il as il_mod
from . import interleave, rl
from .errors import ConfigError, RlweaveError
from .runlog import RunLog

# both recommended ranges are represented: the broad one and the narrow one
DEFAULT_M_VALUES = (1, 3, 5, 10, 15, "infinity")
DOUBLE_DESCENT_DROP = 0.2


@dataclass
class SweepSpec:
    m_values: tuple = DEFAULT_M_VALUES
    seeds: tuple = (0,)
    budget: int = 50_000
    env: str = "pointmass"
    modes: tuple = ("full_net_surgery",)

    def validate(self):
        if not self.m_values or not self.seeds or not self.modes:
            raise ConfigError("m_values, seeds, and modes must be nonempty")
        for m in self.m_values:
            if m != "infinity" and (not isinstance(m, (int, np.integer)) or m < 1):
                raise ConfigError("m values must be positive integers or 'infinity', got %r" % (m,))
        for mode in self.modes:
            if mode not in interleave.MODES:
                raise ConfigError("unknown mode %r" % (mode,))
        if self.budget < 1:
            raise ConfigError("budget must be positive")


def sweep_cells(spec: SweepSpec):
    """Deterministic cell order: finite m per mode, one rl_only per seed."""
    spec.validate()
    cells = []
    for seed in spec.seeds:
        for mode in spec.modes:
            for m in spec.m_values:
                if m == "infinity":
                    continue
                cells.append({"mode": mode, "m": int(m), "seed": int(seed)})
        if "infinity" in spec.m_values:
            cells.append({"mode": "rl_only", "m": "infinity", "seed": int(seed)})
    return cells


def cell_name(cell):
    return "%s_m%s_seed%d" % (cell["mode"], cell["m"], cell["seed"])


def detect_double_descent(series, drop=DOUBLE_DESCENT_DROP):
    """True when the series rises above its start and later falls >= drop
    below its running maximum.

    The fraction is taken of the running max itself, so the rule only
    applies to positive loss levels (a drifted NLL); series that never rise
    above zero report False.
    """
    values = [v for v in series if v is not None]
    if len(values) < 3:
        return False
    start = values[0]
    running_max = start
    for v in values[1:]:
        if running_max > start and running_max > 0 and v <= (1.0 - drop) * running_max:
            return True
        running_max = max(running_max, v)
    return False


def area_under_curve(env_steps, values):
    """Trapezoidal mean of the metric over the env-step axis."""
    pts = [(s, v) for s, v in zip(env_steps, values) if v is not None]
    if len(pts) < 2:
        return None
    xs = np.asarray([p[0] for p in pts], dtype=np.float64)
    ys = np.asarray([p[1] for p in pts], dtype=np.float64)
    span = xs[-1] - xs[0]
    if span <= 0:
        return None
    return float(np.trapezoid(ys, xs) / span)


def summarize_log(name, log: RunLog):
    cycles = log.cycles()
    il_series = [r.get("il_loss") for r in cycles]
    returns = [r.get("return_mean") for r in cycles]
    steps = [r.get("env_steps") for r in cycles]
    finals = [v for v in returns if v is not None]
    return {
        "run": name,
        "mode": log.header.get("mode"),
        "m": log.header.get("m"),
        "seed": log.header.get("seed"),
        "cycles": len(cycles),
        "env_steps": cycles[-1]["env_steps"] if cycles else 0,
        "final_return": finals[-1] if finals else None,
        "final_success": next((r["success_rate"] for r in reversed(cycles)
                               if r.get("success_rate") is not None), None),
        "final_il_loss": next((v for v in reversed(il_series) if v is not None), None),
        "aulc_return": area_under_curve(steps, returns),
        "double_descent": detect_double_descent(il_series),
        "error": None,
    }


def summarize_logs(named_logs):
    """Pure reduction over stored logs; order follows the input."""
    return [summarize_log(name, log) for name, log in named_logs]


SUMMARY_COLUMNS = ("run", "mode", "m", "seed", "cycles", "env_steps", "final_return",
                   "final_success", "final_il_loss", "aulc_return", "double_descent",
                   "error")


def write_summary_csv(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow([row.get(c) for c in SUMMARY_COLUMNS])
    return path


def run_sweep(spec: SweepSpec, pretrained, demos, out_dir, base_cfg: interleave.InterleaveConfig,
              rl_cfg: rl.RlConfig, il_cfg: il_mod.IlBatchConfig, env_kwargs=None):
    """Execute the grid; per-cell failures are recorded and do not stop the sweep.

    Returns (summary_rows, log_paths). Each cell writes <name>.jsonl under
    out_dir; the summary is written to summary.csv.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    log_paths = []
    for cell in sweep_cells(spec):
        name = cell_name(cell)
        cfg = interleave.InterleaveConfig(
            mode=cell["mode"],
            m=1 if cell["m"] == "infinity" else cell["m"],
            alpha_il=base_cfg.alpha_il, alpha_rl=base_cfg.alpha_rl,
            bc_reg_weight=base_cfg.bc_reg_weight if cell["mode"] == "bc_loss_reg" else 0.0,
            adaptive_floor=base_cfg.adaptive_floor,
            fresh_rl_grad_for_surgery=base_cfg.fresh_rl_grad_for_surgery,
            residual_scale=base_cfg.residual_scale,
            residual_hidden=base_cfg.residual_hidden,
        )
        try:
            _, log = interleave.run_inril(pretrained.copy(), demos, spec.env, cfg,
                                          rl_cfg, il_cfg, spec.budget, cell["seed"],
                                          env_kwargs=env_kwargs)
            path = out_dir / (name + ".jsonl")
            log.save(path)
            log_paths.append(path)
            row = summarize_log(name, log)
            row["m"] = cell["m"]  # keep the symbolic "infinity" label
            rows.append(row)
        except RlweaveError as e:
            rows.append({"run": name, "mode": cell["mode"], "m": cell["m"],
                         "seed": cell["seed"], "cycles": None, "env_steps": None,
                         "final_return": None, "final_success": None,
                         "final_il_loss": None, "aulc_return": None,
                         "double_descent": None, "error": str(e)})
    write_summary_csv(rows, out_dir / "summary.csv")
    return rows, log_paths
