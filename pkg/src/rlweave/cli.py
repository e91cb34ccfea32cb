"""Command-line harness: gen-demos, pretrain, finetune, sweep-m, theory-check, plot.

Every command is deterministic given (config, seed): run logs embed the
fully resolved configuration, no timestamps are written to any artifact,
and repeated invocations produce byte-identical logs and checkpoints.

Relative output paths are resolved under $RLWEAVE_OUT (default: CWD).
Exit codes: 0 ok, 1 usage, 2 validation, 3 divergence/budget, 4 theory-check
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, envs, il, interleave, nnkit, rl, sweep, theory
from .errors import (BudgetExceededError, ConfigError, RlweaveError,
                     TheoryCheckFailure, TrainingDivergedError, UsageError)
from .plotting import render_plots, write_tidy_csv
from .runlog import RunLog

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_DIVERGED = 3
EXIT_THEORY = 4

DEFAULT_DEMO_COUNTS = {envs.GRIDWORLD: 20, envs.POINTMASS: 50}
DEFAULT_STEPS_PER_BATCH = {envs.GRIDWORLD: 2048, envs.POINTMASS: 1024}

FINETUNE_KEYS = {"mode", "m", "alpha_il", "alpha_rl", "bc_reg_weight",
                 "budget_env_steps", "seed", "env", "exploration_floor", "rl", "il"}
RL_KEYS = {"gamma", "gae_lambda", "clip_eps", "steps_per_batch", "value_lr",
           "value_epochs", "normalize_advantages"}
IL_KEYS = {"batch_size", "shuffle_seed"}


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def out_root() -> Path:
    return Path(os.environ.get("RLWEAVE_OUT", "."))


def resolve_out(path) -> Path:
    path = Path(path)
    return path if path.is_absolute() else out_root() / path


def check_env_kind(kind):
    if kind not in envs.ENV_KINDS:
        raise UsageError("unknown env %r; valid choices: %s" % (kind, ", ".join(envs.ENV_KINDS)))
    return kind


def parse_m(value):
    if value == "adaptive":
        return "adaptive"
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ConfigError("m must be a positive integer or 'adaptive', got %r" % (value,))


# -- gen-demos ------------------------------------------------------------------

def cmd_gen_demos(args):
    kind = check_env_kind(args.env)
    n = args.n if args.n is not None else DEFAULT_DEMO_COUNTS[kind]
    out = resolve_out(args.out if args.out else "demos/%s.demos" % kind)
    if out.exists() and not args.force:
        raise UsageError("refusing to overwrite %s (pass --force)" % out)
    demos = envs.generate_demos(kind, n, args.noise, args.seed)
    demos.save(out)
    print("wrote %d pairs from %d %s trajectories (noise %g, seed %d) -> %s"
          % (len(demos), n, kind, args.noise, args.seed, out))
    return EXIT_OK


# -- pretrain ---------------------------------------------------------------------

def _greedy_eval(policy_or_agent, kind, episodes, seed):
    ret, success = rl.evaluate_policy(policy_or_agent, kind, episodes, seed)
    return {"mean_return": ret, "success_rate": success}


def cmd_pretrain(args):
    demos = envs.DemoDataset.load(resolve_out(args.demos))
    kind = check_env_kind(demos.meta.get("env", args.env))
    out_dir = resolve_out(args.out)
    hidden = tuple(int(w) for w in args.hidden.split(","))
    spec = nnkit.MlpSpec((demos.obs.shape[1], *hidden, demos.actions.shape[1]))

    start_step = 0
    if args.resume_from:
        ck_spec, params, meta = nnkit.load_checkpoint(resolve_out(args.resume_from))
        if ck_spec != spec:
            raise ConfigError("checkpoint architecture %r does not match --hidden %s"
                              % (ck_spec.layer_widths, args.hidden))
        policy = nnkit.GaussianMlpPolicy(ck_spec, params)
        start_step = int(meta.get("pretrain_steps", 0))
    else:
        policy = nnkit.GaussianMlpPolicy.create(spec, args.seed)

    batch_size = args.batch_size if args.batch_size else min(256, len(demos))
    cfg = il.IlBatchConfig(batch_size=batch_size, lr=args.lr, shuffle_seed=args.seed)
    log = RunLog({"command": "pretrain", "env": kind, "seed": args.seed,
                  "steps": args.steps, "start_step": start_step, "lr": args.lr,
                  "batch_size": batch_size, "hidden": list(hidden),
                  "eval_every": args.eval_every, "version": __version__})

    best = {"score": -np.inf, "params": policy.params.copy(), "step": start_step}
    step_losses = []
    initial_full = il.full_batch_loss(policy, demos)
    try:
        for step in range(start_step, start_step + args.steps):
            res = il.pretrain(policy, demos, 1, cfg, start_step=step)
            step_losses.append(res.losses[0])
            log.append({"record": "pretrain_step", "step": step, "loss": res.losses[0]})
            if args.eval_every and (step + 1) % args.eval_every == 0:
                ev = _greedy_eval(policy, kind, args.eval_episodes, args.seed)
                log.append({"record": "eval", "step": step, **ev})
                score = ev["success_rate"] if kind == envs.GRIDWORLD else ev["mean_return"]
                if score > best["score"]:
                    best.update(score=score, params=policy.params.copy(), step=step)
        final_full = il.full_batch_loss(policy, demos)
    except TrainingDivergedError as e:
        log.save(out_dir / "pretrain.jsonl")
        if e.last_params is not None:
            nnkit.save_checkpoint(out_dir / "diverged_last.ckpt", spec, e.last_params,
                                  meta={"seed": args.seed, "diverged": True})
        raise

    final_eval = _greedy_eval(policy, kind, args.eval_episodes, args.seed)
    score = final_eval["success_rate"] if kind == envs.GRIDWORLD else final_eval["mean_return"]
    if score > best["score"]:
        best.update(score=score, params=policy.params.copy(),
                    step=start_step + args.steps - 1)

    gap_proxy = final_full - min(step_losses) if step_losses else 0.0
    log.append({"record": "summary", "initial_full_loss": initial_full,
                "final_full_loss": final_full, "loss_gap_proxy": gap_proxy,
                "improved": bool(final_full <= initial_full),
                "final_eval": final_eval, "best_step": best["step"],
                "best_score": None if best["score"] == -np.inf else best["score"]})
    log.save(out_dir / "pretrain.jsonl")
    meta = {"seed": args.seed, "env": kind, "pretrain_steps": start_step + args.steps}
    nnkit.save_checkpoint(out_dir / "final.ckpt", spec, policy.params, meta=meta)
    nnkit.save_checkpoint(out_dir / "best.ckpt", spec, best["params"],
                          meta={**meta, "best_step": best["step"]})
    print("pretrain done: full-batch loss %.4f -> %.4f; eval %s; checkpoints in %s"
          % (initial_full, final_full, final_eval, out_dir))
    if final_full > initial_full:
        print("warning: final full-batch loss exceeds the initial one")
    return EXIT_OK


# -- finetune ---------------------------------------------------------------------

def _reject_unknown(d, allowed, where):
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError("unknown %s config keys: %s (allowed: %s)"
                          % (where, ", ".join(sorted(unknown)), ", ".join(sorted(allowed))))


def load_finetune_config(path=None, overrides=None):
    raw = {}
    if path is not None:
        p = resolve_out(path)
        if not p.exists():
            raise UsageError("config file not found: %s" % p)
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError("config file %s is not valid JSON: %s" % (p, e)) from e
        if not isinstance(raw, dict):
            raise ConfigError("config file %s must hold a JSON object" % p)
    _reject_unknown(raw, FINETUNE_KEYS, "finetune")
    _reject_unknown(raw.get("rl", {}), RL_KEYS, "rl")
    _reject_unknown(raw.get("il", {}), IL_KEYS, "il")
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    return raw


def build_configs(raw, demos_len):
    env_kind = check_env_kind(raw.get("env", envs.POINTMASS))
    rl_raw = dict(raw.get("rl", {}))
    rl_raw.setdefault("steps_per_batch", DEFAULT_STEPS_PER_BATCH[env_kind])
    rl_cfg = rl.RlConfig(**rl_raw)
    il_raw = dict(raw.get("il", {}))
    il_raw.setdefault("batch_size", min(256, demos_len) if demos_len else 64)
    il_cfg = il.IlBatchConfig(lr=float(raw.get("alpha_il", 1e-3)), **il_raw)
    icfg = interleave.InterleaveConfig(
        mode=raw.get("mode", "full_net_surgery"),
        m=parse_m(raw.get("m", 5)),
        alpha_il=float(raw.get("alpha_il", 1e-3)),
        alpha_rl=float(raw.get("alpha_rl", 3e-3)),
        bc_reg_weight=float(raw.get("bc_reg_weight", 0.0)),
    )
    icfg.validate()
    rl_cfg.validate()
    return env_kind, icfg, rl_cfg, il_cfg


def apply_exploration_floor(policy, floor):
    """Raise collapsed log_std entries so the fine-tuning policy explores.

    Behavior cloning on clean demos drives the learned log_std toward its
    clamp; RL fine-tuning needs some action noise back, so the harness lifts
    log_std to at least `floor` before handing the policy to the engine.
    """
    if floor is None:
        return policy
    _, _, log_std = nnkit.unpack_params(policy.spec, policy.params)
    np.clip(log_std, floor, None, out=log_std)
    return policy


def cmd_finetune(args):
    policy = nnkit.load_policy(resolve_out(args.checkpoint))
    demos = envs.DemoDataset.load(resolve_out(args.demos)) if args.demos else None
    overrides = {"mode": args.mode, "m": parse_m(args.m) if args.m else None,
                 "alpha_il": args.alpha_il, "alpha_rl": args.alpha_rl,
                 "bc_reg_weight": args.bc_reg_weight,
                 "budget_env_steps": args.budget, "seed": args.seed, "env": args.env,
                 "exploration_floor": args.exploration_floor}
    raw = load_finetune_config(args.config, overrides)
    env_kind, icfg, rl_cfg, il_cfg = build_configs(raw, len(demos) if demos else 0)
    seed = int(raw.get("seed", 0))
    budget = int(raw.get("budget_env_steps", 50_000))
    floor = raw.get("exploration_floor", -1.0)
    floor = None if floor in (None, "none") else float(floor)
    apply_exploration_floor(policy, floor)
    out_dir = resolve_out(args.out)

    try:
        result, log = interleave.run_inril(policy, demos, env_kind, icfg, rl_cfg,
                                           il_cfg, budget, seed)
    except TrainingDivergedError as e:
        if e.run_log is not None:
            e.run_log.save(out_dir / "run.jsonl")
        for i, params in enumerate(e.last_params or []):
            name = "policy" if len(e.last_params) == 1 else ("base", "residual")[i]
            spec = policy.spec if name in ("policy", "base") else nnkit.MlpSpec(
                (policy.obs_dim, *icfg.residual_hidden, policy.action_dim))
            if params.size == spec.n_params():
                nnkit.save_checkpoint(out_dir / ("diverged_last_%s.ckpt" % name),
                                      spec, params, meta={"diverged": True})
        raise

    # resolved config goes into the header copy we persist
    log.header["resolved_config"] = {
        "mode": icfg.mode, "m": icfg.m, "alpha_il": icfg.alpha_il,
        "alpha_rl": icfg.alpha_rl, "bc_reg_weight": icfg.bc_reg_weight,
        "budget_env_steps": budget, "seed": seed, "env": env_kind,
        "exploration_floor": floor,
        "rl": {k: getattr(rl_cfg, k) for k in sorted(RL_KEYS)},
        "il": {"batch_size": il_cfg.batch_size, "shuffle_seed": il_cfg.shuffle_seed},
        "version": __version__,
    }

    meta = {"seed": seed, "env": env_kind, "mode": icfg.mode}
    if icfg.mode == "network_separation":
        nnkit.save_checkpoint(out_dir / "final_base.ckpt", result.base.spec,
                              result.base.params, meta=meta)
        nnkit.save_checkpoint(out_dir / "final_residual.ckpt", result.residual.spec,
                              result.residual.params, meta=meta)
        final_eval = _greedy_eval(interleave.ResidualAgent(result), env_kind, 100, seed)
    else:
        nnkit.save_checkpoint(out_dir / "final.ckpt", result.spec, result.params, meta=meta)
        final_eval = _greedy_eval(result, env_kind, 100, seed)

    best_eval = None
    best_cycle = None
    snap = log.best_snapshot
    if snap is not None:
        best_cycle = snap["cycle"]
        if icfg.mode == "network_separation":
            pair = interleave.ResidualPolicyPair(
                nnkit.GaussianMlpPolicy(result.base.spec, snap["params"]["base"]),
                nnkit.GaussianMlpPolicy(result.residual.spec, snap["params"]["residual"]),
                scale=result.scale)
            nnkit.save_checkpoint(out_dir / "best_base.ckpt", pair.base.spec,
                                  pair.base.params, meta={**meta, "best_cycle": best_cycle})
            nnkit.save_checkpoint(out_dir / "best_residual.ckpt", pair.residual.spec,
                                  pair.residual.params, meta={**meta, "best_cycle": best_cycle})
            best_eval = _greedy_eval(interleave.ResidualAgent(pair), env_kind, 100, seed)
        else:
            best_pol = nnkit.GaussianMlpPolicy(result.spec, snap["params"]["policy"])
            nnkit.save_checkpoint(out_dir / "best.ckpt", best_pol.spec, best_pol.params,
                                  meta={**meta, "best_cycle": best_cycle})
            best_eval = _greedy_eval(best_pol, env_kind, 100, seed)

    log.append({"record": "summary",
                "final_checkpoint_eval": final_eval,
                "best_checkpoint_eval": best_eval,
                "best_cycle": best_cycle,
                "cycles": len(log.cycles())})
    log.save(out_dir / "run.jsonl")
    print("finetune %s (m=%s) done: %d cycles; final-checkpoint eval %s%s; outputs in %s"
          % (icfg.mode, icfg.m, len(log.cycles()), final_eval,
             "" if best_eval is None else "; best-checkpoint (cycle %d) eval %s"
             % (best_cycle, best_eval), out_dir))
    return EXIT_OK


# -- sweep-m ----------------------------------------------------------------------

def parse_m_list(text):
    values = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        values.append("infinity" if tok in ("infinity", "inf") else parse_m(tok))
    return tuple(values)


def cmd_sweep_m(args):
    policy = nnkit.load_policy(resolve_out(args.checkpoint))
    demos = envs.DemoDataset.load(resolve_out(args.demos))
    kind = check_env_kind(args.env if args.env else demos.meta.get("env"))
    spec = sweep.SweepSpec(
        m_values=parse_m_list(args.m),
        seeds=tuple(int(s) for s in args.seeds.split(",")),
        budget=args.budget,
        env=kind,
        modes=tuple(args.modes.split(",")),
    )
    base_cfg = interleave.InterleaveConfig(alpha_il=args.alpha_il, alpha_rl=args.alpha_rl)
    rl_cfg = rl.RlConfig(steps_per_batch=args.steps_per_batch
                         if args.steps_per_batch else DEFAULT_STEPS_PER_BATCH[kind],
                         lr=args.alpha_rl)
    il_cfg = il.IlBatchConfig(batch_size=min(256, len(demos)), lr=args.alpha_il)
    out_dir = resolve_out(args.out)
    rows, log_paths = sweep.run_sweep(spec, policy, demos, out_dir, base_cfg, rl_cfg, il_cfg)
    best = max((r for r in rows if r.get("final_return") is not None),
               key=lambda r: r["final_return"], default=None)
    for row in rows:
        marker = " <- best final return" if best is not None and row is best else ""
        print("%-34s final_return=%-10s final_il_loss=%-10s double_descent=%s%s"
              % (row["run"],
                 "-" if row["final_return"] is None else "%.3f" % row["final_return"],
                 "-" if row["final_il_loss"] is None else "%.4f" % row["final_il_loss"],
                 row["double_descent"], marker))
        if row["error"]:
            print("    error: %s" % row["error"])
    print("summary: %s (%d runs)" % (out_dir / "summary.csv", len(rows)))
    return EXIT_OK


# -- theory-check -------------------------------------------------------------------

def cmd_theory_check(args):
    checks = theory.run_check_suite(n_seeds=args.seeds)
    out = resolve_out(args.report) if args.report else None
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w") as f:
            for c in checks:
                f.write(json.dumps({k: c[k] for k in ("name", "lhs", "rhs", "passed", "margin")},
                                   sort_keys=True) + "\n")
    width = max(len(c["name"]) for c in checks)
    for c in checks:
        print("%-*s  %s  lhs=%-12.5g rhs=%-12.5g margin=%.5g"
              % (width, c["name"], "PASS" if c["passed"] else "FAIL",
                 c["lhs"], c["rhs"], c["margin"]))
    # realized intra-cycle gradient drift, for reference against the delta slack
    for m in (1, 4):
        pair = theory.random_pair(0, noise=False)
        consts = theory.constants_for_pair(pair, 0.2, 0.15)
        trace = theory.run_schedule(pair, "inril", m, 40, consts, seed=0)
        print("info: implied intra-cycle delta (m=%d sample run): %.4f"
              % (m, theory.implied_delta(trace)))
    failed = [c for c in checks if not c["passed"]]
    print("%d/%d checks passed" % (len(checks) - len(failed), len(checks)))
    if failed:
        raise TheoryCheckFailure("%d theory checks failed: %s"
                                 % (len(failed), ", ".join(c["name"] for c in failed[:5])))
    return EXIT_OK


# -- plot ---------------------------------------------------------------------------

def cmd_plot(args):
    named_logs = []
    for path in args.logs:
        p = resolve_out(path)
        named_logs.append((Path(path).stem, RunLog.load(p)))
    out_dir = resolve_out(args.out)
    csv_path = write_tidy_csv(named_logs, out_dir / "curves.csv")
    written = render_plots(named_logs, out_dir, window=args.smooth_window,
                           polyorder=args.smooth_polyorder)
    print("wrote %s and %s" % (csv_path, ", ".join(str(w) for w in written)))
    return EXIT_OK


# -- entry point ----------------------------------------------------------------------

def build_parser():
    parser = Parser(prog="rlweave",
                    description="Interleaved imitation/reinforcement fine-tuning harness")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-demos", help="generate an expert demonstration file")
    p.add_argument("--env", required=True)
    p.add_argument("--n", type=int, default=None, help="trajectories (default 20 grid / 50 pointmass)")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_demos)

    p = sub.add_parser("pretrain", help="behavior-clone a warm-start policy")
    p.add_argument("--demos", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--env", default=None)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", default="32,32")
    p.add_argument("--eval-every", type=int, default=200)
    p.add_argument("--eval-episodes", type=int, default=100)
    p.add_argument("--resume-from", default=None)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="run one interleaved fine-tuning schedule")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--demos", default=None)
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", default=None, choices=interleave.MODES)
    p.add_argument("--m", default=None)
    p.add_argument("--alpha-il", type=float, default=None)
    p.add_argument("--alpha-rl", type=float, default=None)
    p.add_argument("--bc-reg-weight", type=float, default=None)
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--env", default=None)
    p.add_argument("--exploration-floor", default=None,
                   help="minimum log_std at finetune start (default -1.0; 'none' disables)")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("sweep-m", help="grid over interleaving ratios, modes, seeds")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--demos", required=True)
    p.add_argument("--env", default=None)
    p.add_argument("--m", default="1,3,5,10,15,infinity")
    p.add_argument("--seeds", default="0")
    p.add_argument("--budget", type=int, default=50_000)
    p.add_argument("--modes", default="full_net_surgery")
    p.add_argument("--alpha-il", type=float, default=1e-3)
    p.add_argument("--alpha-rl", type=float, default=3e-3)
    p.add_argument("--steps-per-batch", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep_m)

    p = sub.add_parser("theory-check", help="verify the step-size/ratio analysis numerically")
    p.add_argument("--seeds", type=int, default=25)
    p.add_argument("--report", default=None, help="write a machine-readable JSONL report here")
    p.set_defaults(func=cmd_theory_check)

    p = sub.add_parser("plot", help="render curves and a tidy CSV from run logs")
    p.add_argument("--logs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--smooth-window", type=int, default=11)
    p.add_argument("--smooth-polyorder", type=int, default=3)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (TrainingDivergedError, BudgetExceededError) as e:
        print("error: %s" % e, file=sys.stderr)
        return EXIT_DIVERGED
    except TheoryCheckFailure as e:
        print("error: %s" % e, file=sys.stderr)
        return EXIT_THEORY
    except ConfigError as e:
        print("error: %s" % e, file=sys.stderr)
        return EXIT_VALIDATION
    except UsageError as e:
        print("error: %s" % e, file=sys.stderr)
        return EXIT_USAGE
    except RlweaveError as e:
        print("error: %s" % e, file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
