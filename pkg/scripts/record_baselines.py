#!/usr/bin/env python3
"""Regenerate tests/data/baselines.json.

Runs every seeded regression experiment the test suite asserts against and
records the measured outcomes next to their generating configuration. Run
from the repository root after intentional behavior changes:

    python3 scripts/record_baselines.py
"""

import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from rlweave import envs, il, interleave, nnkit, rl, sweep, theory  # noqa: E402

OUT = Path(__file__).resolve().parents[1] / "tests/data/baselines.json"


def pretrain_policy(env_kind, n_demos, noise, demo_seed, init_seed, steps, lr,
                    env_kwargs=None, hidden=(32, 32)):
    demos = envs.generate_demos(env_kind, n_demos, noise, seed=demo_seed,
                                env_kwargs=env_kwargs)
    spec = nnkit.MlpSpec((demos.obs.shape[1], *hidden, demos.actions.shape[1]))
    policy = nnkit.GaussianMlpPolicy.create(spec, init_seed)
    cfg = il.IlBatchConfig(batch_size=min(256, len(demos)), lr=lr, shuffle_seed=init_seed)
    result = il.pretrain(policy, demos, steps, cfg)
    return demos, policy, result


def record_pretrain_gridworld():
    cfg = {"env": "gridworld", "n_demos": 20, "noise": 0.0, "demo_seed": 0,
           "init_seed": 0, "steps": 2000, "lr": 1e-2, "hidden": [32, 32],
           "eval_episodes": 100, "eval_seed": 0}
    _, policy, result = pretrain_policy("gridworld", 20, 0.0, 0, 0, 2000, 1e-2)
    ret, success = rl.evaluate_policy(policy, envs.GRIDWORLD, 100, seed=0)
    return {"config": cfg, "min_greedy_success": 0.5,
            "recorded": {"greedy_success": success, "mean_return": ret,
                         "final_full_loss": result.final_full_loss}}


def record_pretrain_pointmass():
    cfg = {"env": "pointmass", "n_demos": 50, "noise": 0.05, "demo_seed": 0,
           "init_seed": 0, "steps": 2000, "lr": 1e-2, "hidden": [32, 32],
           "eval_episodes": 100, "eval_seed": 0}
    _, policy, result = pretrain_policy("pointmass", 50, 0.05, 0, 0, 2000, 1e-2)
    ret, success = rl.evaluate_policy(policy, envs.POINTMASS, 100, seed=0)
    return {"config": cfg, "min_mean_return": ret - 2.0,  # slack for cross-platform BLAS
            "recorded": {"greedy_success": success, "mean_return": ret,
                         "final_full_loss": result.final_full_loss}}


def record_pointmass_rl_improvement():
    cfg = {"env": "pointmass", "seeds": [0, 1, 2, 3, 4], "cycles": 50,
           "steps_per_batch": 1024, "lr": 3e-3, "hidden": [32, 32],
           "value_hidden": [64], "compare": "mean of last 5 vs first 5 cycle returns"}
    improved = []
    for seed in cfg["seeds"]:
        pol = nnkit.GaussianMlpPolicy.create(nnkit.MlpSpec((2, 32, 32, 2)), seed)
        vnet = interleave.make_default_valuenet(2, seed)
        stats = rl.run_rl_loop(pol, vnet, envs.POINTMASS,
                               rl.RlConfig(steps_per_batch=1024, lr=3e-3), 50, run_seed=seed)
        rets = [s["return_mean"] for s in stats if s["return_mean"] is not None]
        improved.append(bool(np.mean(rets[-5:]) > np.mean(rets[:5])))
    return {"config": cfg, "min_improved_seeds": 4,
            "recorded": {"improved": improved, "count": sum(improved)}}


def record_rescue():
    cfg = {"env": "gridworld", "env_kwargs": {"n": 9, "goal": [8, 8]},
           "n_demos": 20, "noise": 0.0, "demo_seed": 0, "init_seed": 0,
           "pretrain_steps": 4000, "pretrain_lr": 1e-2,
           "budget_env_steps": 102400, "m": 5, "mode": "full_net_surgery",
           "alpha_il": 1e-3, "alpha_rl": 3e-3, "steps_per_batch": 2048,
           "exploration_floor": -1.0, "seeds": [0, 1, 2],
           "scratch_init_seeds": [1000, 1001, 1002], "eval_episodes": 100}
    kw = {"n": 9, "goal": (8, 8)}
    demos, policy, _ = pretrain_policy("gridworld", 20, 0.0, 0, 0, 4000, 1e-2,
                                       env_kwargs=kw)
    _, pre_success = rl.evaluate_policy(policy, envs.GRIDWORLD, 100, seed=0, env_kwargs=kw)
    rl_cfg = rl.RlConfig(steps_per_batch=2048, lr=3e-3, value_epochs=5)
    il_cfg = il.IlBatchConfig(batch_size=min(256, len(demos)), lr=1e-3, shuffle_seed=0)
    inril_success, scratch_success = [], []
    for seed in cfg["seeds"]:
        warm = policy.copy()
        _, _, ls = nnkit.unpack_params(warm.spec, warm.params)
        np.clip(ls, -1.0, None, out=ls)
        icfg = interleave.InterleaveConfig(mode="full_net_surgery", m=5,
                                           alpha_il=1e-3, alpha_rl=3e-3)
        result, _ = interleave.run_inril(warm, demos, envs.GRIDWORLD, icfg, rl_cfg,
                                         il_cfg, cfg["budget_env_steps"], seed,
                                         env_kwargs=kw)
        _, s1 = rl.evaluate_policy(result, envs.GRIDWORLD, 100, seed=seed, env_kwargs=kw)
        inril_success.append(s1)
        scratch = nnkit.GaussianMlpPolicy.create(nnkit.MlpSpec((2, 32, 32, 2)), 1000 + seed)
        vnet = interleave.make_default_valuenet(2, seed)
        rl.run_rl_loop(scratch, vnet, envs.GRIDWORLD, rl_cfg,
                       cfg["budget_env_steps"] // 2048, run_seed=seed, env_kwargs=kw)
        _, s2 = rl.evaluate_policy(scratch, envs.GRIDWORLD, 100, seed=seed, env_kwargs=kw)
        scratch_success.append(s2)
    return {"config": cfg, "inril_min_success": 0.9, "inril_min_seeds": 2,
            "scratch_max_success": 0.5,
            "recorded": {"pretrained_success": pre_success,
                         "inril_success": inril_success,
                         "scratch_success": scratch_success}}


def record_double_descent():
    cfg = {"env": "pointmass", "n_demos": 5, "noise": 0.3, "demo_seed": 0,
           "init_seed": 0, "pretrain_steps": 2000, "pretrain_lr": 1e-2,
           "budget_env_steps": 256000, "m": 10, "mode": "full_net_surgery",
           "alpha_il": 3e-3, "alpha_rl": 1e-2, "steps_per_batch": 1024,
           "exploration_floor": None, "seeds": [0, 2, 3]}
    demos, policy, _ = pretrain_policy("pointmass", 5, 0.3, 0, 0, 2000, 1e-2)
    rl_cfg = rl.RlConfig(steps_per_batch=1024, lr=1e-2, value_epochs=5)
    il_cfg = il.IlBatchConfig(batch_size=min(256, len(demos)), lr=3e-3, shuffle_seed=0)
    rl_only_final, inril_final, dd_flags = [], [], []
    for seed in cfg["seeds"]:
        finals = {}
        for mode, m in (("rl_only", 1), ("full_net_surgery", 10)):
            icfg = interleave.InterleaveConfig(mode=mode, m=m, alpha_il=3e-3, alpha_rl=1e-2)
            _, log = interleave.run_inril(policy.copy(), demos, envs.POINTMASS, icfg,
                                          rl_cfg, il_cfg, cfg["budget_env_steps"], seed)
            series = [c["il_loss"] for c in log.cycles()]
            finals[mode] = series[-1]
            if mode == "full_net_surgery":
                dd_flags.append(bool(sweep.detect_double_descent(series)))
        rl_only_final.append(finals["rl_only"])
        inril_final.append(finals["full_net_surgery"])
    ratio = float(np.mean(rl_only_final) / np.mean(inril_final))
    return {"config": cfg, "min_mean_final_ratio": 2.0, "min_dd_runs": 1,
            "recorded": {"rl_only_final_il_loss": rl_only_final,
                         "inril_final_il_loss": inril_final,
                         "mean_final_ratio": ratio,
                         "double_descent_flags": dd_flags}}


def record_efficiency_pairs():
    cfg = {"pair": "aligned 1-D quadratic (b_il = b_rl = 1, theta0 = 0)",
           "c_il": 0.9, "c_rl": 0.3, "m": 3, "noise_std": 0.05, "n_batch": 16,
           "epsilon": "max(1e-6, 10x noise floor)", "seeds": list(range(10))}
    a = np.array([[1.0]])
    pair = theory.QuadraticPair(a_il=a, b_il=[1.0], a_rl=a, b_rl=[1.0], theta0=[0.0],
                                noise_std_il=0.05, noise_std_rl=0.05, n_il=16, n_rl=16)
    consts = theory.constants_for_pair(pair, c_il=0.9, c_rl=0.3)
    floor = consts.c_rl * consts.sigma_sq_rl / ((1 - consts.c_rl / 2) * consts.n_rl)
    eps = max(1e-6, floor * 10)
    trace = theory.run_schedule(pair, "inril", 3, 60, consts, seed=123)
    cond = theory.check_theorem2_condition(trace, consts, 3)
    wins = []
    for seed in range(10):
        t_rl, t_inril = theory.empirical_update_counts(pair, consts, 3, eps, seed)
        wins.append(bool(t_inril < t_rl))
    return {"config": cfg, "min_wins": 9,
            "recorded": {"condition_holds": cond["holds"], "condition_margin": cond["margin"],
                         "wins": wins, "count": sum(wins)}}


def main():
    baselines = {
        "pretrain_gridworld_default": record_pretrain_gridworld(),
        "pretrain_pointmass_default": record_pretrain_pointmass(),
        "pointmass_rl_improvement": record_pointmass_rl_improvement(),
        "rescue_sparse_gridworld": record_rescue(),
        "double_descent_pointmass": record_double_descent(),
        "efficiency_paired_runs": record_efficiency_pairs(),
    }
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(baselines, indent=2, sort_keys=True) + "\n")
    print("wrote", OUT)
    for name, entry in baselines.items():
        print("%-28s %s" % (name, json.dumps(entry["recorded"])[:120]))


if __name__ == "__main__":
    main()
