"""Interleaved fine-tuning engine: 1:m scheduling with gradient separation.

Each cycle takes one imitation step and then m(t) policy-gradient updates.
Modes:
    full_net_surgery    imitation step uses the dual-cone combination of the
                        IL gradient and the RL gradient re-estimated on the
                        most recent rollout batch
    full_net_naive      imitation step applies the raw IL gradient
    network_separation  IL steps update a base policy, RL updates a residual
                        policy whose scaled output is added to the base action
    rl_only             plain RL loop; IL loss is logged, never applied
    il_only             imitation steps only, no environment interaction
    bc_loss_reg         no interleaving; every RL update descends
                        grad(L_RL) + w * grad(L_IL)

RL updates draw their seeds from (run_seed, update_index) only, so modes
that skip or add imitation work cannot perturb the rollout RNG streams:
rl_only here is bit-identical to rl.run_rl_loop.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import il as il_mod
from . import nnkit, rl
from .envs import make_env
from .errors import (ConfigError, NumericError, ShapeError,
                     TrainingDivergedError, UsageError)
from .runlog import RunLog

MODES = ("full_net_surgery", "full_net_naive", "network_separation",
         "rl_only", "il_only", "bc_loss_reg")

STREAM_SURGERY = 303
STREAM_VALUE_INIT = 404
STREAM_RESIDUAL_INIT = 505

ADAPTIVE_M_MAX = 50


@dataclass
class InterleaveConfig:
    mode: str = "full_net_surgery"
    m: object = 5  # positive int, or the string "adaptive"
    alpha_il: float = 1e-3
    alpha_rl: float = 3e-3
    bc_reg_weight: float = 0.0
    adaptive_floor: int = 1
    fresh_rl_grad_for_surgery: bool = False
    residual_scale: float = 0.1
    residual_hidden: tuple = (16,)
    adaptive_constants: object = None  # needs c_il, c_rl, l_il, l_rl, sigma_sq_il, n_il
    ema_window: int = 20

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError("unknown mode %r (choices: %s)" % (self.mode, ", ".join(MODES)))
        if self.m != "adaptive":
            if not isinstance(self.m, (int, np.integer)) or self.m < 1:
                raise ConfigError("m must be a positive integer or 'adaptive', got %r" % (self.m,))
        if self.bc_reg_weight > 0 and self.mode != "bc_loss_reg":
            raise ConfigError("bc_reg_weight > 0 is only meaningful in bc_loss_reg mode")
        if self.bc_reg_weight < 0:
            raise ConfigError("bc_reg_weight must be nonnegative")
        if self.alpha_il < 0 or self.alpha_rl < 0:
            raise ConfigError("learning rates must be nonnegative")
        if self.adaptive_floor < 1:
            raise ConfigError("adaptive_floor must be >= 1")
        if self.m == "adaptive" and self.mode == "network_separation":
            # base and residual gradients live in different parameter spaces,
            # so the alignment the adaptive rule needs is undefined
            raise ConfigError("adaptive m is not supported with network_separation")


@dataclass
class ScheduleState:
    """Append-only bookkeeping consumed by the adaptive-ratio rule."""

    cycle: int = 0
    updates_done: int = 0
    rho_history: list = field(default_factory=list)    # (cycle, rho)
    grad_norms: list = field(default_factory=list)     # (|g_il|, |g_rl|)
    m_history: list = field(default_factory=list)


def measure_alignment(g_il: np.ndarray, g_rl: np.ndarray) -> float:
    """rho = -cos(g_il, g_rl); 0 when either norm is below 1e-12.

    Positive rho means the gradients oppose each other; -1 means fully
    aligned. Invariant to positive rescaling of either argument.
    """
    if g_il.shape != g_rl.shape:
        raise ShapeError("gradient lengths differ: %d vs %d" % (g_il.size, g_rl.size))
    n_il_sq = float(g_il @ g_il)
    n_rl_sq = float(g_rl @ g_rl)
    if n_il_sq < 1e-24 or n_rl_sq < 1e-24:
        return 0.0
    # sqrt of the product keeps rho(g, g) == -1 exact (sqrt(x*x) == x in IEEE)
    rho = -float(g_il @ g_rl) / np.sqrt(n_il_sq * n_rl_sq)
    return float(np.clip(rho, -1.0, 1.0))


def dual_cone_combine(g_il: np.ndarray, g_rl: np.ndarray) -> np.ndarray:
    """Conflict-free combination of two gradients.

    Non-conflicting pairs (<g_il, g_rl> >= 0) pass through as the exact sum.
    Conflicting pairs are each projected onto the orthogonal complement of
    the other (both against the originals, so order does not matter) and
    summed; the result has nonnegative inner product with both inputs.
    """
    if g_il.shape != g_rl.shape:
        raise ShapeError("gradient lengths differ: %d vs %d" % (g_il.size, g_rl.size))
    dot = float(g_il @ g_rl)
    if dot >= 0.0:
        return g_il + g_rl
    g_il_proj = g_il - (dot / float(g_rl @ g_rl)) * g_rl
    g_rl_proj = g_rl - (dot / float(g_il @ g_il)) * g_il
    return g_il_proj + g_rl_proj


def _ema(values, window):
    alpha = 2.0 / (window + 1.0)
    acc = values[0]
    for v in values[1:]:
        acc = alpha * v + (1.0 - alpha) * acc
    return acc


def adaptive_m(state: ScheduleState, constants) -> int:
    """Closed-form ratio: sqrt(|g_rl|^2 / (rho*|g_il|*|g_rl| - noise cost)).

    Norms and rho are EMA-smoothed over the recent history; a nonpositive
    denominator (aligned gradients, or noise dominating) falls back to the
    configured floor. Result is rounded and clamped to [1, ADAPTIVE_M_MAX].
    """
    if not state.rho_history or not state.grad_norms:
        raise UsageError("adaptive_m needs at least one recorded (rho, grad norms) entry")
    window = getattr(constants, "ema_window", 20)
    rho = _ema([r for _, r in state.rho_history], window)
    g_il = _ema([g for g, _ in state.grad_norms], window)
    g_rl = _ema([g for _, g in state.grad_norms], window)
    noise = (constants.c_il * constants.l_rl * constants.sigma_sq_il
             / (2.0 * constants.l_il ** 2 * constants.n_il))
    denom = rho * g_il * g_rl - noise
    floor = getattr(constants, "adaptive_floor", 1)
    if denom <= 0.0:
        return int(floor)
    m = np.sqrt(g_rl * g_rl / denom)
    return int(np.clip(round(m), 1, ADAPTIVE_M_MAX))


def balance_equation_m(rho, g_il_norm, g_rl_norm, constants):
    """The alternative ratio from equating per-cycle progress terms (logged only)."""
    numer = (constants.c_il / constants.l_il) * rho * g_il_norm * g_rl_norm + (
        constants.l_rl * constants.c_il ** 2 * constants.sigma_sq_il
        / (2.0 * constants.l_il ** 2 * constants.n_il))
    denom = (constants.c_rl * (1.0 - constants.c_rl / 2.0) / constants.l_rl) * g_rl_norm ** 2
    if denom <= 0.0:
        return None
    return float(numer / denom)


class ResidualPolicyPair:
    """Base policy plus a small residual; action = base_mean + scale * residual.

    The residual's final layer starts at zero so the initial composite mean
    equals the base policy's. IL steps may only touch `base`, RL updates
    only `residual`; the two parameter vectors are disjoint by construction.
    """

    def __init__(self, base: nnkit.GaussianMlpPolicy, residual: nnkit.GaussianMlpPolicy,
                 scale: float = 0.1):
        if residual.obs_dim != base.obs_dim or residual.action_dim != base.action_dim:
            raise ConfigError("residual policy dimensions must match the base policy")
        self.base = base
        self.residual = residual
        self.scale = float(scale)

    @classmethod
    def create(cls, base: nnkit.GaussianMlpPolicy, seed, hidden=(16,), scale=0.1,
               init_log_std=-1.0):
        spec = nnkit.MlpSpec((base.obs_dim, *hidden, base.action_dim))
        params = nnkit.init_params(spec, seed, init_log_std=init_log_std)
        residual = nnkit.GaussianMlpPolicy(spec, params)
        w, b, _ = nnkit.unpack_params(residual.spec, residual.params)
        w[-1][:] = 0.0
        b[-1][:] = 0.0
        return cls(base, residual, scale=scale)

    def composite_mean(self, obs):
        base_mean, _ = self.base.forward(obs)
        res_mean, _ = self.residual.forward(obs)
        return base_mean + self.scale * res_mean


class ResidualAgent:
    """Rollout adapter: residual samples are the trained actions."""

    def __init__(self, pair: ResidualPolicyPair):
        self.pair = pair

    def act(self, obs, rng):
        res_action, logp = self.pair.residual.sample(obs, rng)
        base_mean, _ = self.pair.base.forward(obs)
        return base_mean + self.pair.scale * res_action, res_action, logp

    def act_greedy(self, obs):
        return self.pair.composite_mean(obs)


def param_hash(params: np.ndarray) -> str:
    return hashlib.sha256(params.tobytes()).hexdigest()[:16]


def make_default_valuenet(obs_dim, run_seed) -> nnkit.ValueMlp:
    spec = nnkit.MlpSpec((obs_dim, 64, 1), head="scalar_value")
    return nnkit.ValueMlp.create(spec, (int(run_seed), STREAM_VALUE_INIT))


def _check_divergence(il_loss, trainables, snapshot, log):
    bad = il_loss is not None and (not np.isfinite(il_loss) or il_loss > il_mod.DIVERGENCE_LOSS)
    for p in trainables:
        if not np.all(np.isfinite(p.params)):
            bad = True
    if bad:
        raise TrainingDivergedError("training diverged (il_loss=%r)" % (il_loss,),
                                    last_params=snapshot, run_log=log)


def run_inril(pretrained: nnkit.GaussianMlpPolicy, demos, env_kind,
              cfg: InterleaveConfig, rl_cfg: rl.RlConfig, il_cfg: il_mod.IlBatchConfig,
              budget_env_steps, seed, env_kwargs=None, valuenet=None,
              record_param_hashes=False):
    """Run one fine-tuning schedule; returns (policy_or_pair, RunLog).

    Cycles are [1 IL step, m(t) RL updates] (degenerate for the rl_only /
    il_only / bc_loss_reg comparison modes). The loop stops when the next
    cycle would not fit in budget_env_steps; each RL update consumes exactly
    rl_cfg.steps_per_batch environment steps, IL steps consume none.
    """
    cfg.validate()
    rl_cfg = dataclasses.replace(rl_cfg, lr=cfg.alpha_rl)  # alpha_rl is authoritative
    rl_cfg.validate()
    if demos is not None:
        il_cfg.validate(len(demos))
    elif cfg.mode != "rl_only":
        raise UsageError("mode %s requires demonstrations" % cfg.mode)

    run_seed = int(seed)
    mode = cfg.mode
    steps_per_update = rl_cfg.steps_per_batch
    interleaved = mode in ("full_net_surgery", "full_net_naive", "network_separation")

    if mode == "network_separation":
        pair = ResidualPolicyPair.create(pretrained.copy(), (run_seed, STREAM_RESIDUAL_INIT),
                                         hidden=cfg.residual_hidden, scale=cfg.residual_scale)
        il_policy, rl_policy = pair.base, pair.residual
        agent = ResidualAgent(pair)
        result = pair
    else:
        policy = pretrained.copy()
        il_policy = rl_policy = policy
        agent = rl.PolicyAgent(policy)
        result = policy

    if valuenet is None:
        valuenet = make_default_valuenet(pretrained.obs_dim, run_seed)

    if mode != "il_only" and budget_env_steps < steps_per_update:
        raise UsageError("budget %d is smaller than one RL update (%d env steps)"
                         % (budget_env_steps, steps_per_update))

    log = RunLog({
        "mode": mode, "m": cfg.m, "alpha_il": cfg.alpha_il, "alpha_rl": cfg.alpha_rl,
        "bc_reg_weight": cfg.bc_reg_weight, "env": env_kind, "seed": run_seed,
        "budget_env_steps": int(budget_env_steps),
        "steps_per_update": steps_per_update,
    })
    log.best_snapshot = None  # in-memory only; the harness persists it as best.ckpt
    state = ScheduleState()
    env_steps = 0
    rl_updates = 0
    last_batch = None

    def fixed_m():
        if mode in ("rl_only", "bc_loss_reg"):
            return 1
        if mode == "il_only":
            return 0
        return None if cfg.m == "adaptive" else int(cfg.m)

    def rl_grad_estimate():
        # gradient of the clipped surrogate at current params, on either the
        # most recent batch (default) or a freshly collected one
        nonlocal env_steps, last_batch
        if cfg.fresh_rl_grad_for_surgery:
            batch = rl.collect_rollouts(agent, env_kind, rl_cfg,
                                        (run_seed, STREAM_SURGERY, state.cycle),
                                        env_kwargs=env_kwargs)
            rl.compute_gae(batch, valuenet, rl_cfg)
            env_steps += len(batch)
            last_batch = batch
        if last_batch is None:
            return None, None
        loss, grad = rl.rl_loss_and_grad(rl_policy, last_batch, rl_cfg)
        return loss, grad

    n_cycles_il_only = (budget_env_steps // steps_per_update) if mode == "il_only" else None

    while True:
        t = state.cycle
        if mode == "il_only":
            if t >= n_cycles_il_only:
                break
        # decide this cycle's m before consuming budget
        if interleaved and cfg.m == "adaptive":
            if state.rho_history:
                consts = cfg.adaptive_constants
                if consts is None:
                    consts = _ZeroNoiseConstants(cfg.adaptive_floor, cfg.ema_window)
                m_t = adaptive_m(state, consts)
            else:
                m_t = cfg.adaptive_floor
        else:
            m_t = fixed_m()
        cycle_cost = m_t * steps_per_update
        if mode != "il_only" and env_steps + cycle_cost > budget_env_steps:
            break

        record = {"record": "cycle", "cycle": t, "mode": mode, "m_used": m_t,
                  "update_kinds": []}
        rho = None
        gnorm_il = None
        snapshot = [p.params.copy() for p in {id(il_policy): il_policy,
                                              id(rl_policy): rl_policy}.values()]
        il_full_loss = il_mod.full_batch_loss(il_policy, demos) if demos is not None else None

        try:
            if interleaved or mode == "il_only":
                _, g_il = il_mod.il_loss_and_grad(il_policy, demos, il_cfg, t)
                gnorm_il = float(np.linalg.norm(g_il))
                step_dir = g_il
                want_alignment = interleaved and (
                    mode == "full_net_surgery"
                    or (cfg.m == "adaptive" and mode != "network_separation"))
                if want_alignment:
                    _, g_rl_est = rl_grad_estimate()
                    if g_rl_est is not None:
                        rho = measure_alignment(g_il, g_rl_est)
                        state.rho_history.append((t, rho))
                        state.grad_norms.append((gnorm_il, float(np.linalg.norm(g_rl_est))))
                        if mode == "full_net_surgery":
                            step_dir = dual_cone_combine(g_il, g_rl_est)
                il_policy.params = nnkit.axpy_update(il_policy.params, step_dir, cfg.alpha_il)
                il_policy.clamp_log_std()
                state.updates_done += 1
                record["update_kinds"].append("il")
                if record_param_hashes:
                    record["hash_il_policy_after_il"] = param_hash(il_policy.params)
                    record["hash_rl_policy_after_il"] = param_hash(rl_policy.params)

            # RL updates
            cycle_returns, cycle_success, cycle_gnorms = [], [], []
            hashes_il_after_rl, hashes_rl_after_rl = [], []
            for _ in range(m_t):
                if mode == "bc_loss_reg":
                    stats, batch = _bc_reg_update(rl_policy, valuenet, env_kind, rl_cfg, il_cfg,
                                                  cfg, demos, run_seed, rl_updates)
                else:
                    stats, batch = rl.rl_update_cycle(rl_policy, valuenet, env_kind, rl_cfg,
                                                      rl.update_seed(run_seed, rl_updates),
                                                      agent=agent, env_kwargs=env_kwargs)
                last_batch = batch
                rl_updates += 1
                state.updates_done += 1
                env_steps += stats["env_steps"]
                record["update_kinds"].append("rl")
                if stats["return_mean"] is not None:
                    cycle_returns.append(stats["return_mean"])
                    cycle_success.append(stats["success_rate"])
                cycle_gnorms.append(stats["grad_norm_rl"])
                if record_param_hashes:
                    hashes_il_after_rl.append(param_hash(il_policy.params))
                    hashes_rl_after_rl.append(param_hash(rl_policy.params))
        except NumericError as e:
            raise TrainingDivergedError("training diverged at cycle %d: %s" % (t, e),
                                        last_params=snapshot, run_log=log) from e

        record.update({
            "env_steps": env_steps,
            "updates": state.updates_done,
            "il_loss": il_full_loss,
            "rho": rho,
            "gnorm_il": gnorm_il,
            "gnorm_rl": float(np.mean(cycle_gnorms)) if cycle_gnorms else None,
            "return_mean": float(np.mean(cycle_returns)) if cycle_returns else None,
            "success_rate": float(np.mean(cycle_success)) if cycle_success else None,
        })
        if cfg.m == "adaptive" and cfg.adaptive_constants is not None and rho is not None:
            record["m_balance"] = balance_equation_m(rho, gnorm_il,
                                                     state.grad_norms[-1][1],
                                                     cfg.adaptive_constants)
        if record_param_hashes:
            record["hashes_il_policy_after_rl"] = hashes_il_after_rl
            record["hashes_rl_policy_after_rl"] = hashes_rl_after_rl
        state.m_history.append(m_t)
        log.append(record)
        metric = record["success_rate"] if record["success_rate"] is not None \
            else record["return_mean"]
        if metric is not None and (log.best_snapshot is None
                                   or metric > log.best_snapshot["metric"]):
            if mode == "network_separation":
                best = {"base": il_policy.params.copy(), "residual": rl_policy.params.copy()}
            else:
                best = {"policy": rl_policy.params.copy()}
            log.best_snapshot = {"cycle": t, "metric": metric, "params": best}
        state.cycle += 1

        current_il_loss = il_mod.full_batch_loss(il_policy, demos) if demos is not None else None
        _check_divergence(current_il_loss, [il_policy, rl_policy], snapshot, log)

        if mode != "il_only" and env_steps >= budget_env_steps:
            break
        if mode != "il_only" and budget_env_steps - env_steps < steps_per_update:
            break

    if state.cycle == 0:
        raise UsageError("budget %d did not allow a single cycle" % budget_env_steps)
    return result, log


class _ZeroNoiseConstants:
    """Fallback constants for adaptive m on MDP runs: zero noise cost."""

    def __init__(self, floor, ema_window):
        self.c_il = 1.0
        self.c_rl = 0.5
        self.l_il = 1.0
        self.l_rl = 1.0
        self.sigma_sq_il = 0.0
        self.n_il = 1
        self.adaptive_floor = floor
        self.ema_window = ema_window


def _bc_reg_update(policy, valuenet, env_kind, rl_cfg, il_cfg, cfg, demos, run_seed, update_index):
    """One combined-gradient update: grad(L_RL) + bc_reg_weight * grad(L_IL)."""
    agent = rl.PolicyAgent(policy)
    batch = rl.collect_rollouts(agent, env_kind, rl_cfg, rl.update_seed(run_seed, update_index))
    rl.compute_gae(batch, valuenet, rl_cfg)
    rl_loss, g_rl = rl.rl_loss_and_grad(policy, batch, rl_cfg)
    _, g_il = il_mod.il_loss_and_grad(policy, demos, il_cfg, update_index)
    combined = g_rl + cfg.bc_reg_weight * g_il
    policy.params = nnkit.axpy_update(policy.params, combined, rl_cfg.lr)
    policy.clamp_log_std()
    value_losses = rl.fit_value(valuenet, batch, rl_cfg)
    stats = {
        "env_steps": len(batch),
        "surrogate_loss": rl_loss,
        "grad_norm_rl": float(np.linalg.norm(combined)),
        "return_mean": float(np.mean(batch.ep_returns)) if batch.ep_returns else None,
        "success_rate": float(np.mean(batch.ep_successes)) if batch.ep_successes else None,
        "episodes": len(batch.ep_returns),
        "value_loss_first": value_losses[0] if value_losses else None,
        "value_loss_last": value_losses[-1] if value_losses else None,
    }
    return stats, batch
