"""On-policy policy-gradient estimator: rollouts, GAE, clipped surrogate.

One "RL update" is exactly one gradient step on the clipped surrogate
computed from one fresh batch (no inner epochs), so the interleaving
ratio counts updates the way the cycle-indexed analysis does. At the
sampling point all importance ratios are 1 and the surrogate gradient
reduces to the vanilla policy gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nnkit
from .envs import as_seedseq, make_env
from .errors import ConfigError, NumericError, UsageError

# stream tags keep the independent RNG consumers of a run from colliding
STREAM_ROLLOUT = 101
STREAM_EVAL = 202


@dataclass
class RlConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    lr: float = 3e-3
    steps_per_batch: int = 1024
    value_lr: float = 1e-2
    value_epochs: int = 5
    normalize_advantages: bool = True

    def validate(self):
        if not (0.0 <= self.gamma < 1.0):
            raise ConfigError("gamma must be in [0, 1)")
        if not (0.0 <= self.gae_lambda <= 1.0):
            raise ConfigError("gae_lambda must be in [0, 1]")
        if self.clip_eps <= 0:
            raise ConfigError("clip_eps must be positive")
        if self.lr < 0 or self.value_lr <= 0:
            raise ConfigError("learning rates must be nonnegative (policy) / positive (value)")
        if self.steps_per_batch < 1:
            raise ConfigError("steps_per_batch must be >= 1")
        if self.value_epochs < 0:
            raise ConfigError("value_epochs must be >= 0")


@dataclass
class RolloutBatch:
    """Fixed-size slab of transitions plus per-episode statistics."""

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    next_obs: np.ndarray
    logp_old: np.ndarray
    ep_returns: list = field(default_factory=list)   # completed episodes only
    ep_successes: list = field(default_factory=list)
    advantages: np.ndarray | None = None
    advantages_raw: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __len__(self):
        return self.obs.shape[0]


class PolicyAgent:
    """Adapter: a plain Gaussian policy acting directly in the environment."""

    def __init__(self, policy: nnkit.GaussianMlpPolicy):
        self.policy = policy

    def act(self, obs, rng):
        """Returns (env_action, train_action, logp of train_action)."""
        action, logp = self.policy.sample(obs, rng)
        return action, action, logp

    def act_greedy(self, obs):
        mean, _ = self.policy.forward(obs)
        return mean


def collect_rollouts(agent, env_kind, cfg: RlConfig, seed, env_kwargs=None) -> RolloutBatch:
    """Run episodes until exactly cfg.steps_per_batch transitions are stored.

    The last episode may be truncated mid-flight; GAE later bootstraps it
    with the value of its successor observation. All randomness derives
    from `seed` (action noise and per-episode environment seeds).
    """
    cfg.validate()
    env = make_env(env_kind, **(env_kwargs or {}))
    root = as_seedseq(seed)
    action_ss, episode_ss = root.spawn(2)
    action_rng = np.random.default_rng(action_ss)

    n = cfg.steps_per_batch
    obs_buf = np.zeros((n, env.obs_dim))
    act_buf = np.zeros((n, env.action_dim))
    rew_buf = np.zeros(n)
    done_buf = np.zeros(n, dtype=bool)
    next_buf = np.zeros((n, env.obs_dim))
    logp_buf = np.zeros(n)
    ep_returns, ep_successes = [], []

    t = 0
    while t < n:
        obs = env.reset(episode_ss.spawn(1)[0])
        ep_ret = 0.0
        while not env.done and t < n:
            env_action, train_action, logp = agent.act(obs, action_rng)
            tr = env.step(env_action)
            obs_buf[t] = obs
            act_buf[t] = train_action
            rew_buf[t] = tr.reward
            done_buf[t] = tr.done
            next_buf[t] = tr.next_obs
            logp_buf[t] = logp
            ep_ret += tr.reward
            obs = tr.next_obs
            t += 1
        if env.done:
            ep_returns.append(ep_ret)
            ep_successes.append(bool(env.succeeded))

    return RolloutBatch(obs=obs_buf, actions=act_buf, rewards=rew_buf, dones=done_buf,
                        next_obs=next_buf, logp_old=logp_buf,
                        ep_returns=ep_returns, ep_successes=ep_successes)


def compute_gae(batch: RolloutBatch, valuenet: nnkit.ValueMlp, cfg: RlConfig) -> RolloutBatch:
    """Fill advantages (GAE) and value-fitting targets in place.

    Terminal steps drop the bootstrap; the truncated batch tail keeps it.
    Raw advantages feed `returns = adv + V(s)`; the `advantages` field is
    mean/std-normalized when cfg.normalize_advantages is set.
    """
    if batch.advantages is not None:
        raise UsageError("batch already has advantages")
    values = valuenet.value_batch(batch.obs)
    next_values = valuenet.value_batch(batch.next_obs)
    n = len(batch)
    adv = np.zeros(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        if batch.dones[t]:
            delta = batch.rewards[t] - values[t]
            running = delta
        else:
            delta = batch.rewards[t] + cfg.gamma * next_values[t] - values[t]
            running = delta + cfg.gamma * cfg.gae_lambda * running
        adv[t] = running
    batch.advantages_raw = adv
    batch.returns = adv + values
    if cfg.normalize_advantages:
        batch.advantages = (adv - adv.mean()) / (adv.std() + 1e-8)
    else:
        batch.advantages = adv.copy()
    return batch


def rl_loss_and_grad(policy: nnkit.GaussianMlpPolicy, batch: RolloutBatch, cfg: RlConfig):
    """Clipped-surrogate loss -mean(min(r*A, clip(r)*A)) and its gradient."""
    if batch.advantages is None:
        raise UsageError("batch has no advantages; run compute_gae first")
    logp_new = policy.log_prob(batch.obs, batch.actions)
    ratio = np.exp(logp_new - batch.logp_old)
    if not np.all(np.isfinite(ratio)):
        bad = int(np.argmax(~np.isfinite(ratio)))
        raise NumericError("non-finite importance ratio at transition %d "
                           "(logp_new=%.3g, logp_old=%.3g)"
                           % (bad, logp_new[bad], batch.logp_old[bad]))
    adv = batch.advantages
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv
    loss = -float(np.mean(np.minimum(unclipped, clipped)))

    active = np.where(adv >= 0, ratio < 1.0 + cfg.clip_eps, ratio > 1.0 - cfg.clip_eps)
    weights = -(ratio * adv * active) / len(batch)
    _, grad = nnkit.log_prob_weighted_grad(policy, batch.obs, batch.actions, weights)
    return loss, grad


def value_batch_loss(valuenet, batch):
    loss, _ = nnkit.value_batch_loss_and_grad(valuenet, batch.obs, batch.returns)
    return loss


def fit_value(valuenet: nnkit.ValueMlp, batch: RolloutBatch, cfg: RlConfig):
    """value_epochs full-batch gradient steps on the squared error to returns."""
    losses = []
    for _ in range(cfg.value_epochs):
        loss, grad = nnkit.value_batch_loss_and_grad(valuenet, batch.obs, batch.returns)
        valuenet.params = nnkit.axpy_update(valuenet.params, grad, cfg.value_lr)
        losses.append(loss)
    return losses


def rl_update_cycle(policy: nnkit.GaussianMlpPolicy, valuenet: nnkit.ValueMlp,
                    env_kind, cfg: RlConfig, seed, agent=None, env_kwargs=None):
    """One collect -> GAE -> single policy step -> value fit. Returns (stats, batch).

    `agent` defaults to the policy acting directly; the interleaving engine
    passes a residual-composition agent instead. The gradient step always
    applies to `policy` (the trained network).
    """
    agent = agent if agent is not None else PolicyAgent(policy)
    batch = collect_rollouts(agent, env_kind, cfg, seed, env_kwargs=env_kwargs)
    compute_gae(batch, valuenet, cfg)
    loss, grad = rl_loss_and_grad(policy, batch, cfg)
    policy.params = nnkit.axpy_update(policy.params, grad, cfg.lr)
    policy.clamp_log_std()
    value_losses = fit_value(valuenet, batch, cfg)
    stats = {
        "env_steps": len(batch),
        "surrogate_loss": loss,
        "grad_norm_rl": float(np.linalg.norm(grad)),
        "return_mean": float(np.mean(batch.ep_returns)) if batch.ep_returns else None,
        "success_rate": float(np.mean(batch.ep_successes)) if batch.ep_successes else None,
        "episodes": len(batch.ep_returns),
        "value_loss_first": value_losses[0] if value_losses else None,
        "value_loss_last": value_losses[-1] if value_losses else None,
    }
    return stats, batch


def update_seed(run_seed, update_index):
    """Per-RL-update seed material: independent of any imitation-side RNG."""
    return (int(run_seed), STREAM_ROLLOUT, int(update_index))


def run_rl_loop(policy, valuenet, env_kind, cfg, n_updates, run_seed, env_kwargs=None):
    """Plain RL fine-tuning loop; the rl_only interleave mode must match it bit-exactly."""
    all_stats = []
    for u in range(n_updates):
        stats, _ = rl_update_cycle(policy, valuenet, env_kind, cfg,
                                   update_seed(run_seed, u), env_kwargs=env_kwargs)
        all_stats.append(stats)
    return all_stats


def evaluate_policy(agent_or_policy, env_kind, n_episodes, seed, env_kwargs=None):
    """Greedy (mean-action) evaluation; returns (mean_return, success_rate)."""
    agent = (agent_or_policy if hasattr(agent_or_policy, "act_greedy")
             else PolicyAgent(agent_or_policy))
    env = make_env(env_kind, **(env_kwargs or {}))
    root = as_seedseq((int(seed), STREAM_EVAL) if isinstance(seed, int) else seed)
    episode_seeds = root.spawn(n_episodes)
    returns, successes = [], []
    for ss in episode_seeds:
        obs = env.reset(ss)
        total = 0.0
        while not env.done:
            tr = env.step(agent.act_greedy(obs))
            total += tr.reward
            obs = tr.next_obs
        returns.append(total)
        successes.append(bool(env.succeeded))
    return float(np.mean(returns)), float(np.mean(successes))
