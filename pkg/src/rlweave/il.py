"""Behavior cloning: mini-batch negative log-likelihood over expert demos.

Used both for warm-start pretraining and for the imitation step inside the
interleaved fine-tuning loop. Batch selection is a pure function of
(shuffle_seed, step_index): epoch-wise reshuffles with a documented
generator, remainder pairs dropped within each epoch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nnkit
from .envs import DemoDataset
from .errors import ConfigError, NumericError, TrainingDivergedError, UsageError

DIVERGENCE_LOSS = 1e6


@dataclass
class IlBatchConfig:
    batch_size: int = 64
    lr: float = 1e-2
    shuffle_seed: int = 0

    def validate(self, n_pairs):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.batch_size > n_pairs:
            raise ConfigError("batch_size %d exceeds dataset size %d" % (self.batch_size, n_pairs))
        if self.lr <= 0:
            raise ConfigError("il lr must be positive")


def batch_indices(n_pairs, cfg: IlBatchConfig, step_index):
    """Deterministic mini-batch for a given step: reshuffle once per epoch."""
    per_epoch = n_pairs // cfg.batch_size
    epoch, k = divmod(step_index, per_epoch)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.shuffle_seed, epoch]))
    perm = rng.permutation(n_pairs)
    return perm[k * cfg.batch_size:(k + 1) * cfg.batch_size]


def il_loss_and_grad(policy: nnkit.GaussianMlpPolicy, demos: DemoDataset,
                     cfg: IlBatchConfig, step_index):
    """Mean negative log-likelihood over one mini-batch and its gradient."""
    cfg.validate(len(demos))
    idx = batch_indices(len(demos), cfg, step_index)
    if idx.size == 0:
        raise UsageError("empty imitation batch at step %d" % step_index)
    obs = demos.obs[idx]
    acts = demos.actions[idx]
    weights = np.full(idx.size, -1.0 / idx.size)
    logp, grad = nnkit.log_prob_weighted_grad(policy, obs, acts, weights)
    return float(-np.mean(logp)), grad


def full_batch_loss(policy: nnkit.GaussianMlpPolicy, demos: DemoDataset) -> float:
    """Deterministic NLL over the entire dataset (no batching, no RNG)."""
    return float(-np.mean(policy.log_prob(demos.obs, demos.actions)))


@dataclass
class PretrainResult:
    policy: nnkit.GaussianMlpPolicy
    losses: list
    initial_full_loss: float
    final_full_loss: float
    improved: bool
    loss_gap_proxy: float  # final full-batch loss minus best per-step loss


def pretrain(policy: nnkit.GaussianMlpPolicy, demos: DemoDataset, n_steps,
             cfg: IlBatchConfig, start_step=0, on_step=None) -> PretrainResult:
    """Plain-SGD behavior cloning for n_steps mini-batch updates.

    `on_step(step_index, policy)` is invoked after each update; the harness
    uses it for periodic evaluation and best-checkpoint selection. Raises
    TrainingDivergedError when the loss exceeds DIVERGENCE_LOSS or goes
    non-finite; the exception carries the last finite parameter vector.
    """
    if n_steps < 0:
        raise UsageError("n_steps must be >= 0")
    initial_full = full_batch_loss(policy, demos)
    losses = []
    for step in range(start_step, start_step + n_steps):
        try:
            loss, grad = il_loss_and_grad(policy, demos, cfg, step)
        except NumericError as e:
            raise TrainingDivergedError("imitation loss became non-finite at step %d" % step,
                                        last_params=policy.params.copy()) from e
        if not np.isfinite(loss) or loss > DIVERGENCE_LOSS:
            raise TrainingDivergedError("imitation loss %.3g exceeded %.1g at step %d"
                                        % (loss, DIVERGENCE_LOSS, step),
                                        last_params=policy.params.copy())
        policy.params = nnkit.axpy_update(policy.params, grad, cfg.lr)
        policy.clamp_log_std()
        losses.append(loss)
        if on_step is not None:
            on_step(step, policy)
    final_full = full_batch_loss(policy, demos)
    best_seen = min(losses) if losses else initial_full
    return PretrainResult(policy=policy, losses=losses,
                          initial_full_loss=initial_full, final_full_loss=final_full,
                          improved=final_full <= initial_full,
                          loss_gap_proxy=final_full - best_seen)
