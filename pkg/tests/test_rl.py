import numpy as np
import pytest

from rlweave import envs, nnkit, rl
from rlweave.errors import NumericError, UsageError

from helpers import brute_force_gae, finite_diff_grad, rel_err


def make_policy(seed=0, widths=(2, 16, 2)):
    return nnkit.GaussianMlpPolicy.create(nnkit.MlpSpec(widths), seed)


def make_valuenet(seed=0, widths=(2, 16, 1)):
    return nnkit.ValueMlp.create(nnkit.MlpSpec(widths, head="scalar_value"), seed)


def small_cfg(**kw):
    base = dict(gamma=0.99, gae_lambda=0.95, clip_eps=0.2, lr=3e-3,
                steps_per_batch=128, value_lr=1e-2, value_epochs=3)
    base.update(kw)
    return rl.RlConfig(**base)


def test_collect_exact_step_count_and_accounting():
    batch = rl.collect_rollouts(rl.PolicyAgent(make_policy()), envs.POINTMASS,
                                small_cfg(steps_per_batch=257), seed=0)
    assert len(batch) == 257
    # each done flag closes exactly one completed episode
    assert int(batch.dones.sum()) == len(batch.ep_returns)


def test_collect_deterministic_given_seed():
    pol = make_policy(seed=1)
    cfg = small_cfg()
    a = rl.collect_rollouts(rl.PolicyAgent(pol), envs.GRIDWORLD, cfg, seed=(5, 6))
    b = rl.collect_rollouts(rl.PolicyAgent(pol), envs.GRIDWORLD, cfg, seed=(5, 6))
    for name in ("obs", "actions", "rewards", "dones", "next_obs", "logp_old"):
        assert np.array_equal(getattr(a, name), getattr(b, name)), name


def test_expert_oracle_rollouts_always_succeed():
    env = envs.GridworldEnv()
    returns = []
    for ep in range(1000):
        obs = env.reset((0, ep))
        total = 0.0
        while not env.done:
            tr = env.step(env.expert_action(obs))
            total += tr.reward
            obs = tr.next_obs
        returns.append(total)
    assert np.mean(returns) == 1.0


def collected_batch(seed=0, steps=64, env_kind=envs.POINTMASS):
    pol = make_policy(seed=seed)
    return pol, rl.collect_rollouts(rl.PolicyAgent(pol), env_kind,
                                    small_cfg(steps_per_batch=steps), seed=seed)


def test_gae_lambda_zero_is_td_error():
    _, batch = collected_batch(seed=2)
    vnet = make_valuenet(seed=3)
    cfg = small_cfg(gae_lambda=0.0, normalize_advantages=False)
    rl.compute_gae(batch, vnet, cfg)
    v = vnet.value_batch(batch.obs)
    vn = vnet.value_batch(batch.next_obs)
    td = batch.rewards + np.where(batch.dones, 0.0, cfg.gamma * vn) - v
    assert np.allclose(batch.advantages, td, atol=1e-12)


def test_gae_lambda_one_zero_value_is_return_to_go():
    _, batch = collected_batch(seed=4, steps=96)
    spec = nnkit.MlpSpec((2, 4, 1), head="scalar_value")
    vnet = nnkit.ValueMlp(spec, np.zeros(spec.n_params()))
    cfg = small_cfg(gae_lambda=1.0, normalize_advantages=False)
    rl.compute_gae(batch, vnet, cfg)
    # discounted return-to-go within each episode segment
    expected = np.zeros(len(batch))
    running = 0.0
    for t in range(len(batch) - 1, -1, -1):
        if batch.dones[t]:
            running = batch.rewards[t]
        else:
            running = batch.rewards[t] + cfg.gamma * running
        expected[t] = running
    assert np.allclose(batch.advantages, expected, atol=1e-12)
    assert np.allclose(batch.returns, expected, atol=1e-12)


def test_gae_matches_brute_force_recurrence():
    _, batch = collected_batch(seed=5, steps=80, env_kind=envs.GRIDWORLD)
    vnet = make_valuenet(seed=6)
    cfg = small_cfg(gamma=0.97, gae_lambda=0.9, normalize_advantages=False)
    rl.compute_gae(batch, vnet, cfg)
    slow = brute_force_gae(batch.rewards, vnet.value_batch(batch.obs),
                           vnet.value_batch(batch.next_obs), batch.dones,
                           cfg.gamma, cfg.gae_lambda)
    assert np.allclose(batch.advantages, slow, atol=1e-12)


def test_gae_refuses_double_grading():
    _, batch = collected_batch(seed=7)
    vnet = make_valuenet()
    rl.compute_gae(batch, vnet, small_cfg())
    with pytest.raises(UsageError):
        rl.compute_gae(batch, vnet, small_cfg())


def test_normalized_advantages_moments():
    _, batch = collected_batch(seed=8)
    rl.compute_gae(batch, make_valuenet(seed=9), small_cfg(normalize_advantages=True))
    assert abs(batch.advantages.mean()) <= 1e-6
    assert abs(batch.advantages.std() - 1.0) <= 1e-6


def test_surrogate_loss_at_sampling_point():
    pol, batch = collected_batch(seed=10)
    rl.compute_gae(batch, make_valuenet(seed=11), small_cfg())
    loss, _ = rl.rl_loss_and_grad(pol, batch, small_cfg())
    # ratios are 1, advantages normalized: loss = -mean(A) ~ 0
    assert abs(loss) <= 1e-10


def test_zero_advantages_give_zero_gradient():
    pol, batch = collected_batch(seed=12)
    rl.compute_gae(batch, make_valuenet(seed=13), small_cfg())
    batch.advantages = np.zeros(len(batch))
    loss, grad = rl.rl_loss_and_grad(pol, batch, small_cfg())
    assert loss == 0.0
    assert np.array_equal(grad, np.zeros_like(grad))


def test_surrogate_equals_vanilla_policy_gradient_at_sampling_point():
    pol, batch = collected_batch(seed=14)
    rl.compute_gae(batch, make_valuenet(seed=15), small_cfg())
    _, grad = rl.rl_loss_and_grad(pol, batch, small_cfg())
    weights = -batch.advantages / len(batch)
    _, vanilla = nnkit.log_prob_weighted_grad(pol, batch.obs, batch.actions, weights)
    assert rel_err(grad, vanilla) <= 1e-10


@pytest.mark.parametrize("seed", range(5))
def test_rl_grad_matches_finite_differences(seed):
    rng = np.random.default_rng(700 + seed)
    spec = nnkit.MlpSpec((2, int(rng.integers(4, 8)), 2))
    params = rng.uniform(-0.5, 0.5, spec.n_params())
    params[-2:] = rng.uniform(-1.0, 0.3, 2)
    pol = nnkit.GaussianMlpPolicy(spec, params)
    cfg = small_cfg(steps_per_batch=30)
    batch = rl.collect_rollouts(rl.PolicyAgent(pol), envs.POINTMASS, cfg, seed=seed)
    rl.compute_gae(batch, make_valuenet(seed=seed), cfg)
    _, grad = rl.rl_loss_and_grad(pol, batch, cfg)

    def f(p):
        return rl.rl_loss_and_grad(nnkit.GaussianMlpPolicy(spec, p), batch, cfg)[0]

    fd = finite_diff_grad(f, pol.params, step=1e-5)
    assert rel_err(grad, fd) <= 1e-4


def test_non_finite_ratio_raises_with_diagnostics():
    pol, batch = collected_batch(seed=16)
    rl.compute_gae(batch, make_valuenet(seed=17), small_cfg())
    batch.logp_old[3] = -np.inf
    with pytest.raises(NumericError, match="transition 3"):
        rl.rl_loss_and_grad(pol, batch, small_cfg())


def test_value_fitting_descends():
    _, batch = collected_batch(seed=18)
    vnet = make_valuenet(seed=19)
    cfg = small_cfg(value_epochs=10, value_lr=5e-3)
    rl.compute_gae(batch, vnet, cfg)
    losses = rl.fit_value(vnet, batch, cfg)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_update_cycle_zero_lr_keeps_policy():
    pol = make_policy(seed=20)
    before = pol.params.copy()
    stats, _ = rl.rl_update_cycle(pol, make_valuenet(seed=21), envs.POINTMASS,
                                  small_cfg(lr=0.0), seed=22)
    assert np.array_equal(pol.params, before)
    assert stats["env_steps"] == 128
    assert np.isfinite(stats["grad_norm_rl"])


def test_update_cycle_deterministic():
    results = []
    for _ in range(2):
        pol = make_policy(seed=23)
        vnet = make_valuenet(seed=24)
        stats, _ = rl.rl_update_cycle(pol, vnet, envs.GRIDWORLD,
                                      small_cfg(steps_per_batch=200), seed=25)
        results.append((pol.params.copy(), vnet.params.copy(), stats))
    assert np.array_equal(results[0][0], results[1][0])
    assert np.array_equal(results[0][1], results[1][1])
    assert results[0][2] == results[1][2]


def test_grad_norm_series_finite_over_loop():
    pol = make_policy(seed=26)
    vnet = make_valuenet(seed=27)
    stats = rl.run_rl_loop(pol, vnet, envs.POINTMASS, small_cfg(), 5, run_seed=28)
    assert len(stats) == 5
    assert all(np.isfinite(s["grad_norm_rl"]) for s in stats)


def test_evaluate_policy_deterministic():
    pol = make_policy(seed=29)
    a = rl.evaluate_policy(pol, envs.GRIDWORLD, 20, seed=30)
    b = rl.evaluate_policy(pol, envs.GRIDWORLD, 20, seed=30)
    assert a == b
