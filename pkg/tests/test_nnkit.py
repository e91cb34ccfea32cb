import numpy as np
import pytest

from rlweave import nnkit
from rlweave.errors import ConfigError, ShapeError

from helpers import finite_diff_grad, rel_err


def make_policy(widths=(2, 8, 2), seed=0, activation="tanh"):
    spec = nnkit.MlpSpec(widths, activation=activation, head="gaussian_policy")
    return nnkit.GaussianMlpPolicy.create(spec, seed)


def test_zero_weight_network_outputs_bias():
    spec = nnkit.MlpSpec((2, 3, 2))
    params = np.zeros(spec.n_params())
    pol = nnkit.GaussianMlpPolicy(spec, params)
    w, b, log_std = nnkit.unpack_params(pol.spec, pol.params)
    b[-1][:] = [0.3, -0.2]
    log_std[:] = -0.5
    mean, std = pol.forward(np.array([1.7, -4.0]))
    assert np.array_equal(mean, [0.3, -0.2])
    assert np.allclose(std, np.exp(-0.5))
    assert np.all(std > 0)


def test_single_unit_tanh_composition():
    spec = nnkit.MlpSpec((1, 1, 1))
    params = np.zeros(spec.n_params())
    pol = nnkit.GaussianMlpPolicy(spec, params)
    w, b, _ = nnkit.unpack_params(pol.spec, pol.params)
    w[0][:] = 1.0
    w[1][:] = 1.0
    mean, _ = pol.forward(np.array([0.5]))
    assert mean[0] == pytest.approx(np.tanh(0.5), abs=1e-15)


def test_forward_deterministic():
    pol = make_policy(seed=3)
    obs = np.array([0.25, -0.5])
    m1, s1 = pol.forward(obs)
    m2, s2 = pol.forward(obs)
    assert np.array_equal(m1, m2) and np.array_equal(s1, s2)


def test_forward_shape_error():
    pol = make_policy()
    with pytest.raises(ShapeError):
        pol.forward(np.zeros(3))


def test_logp_at_mode_unit_std():
    pol = make_policy(seed=1)
    _, _, log_std = nnkit.unpack_params(pol.spec, pol.params)
    log_std[:] = 0.0
    obs = np.array([0.4, 0.1])
    mean, _ = pol.forward(obs)
    logp, grad = nnkit.log_prob_and_grad(pol, obs, mean)
    k = pol.action_dim
    assert logp == pytest.approx(-0.5 * k * np.log(2 * np.pi), abs=1e-12)
    # zero deviation: every mean-path gradient entry is exactly zero
    assert np.array_equal(grad[:-k], np.zeros(pol.params.size - k))
    assert np.allclose(grad[-k:], -1.0)


def test_logp_symmetric_around_mean():
    pol = make_policy(seed=5)
    obs = np.array([-0.3, 0.9])
    mean, _ = pol.forward(obs)
    d = np.array([0.37, -0.11])
    lp_plus = pol.log_prob(obs[None, :], (mean + d)[None, :])[0]
    lp_minus = pol.log_prob(obs[None, :], (mean - d)[None, :])[0]
    assert lp_plus == pytest.approx(lp_minus, abs=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_logp_grad_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    widths = (int(rng.integers(1, 4)), int(rng.integers(3, 7)), int(rng.integers(1, 3)))
    activation = "tanh" if seed % 2 == 0 else "relu"
    spec = nnkit.MlpSpec(widths, activation=activation)
    params = rng.uniform(-0.6, 0.6, spec.n_params())
    params[-spec.output_dim:] = rng.uniform(-1.5, 0.8, spec.output_dim)
    pol = nnkit.GaussianMlpPolicy(spec, params)
    obs = rng.normal(size=spec.input_dim)
    action = rng.normal(size=spec.output_dim)

    _, grad = nnkit.log_prob_and_grad(pol, obs, action)

    def f(p):
        return nnkit.GaussianMlpPolicy(spec, p).log_prob(obs[None, :], action[None, :])[0]

    fd = finite_diff_grad(f, pol.params, step=1e-5)
    assert rel_err(grad, fd) <= 1e-4


def make_valuenet(widths=(3, 6, 1), seed=0):
    spec = nnkit.MlpSpec(widths, head="scalar_value")
    return nnkit.ValueMlp.create(spec, seed)


def test_value_loss_zero_at_target():
    spec = nnkit.MlpSpec((2, 4, 1), head="scalar_value")
    net = nnkit.ValueMlp(spec, np.zeros(spec.n_params()))
    loss, grad = nnkit.value_forward_and_grad(net, np.array([0.2, 0.3]), 0.0)
    assert loss == 0.0
    assert np.array_equal(grad, np.zeros_like(net.params))


def test_value_loss_quadratic_scaling():
    spec = nnkit.MlpSpec((2, 4, 1), head="scalar_value")
    net = nnkit.ValueMlp(spec, np.zeros(spec.n_params()))
    obs = np.array([0.2, 0.3])
    loss1, _ = nnkit.value_forward_and_grad(net, obs, 1.0)
    loss2, _ = nnkit.value_forward_and_grad(net, obs, 2.0)
    assert loss2 == pytest.approx(4.0 * loss1, rel=1e-14)


@pytest.mark.parametrize("seed", range(20))
def test_value_grad_matches_finite_differences(seed):
    rng = np.random.default_rng(1000 + seed)
    widths = (int(rng.integers(1, 4)), int(rng.integers(3, 7)), 1)
    spec = nnkit.MlpSpec(widths, head="scalar_value",
                         activation="tanh" if seed % 2 else "relu")
    params = rng.uniform(-0.6, 0.6, spec.n_params())
    net = nnkit.ValueMlp(spec, params)
    obs = rng.normal(size=spec.input_dim)
    target = float(rng.normal())

    _, grad = nnkit.value_forward_and_grad(net, obs, target)

    def f(p):
        loss, _ = nnkit.value_forward_and_grad(nnkit.ValueMlp(spec, p), obs, target)
        return loss

    fd = finite_diff_grad(f, net.params, step=1e-5)
    assert rel_err(grad, fd) <= 1e-4


def test_value_head_mismatch_rejected():
    pol = make_policy()
    with pytest.raises(ConfigError):
        nnkit.ValueMlp(pol.spec, pol.params)


def test_axpy_zero_step():
    p = np.array([1.0, 2.0, 3.0])
    out = nnkit.axpy_update(p, np.array([5.0, 5.0, 5.0]), 0.0)
    assert np.array_equal(out, p)


def test_axpy_arithmetic():
    out = nnkit.axpy_update(np.array([1.0, 2.0]), np.array([1.0, 1.0]), 0.5)
    assert np.array_equal(out, [0.5, 1.5])


def test_axpy_two_steps_equal_one():
    p = np.array([0.3, -0.7, 1.1])
    g = np.array([0.11, 0.22, -0.5])
    two = nnkit.axpy_update(nnkit.axpy_update(p, g, 0.1), g, 0.1)
    one = nnkit.axpy_update(p, g, 0.2)
    assert np.allclose(two, one, rtol=0, atol=1e-15)


def test_axpy_length_mismatch():
    with pytest.raises(ShapeError):
        nnkit.axpy_update(np.zeros(3), np.zeros(4), 0.1)


def test_log_std_clamped():
    spec = nnkit.MlpSpec((2, 3, 2))
    params = np.zeros(spec.n_params())
    params[-2:] = [9.0, -9.0]
    pol = nnkit.GaussianMlpPolicy(spec, params)
    assert np.array_equal(pol.log_std(), [nnkit.LOG_STD_MAX, nnkit.LOG_STD_MIN])


@pytest.mark.parametrize("seed", range(10))
def test_no_nan_from_finite_inputs(seed):
    rng = np.random.default_rng(2000 + seed)
    spec = nnkit.MlpSpec((3, 5, 2), activation="tanh" if seed % 2 else "relu")
    params = rng.uniform(-10, 10, spec.n_params())
    pol = nnkit.GaussianMlpPolicy(spec, params)
    obs = rng.uniform(-10, 10, 3)
    action = rng.uniform(-10, 10, 2)
    mean, std = pol.forward(obs)
    logp, grad = nnkit.log_prob_and_grad(pol, obs, action)
    assert np.all(np.isfinite(mean)) and np.all(np.isfinite(std))
    assert np.isfinite(logp) and np.all(np.isfinite(grad))


def test_backward_bit_deterministic():
    pol = make_policy(seed=7)
    rng = np.random.default_rng(0)
    obs = rng.normal(size=(16, 2))
    act = rng.normal(size=(16, 2))
    w = rng.normal(size=16)
    _, g1 = nnkit.log_prob_weighted_grad(pol, obs, act, w)
    _, g2 = nnkit.log_prob_weighted_grad(pol, obs, act, w)
    assert np.array_equal(g1, g2)


def test_weighted_grad_is_weighted_sum_of_single_grads():
    pol = make_policy(seed=11)
    rng = np.random.default_rng(4)
    obs = rng.normal(size=(5, 2))
    act = rng.normal(size=(5, 2))
    w = rng.normal(size=5)
    _, batched = nnkit.log_prob_weighted_grad(pol, obs, act, w)
    acc = np.zeros_like(pol.params)
    for i in range(5):
        _, gi = nnkit.log_prob_and_grad(pol, obs[i], act[i])
        acc += w[i] * gi
    assert np.allclose(batched, acc, rtol=0, atol=1e-12)


def test_checkpoint_round_trip(tmp_path):
    pol = make_policy(seed=13)
    path = tmp_path / "pol.ckpt"
    nnkit.save_checkpoint(path, pol.spec, pol.params, meta={"seed": 13})
    spec, params, meta = nnkit.load_checkpoint(path)
    assert spec == pol.spec
    assert np.array_equal(params, pol.params)
    assert meta["seed"] == 13
    # bytes on disk are deterministic for identical params
    nnkit.save_checkpoint(tmp_path / "pol2.ckpt", pol.spec, pol.params, meta={"seed": 13})
    assert (tmp_path / "pol.ckpt").read_bytes() == (tmp_path / "pol2.ckpt").read_bytes()


def test_checkpoint_bad_header_rejected(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_text('{"format": "something-else"}\n0.0\n')
    with pytest.raises(ConfigError):
        nnkit.load_checkpoint(path)


def test_spec_validation():
    with pytest.raises(ConfigError):
        nnkit.MlpSpec((2, 2))  # no hidden layer
    with pytest.raises(ConfigError):
        nnkit.MlpSpec((2, 3, 2), activation="sigmoid")
    with pytest.raises(ConfigError):
        nnkit.MlpSpec((2, 3, 2), head="scalar_value")  # scalar head needs width 1
