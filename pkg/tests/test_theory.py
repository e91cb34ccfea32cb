import numpy as np
import pytest

from rlweave import theory
from rlweave.errors import BudgetExceededError, ConfigError, UsageError

from helpers import cycle_fixed_point


def one_dim_pair(b_il=0.0, b_rl=1.0, theta0=0.5, **kw):
    a = np.array([[1.0]])
    return theory.QuadraticPair(a_il=a, b_il=[b_il], a_rl=a, b_rl=[b_rl],
                                theta0=[theta0], **kw)


def synthetic_trace(rho_values, gnorm_il=1.0, gnorm_rl=1.0, loss_rl0=1.0):
    trace = theory.TraceLog(kind="inril", m=1)
    for i, rho in enumerate(rho_values):
        trace.records.append({
            "theta": np.zeros(1), "cycle": i, "phase": "init", "cycle_start": True,
            "loss_il": 0.0, "loss_rl": loss_rl0, "gnorm_il": gnorm_il,
            "gnorm_rl": gnorm_rl, "rho": rho,
        })
    return trace


def test_pair_validation():
    a = np.array([[1.0, 0.5], [0.4, 1.0]])  # asymmetric
    with pytest.raises(ConfigError):
        theory.QuadraticPair(a_il=a, b_il=[0, 0], a_rl=np.eye(2), b_rl=[0, 0],
                             theta0=[0, 0])
    with pytest.raises(ConfigError):
        theory.QuadraticPair(a_il=-np.eye(2), b_il=[0, 0], a_rl=np.eye(2),
                             b_rl=[0, 0], theta0=[0, 0])


def test_constants_for_pair_exactness():
    rng = np.random.default_rng(0)
    a_il = theory.random_spd(rng, 4)
    a_rl = theory.random_spd(rng, 4)
    pair = theory.QuadraticPair(a_il=a_il, b_il=np.zeros(4), a_rl=a_rl,
                                b_rl=np.ones(4), theta0=np.zeros(4),
                                noise_std_il=0.3, noise_std_rl=0.1, n_il=10, n_rl=20)
    consts = theory.constants_for_pair(pair, 0.2, 0.3)
    assert consts.l_il == pytest.approx(np.linalg.eigvalsh(a_il)[-1], abs=1e-12)
    assert consts.sigma_sq_il == pytest.approx(4 * 0.3 ** 2, abs=1e-15)
    assert consts.eps_il == pytest.approx(pair.loss_il(pair.theta0), abs=1e-15)


def test_consts_mismatch_rejected():
    pair = one_dim_pair()
    consts = theory.constants_for_pair(pair, 0.3, 0.3)
    consts.l_rl = consts.l_rl / 2.0  # the halved-constant negative control
    with pytest.raises(ConfigError):
        theory.run_schedule(pair, "rl_only", 1, 10, consts, seed=0)


def test_schedule_deterministic():
    pair = one_dim_pair(noise_std_il=0.2, noise_std_rl=0.2)
    consts = theory.constants_for_pair(pair, 0.3, 0.3)
    a = theory.run_schedule(pair, "inril", 3, 20, consts, seed=5)
    b = theory.run_schedule(pair, "inril", 3, 20, consts, seed=5)
    assert all(np.array_equal(x["theta"], y["theta"])
               for x, y in zip(a.records, b.records))


def test_trace_counts():
    pair = one_dim_pair()
    consts = theory.constants_for_pair(pair, 0.3, 0.3)
    trace = theory.run_schedule(pair, "inril", 4, 7, consts, seed=0)
    assert len(trace.records) == 1 + 7 * 5          # init + (1 IL + 4 RL) per cycle
    assert len(trace.cycle_starts()) == 7
    rl_trace = theory.run_schedule(pair, "rl_only", 1, 7, consts, seed=0)
    assert len(rl_trace.records) == 8
    assert len(rl_trace.cycle_starts()) == 7


@pytest.mark.parametrize("alpha", [0.1, 0.3, 0.5])
@pytest.mark.parametrize("m", [1, 2, 5, 10])
def test_fixed_point_matches_closed_form(alpha, m):
    pair = one_dim_pair()
    consts = theory.constants_for_pair(pair, c_il=alpha, c_rl=alpha)
    trace = theory.run_schedule(pair, "inril", m, 400, consts, seed=0)
    simulated = float(trace.cycle_starts()[-1]["theta"][0])
    assert abs(simulated - cycle_fixed_point(alpha, m)) <= 1e-9


def test_rl_only_bound_all_prefixes_deterministic():
    # direct spec case: noiseless quadratic, every T in 1..200
    rng = np.random.default_rng(3)
    a = theory.random_spd(rng, 3)
    pair = theory.QuadraticPair(a_il=np.eye(3), b_il=np.zeros(3), a_rl=a,
                                b_rl=np.array([1.0, -1.0, 0.5]), theta0=np.zeros(3))
    consts = theory.constants_for_pair(pair, 0.3, 0.5)
    trace = theory.run_schedule(pair, "rl_only", 1, 200, consts, seed=0)
    starts = trace.cycle_starts()
    gap = consts.l_rl * starts[0]["loss_rl"]
    running_min = np.inf
    for t in range(1, 201):
        running_min = min(running_min, starts[t - 1]["gnorm_rl"] ** 2)
        assert running_min <= theory.bound_rhs_rl_only(consts, gap, t), t


def test_rho_matches_analytic_cosine():
    pair = theory.random_pair(11, noise=False)
    consts = theory.constants_for_pair(pair, 0.2, 0.15)
    trace = theory.run_schedule(pair, "inril", 2, 30, consts, seed=0)
    for rec in trace.records:
        g_il = pair.a_il @ (rec["theta"] - pair.b_il)
        g_rl = pair.a_rl @ (rec["theta"] - pair.b_rl)
        denom = np.linalg.norm(g_il) * np.linalg.norm(g_rl)
        if denom < 1e-12:
            continue
        analytic = -float(g_il @ g_rl) / denom
        assert abs(rec["rho"] - analytic) <= 1e-10


# -- accumulated regularization benefit ----------------------------------------

def zero_noise_consts(c_il=0.5, l_il=1.0):
    return theory.TheoryConstants(c_il=c_il, c_rl=0.5, l_il=l_il, l_rl=1.0,
                                  sigma_sq_il=0.0, sigma_sq_rl=0.0, n_il=1, n_rl=1)


def test_delta_zero_for_orthogonal_noiseless():
    trace = synthetic_trace([0.0] * 10)
    assert theory.delta_il_rl(trace, zero_noise_consts()) == 0.0


def test_delta_single_cycle_arithmetic():
    trace = synthetic_trace([-1.0])  # fully aligned, norms 1
    assert theory.delta_il_rl(trace, zero_noise_consts(c_il=0.5, l_il=1.0)) == \
        pytest.approx(0.5, abs=1e-15)


def test_delta_matches_independent_summation():
    pair = theory.random_pair(7, noise=True)
    consts = theory.constants_for_pair(pair, 0.25, 0.15)
    trace = theory.run_schedule(pair, "inril", 3, 40, consts, seed=9)
    fast = theory.delta_il_rl(trace, consts)
    starts = trace.cycle_starts()
    slow = 0.0
    for rec in starts:
        slow += -(consts.c_il * rec["rho"] / consts.l_il) * rec["gnorm_il"] * rec["gnorm_rl"]
    slow -= consts.c_il ** 2 * consts.sigma_sq_il * len(starts) / (2 * consts.l_il * consts.n_il)
    assert fast == pytest.approx(slow, rel=1e-12)


def test_delta_noise_cost_sign():
    # zero alignment, noisy imitation gradients: benefit is exactly the
    # negative noise cost c^2 sigma^2 T / (2 L N) = 0.25 * 2 * 5 / 8
    trace = synthetic_trace([0.0] * 5)
    consts = theory.TheoryConstants(c_il=0.5, c_rl=0.5, l_il=1.0, l_rl=1.0,
                                    sigma_sq_il=2.0, sigma_sq_rl=0.0, n_il=4, n_rl=1)
    assert theory.delta_il_rl(trace, consts) == pytest.approx(-0.3125, abs=1e-15)


# -- efficiency ratio -----------------------------------------------------------

def test_break_even_m3():
    ratio, beta = theory.efficiency_ratio(3.0, 0.25, 1.0)
    assert abs(ratio - 1.0) <= 1e-12
    assert beta == 0.25


def test_break_even_m4_at_beta_one_fifth():
    ratio, _ = theory.efficiency_ratio(4.0, 0.2, 1.0)
    assert abs(ratio - 1.0) <= 1e-12


def test_zero_benefit_ratio():
    for m in (1, 3, 7):
        ratio, beta = theory.efficiency_ratio(float(m), 0.0, 2.5)
        assert ratio == pytest.approx(m / (1.0 + m), abs=1e-15)
        assert ratio < 1.0
        assert beta == 0.0


def test_efficiency_monotonicity():
    ratios_m = [theory.efficiency_ratio(m, 0.3, 1.0)[0] for m in (1, 2, 4, 8, 16)]
    assert all(b > a for a, b in zip(ratios_m, ratios_m[1:]))
    ratios_b = [theory.efficiency_ratio(3.0, b, 1.0)[0] for b in (0.0, 0.2, 0.4, 0.6)]
    assert all(b > a for a, b in zip(ratios_b, ratios_b[1:]))


def test_efficiency_domain_error():
    with pytest.raises(UsageError):
        theory.efficiency_ratio(3.0, 1.5, 1.0)


# -- theorem-2 condition ---------------------------------------------------------

def test_condition_fails_for_orthogonal():
    trace = synthetic_trace([0.0] * 10, loss_rl0=1.0)
    for m in (1, 3, 10, 1000):
        res = theory.check_theorem2_condition(trace, zero_noise_consts(), m)
        assert not res["holds"]
        assert res["margin"] < 0


def test_condition_holds_for_aligned_above_threshold():
    a = np.array([[1.0]])
    pair = theory.QuadraticPair(a_il=a, b_il=[1.0], a_rl=a, b_rl=[1.0], theta0=[0.0])
    consts = theory.constants_for_pair(pair, 0.5, 0.3)
    threshold = None
    for m in range(1, 20):
        trace = theory.run_schedule(pair, "inril", m, 50, consts, seed=0)
        res = theory.check_theorem2_condition(trace, consts, m)
        assert res["lhs"] > 0  # aligned gradients accumulate positive benefit
        if res["holds"]:
            threshold = m
            break
    assert threshold is not None


# -- empirical update counts -----------------------------------------------------

def test_counts_aligned_deterministic_speedup():
    a = np.array([[1.0]])
    pair = theory.QuadraticPair(a_il=a, b_il=[1.0], a_rl=a, b_rl=[1.0], theta0=[0.0])
    consts = theory.constants_for_pair(pair, c_il=0.9, c_rl=0.3)
    t_rl, t_inril = theory.empirical_update_counts(pair, consts, m=3, epsilon=1e-8, seed=0)
    assert t_inril < t_rl


def test_counts_overhead_only_regime():
    # IL gradient starts at zero and c_il is negligible: pure 1/m overhead
    rng = np.random.default_rng(2)
    a_rl = theory.random_spd(rng, 2)
    pair = theory.QuadraticPair(a_il=np.eye(2), b_il=[0.3, -0.2], a_rl=a_rl,
                                b_rl=[1.5, 1.0], theta0=[0.3, -0.2])
    consts = theory.constants_for_pair(pair, c_il=1e-6, c_rl=0.3)
    m = 3
    t_rl, t_inril = theory.empirical_update_counts(pair, consts, m=m, epsilon=1e-6, seed=0)
    expected = (1 + m) / m * t_rl
    assert abs(t_inril - expected) / expected <= 0.10


def test_counts_noise_floor_detection():
    pair = one_dim_pair(noise_std_rl=1.0, n_rl=4)
    consts = theory.constants_for_pair(pair, 0.3, 0.5)
    floor = consts.c_rl * consts.sigma_sq_rl / ((1 - consts.c_rl / 2) * consts.n_rl)
    with pytest.raises(BudgetExceededError):
        theory.empirical_update_counts(pair, consts, m=2, epsilon=floor * 0.5, seed=0)


def test_counts_immediate_if_already_converged():
    pair = one_dim_pair(theta0=1.0)  # theta0 == b_rl
    consts = theory.constants_for_pair(pair, 0.3, 0.5)
    t_rl, t_inril = theory.empirical_update_counts(pair, consts, m=2, epsilon=1e-6, seed=0)
    assert (t_rl, t_inril) == (0, 0)


# -- implied delta and the full suite --------------------------------------------

def test_implied_delta_grows_with_m():
    pair = theory.random_pair(3, noise=False)
    consts = theory.constants_for_pair(pair, 0.2, 0.2)
    small = theory.implied_delta(theory.run_schedule(pair, "inril", 1, 30, consts, 0))
    large = theory.implied_delta(theory.run_schedule(pair, "inril", 4, 30, consts, 0))
    assert 0.0 <= small <= large < 1.0


def test_check_suite_all_pass():
    checks = theory.run_check_suite(n_seeds=25)
    # 12 fixed-point cells + 25 seeds * 2 noise settings * 2 schedules + 4 efficiency
    assert len(checks) == 12 + 100 + 4
    failed = [c for c in checks if not c["passed"]]
    assert failed == []
