"""Two-objective quadratic testbed with exactly known constants.

Each objective is L(theta) = 0.5 (theta-b)' A (theta-b) for an SPD matrix A,
so the smoothness constant is the top eigenvalue, the optimum value is 0,
and every gradient is exact. Stochastic gradients add Gaussian noise of
std sigma/sqrt(N) per coordinate; the total-variance constant entering the
bounds is therefore dim * sigma^2, which satisfies the bounded-variance
assumption with equality.

This turns the step-size analysis into assertable checks: the RL-only and
interleaved convergence bounds, the 1-D cycle-map fixed point, the
accumulated regularization benefit, and the update-count efficiency ratio.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExceededError, ConfigError, UsageError
from .interleave import measure_alignment

SCHEDULE_KINDS = ("rl_only", "inril")
MAX_EMPIRICAL_UPDATES = 10 ** 6


@dataclass
class QuadraticPair:
    """A pair of quadratic objectives standing in for the IL and RL losses."""

    a_il: np.ndarray
    b_il: np.ndarray
    a_rl: np.ndarray
    b_rl: np.ndarray
    theta0: np.ndarray
    noise_std_il: float = 0.0   # per-coordinate sigma; effective std is sigma/sqrt(N)
    noise_std_rl: float = 0.0
    n_il: int = 16
    n_rl: int = 16

    def __post_init__(self):
        for name in ("a_il", "b_il", "a_rl", "b_rl", "theta0"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        d = self.theta0.size
        for name in ("a_il", "a_rl"):
            a = getattr(self, name)
            if a.shape != (d, d):
                raise ConfigError("%s must be (%d, %d), got %r" % (name, d, d, a.shape))
            if not np.allclose(a, a.T, atol=1e-12):
                raise ConfigError("%s must be symmetric" % name)
            if np.linalg.eigvalsh(a)[0] <= 0:
                raise ConfigError("%s must be positive definite" % name)
        if self.noise_std_il < 0 or self.noise_std_rl < 0:
            raise ConfigError("noise stds must be nonnegative")
        if self.n_il < 1 or self.n_rl < 1:
            raise ConfigError("batch sizes must be positive")

    @property
    def dim(self):
        return self.theta0.size

    def loss_il(self, theta):
        d = theta - self.b_il
        return 0.5 * float(d @ (self.a_il @ d))

    def loss_rl(self, theta):
        d = theta - self.b_rl
        return 0.5 * float(d @ (self.a_rl @ d))

    def grad_il(self, theta):
        return self.a_il @ (theta - self.b_il)

    def grad_rl(self, theta):
        return self.a_rl @ (theta - self.b_rl)

    def smoothness_il(self):
        return float(np.linalg.eigvalsh(self.a_il)[-1])

    def smoothness_rl(self):
        return float(np.linalg.eigvalsh(self.a_rl)[-1])


@dataclass
class TheoryConstants:
    """Exact constants feeding the bounds; learning rates are c/L."""

    c_il: float
    c_rl: float
    l_il: float
    l_rl: float
    sigma_sq_il: float = 0.0  # total variance bound (dim * per-coordinate sigma^2)
    sigma_sq_rl: float = 0.0
    n_il: int = 16
    n_rl: int = 16
    eps_il: float = 0.0
    delta: float = 0.0        # intermediate-step slack; 0 evaluates bounds as stated

    def validate(self):
        if not (0.0 < self.c_il < 1.0 and 0.0 < self.c_rl < 1.0):
            raise ConfigError("c_il and c_rl must lie in (0, 1)")
        if self.l_il <= 0 or self.l_rl <= 0:
            raise ConfigError("smoothness constants must be positive")
        if self.sigma_sq_il < 0 or self.sigma_sq_rl < 0:
            raise ConfigError("variance constants must be nonnegative")
        if self.n_il < 1 or self.n_rl < 1:
            raise ConfigError("batch sizes must be positive")
        if not (0.0 <= self.delta < 1.0):
            raise ConfigError("delta slack must lie in [0, 1)")

    @property
    def alpha_il(self):
        return self.c_il / self.l_il

    @property
    def alpha_rl(self):
        return self.c_rl / self.l_rl


def constants_for_pair(pair: QuadraticPair, c_il, c_rl, delta=0.0) -> TheoryConstants:
    """Derive the exact constants (smoothness, variances, warm-start gap)."""
    return TheoryConstants(
        c_il=c_il, c_rl=c_rl,
        l_il=pair.smoothness_il(), l_rl=pair.smoothness_rl(),
        sigma_sq_il=pair.dim * pair.noise_std_il ** 2,
        sigma_sq_rl=pair.dim * pair.noise_std_rl ** 2,
        n_il=pair.n_il, n_rl=pair.n_rl,
        eps_il=pair.loss_il(pair.theta0),
        delta=delta,
    )


@dataclass
class TraceLog:
    """Per-update states of a schedule run; cycle starts flagged for the bounds."""

    kind: str
    m: int
    records: list = field(default_factory=list)

    def cycle_starts(self):
        return [r for r in self.records if r["cycle_start"]]

    def final_theta(self):
        return self.records[-1]["theta"]


def _record_point(pair, theta, cycle, phase, cycle_start):
    g_il = pair.grad_il(theta)
    g_rl = pair.grad_rl(theta)
    return {
        "theta": theta.copy(),
        "cycle": cycle,
        "phase": phase,
        "cycle_start": cycle_start,
        "loss_il": pair.loss_il(theta),
        "loss_rl": pair.loss_rl(theta),
        "gnorm_il": float(np.linalg.norm(g_il)),
        "gnorm_rl": float(np.linalg.norm(g_rl)),
        "rho": measure_alignment(g_il, g_rl),
    }


def _check_consts(pair, consts):
    consts.validate()
    if abs(consts.l_il - pair.smoothness_il()) > 1e-9:
        raise ConfigError("l_il %.12g does not match the top eigenvalue %.12g"
                          % (consts.l_il, pair.smoothness_il()))
    if abs(consts.l_rl - pair.smoothness_rl()) > 1e-9:
        raise ConfigError("l_rl %.12g does not match the top eigenvalue %.12g"
                          % (consts.l_rl, pair.smoothness_rl()))


def run_schedule(pair: QuadraticPair, kind, m, t_cycles, consts: TheoryConstants,
                 seed) -> TraceLog:
    """Simulate rl_only (T updates) or inril (T cycles of 1 IL + m RL updates).

    Every update point is recorded with exact losses, exact gradient norms
    and rho; stochastic noise enters only the steps themselves.
    """
    if kind not in SCHEDULE_KINDS:
        raise ConfigError("schedule kind must be one of %s" % (SCHEDULE_KINDS,))
    if kind == "inril" and (not isinstance(m, (int, np.integer)) or m < 1):
        raise ConfigError("inril schedule needs integer m >= 1")
    _check_consts(pair, consts)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    d = pair.dim

    def il_noise():
        if pair.noise_std_il == 0:
            return 0.0
        return (pair.noise_std_il / np.sqrt(pair.n_il)) * rng.standard_normal(d)

    def rl_noise():
        if pair.noise_std_rl == 0:
            return 0.0
        return (pair.noise_std_rl / np.sqrt(pair.n_rl)) * rng.standard_normal(d)

    theta = pair.theta0.copy()
    trace = TraceLog(kind=kind, m=(m if kind == "inril" else 1))
    trace.records.append(_record_point(pair, theta, 0, "init", cycle_start=True))

    for t in range(t_cycles):
        if kind == "inril":
            theta = theta - consts.alpha_il * (pair.grad_il(theta) + il_noise())
            trace.records.append(_record_point(pair, theta, t, "il", cycle_start=False))
            for j in range(m):
                theta = theta - consts.alpha_rl * (pair.grad_rl(theta) + rl_noise())
                starts_next = (j == m - 1) and (t + 1 < t_cycles)
                trace.records.append(_record_point(pair, theta, t + 1 if j == m - 1 else t,
                                                   "rl", cycle_start=starts_next))
        else:
            theta = theta - consts.alpha_rl * (pair.grad_rl(theta) + rl_noise())
            trace.records.append(_record_point(pair, theta, t + 1, "rl",
                                               cycle_start=(t + 1 < t_cycles)))
    return trace


def delta_il_rl(trace: TraceLog, consts: TheoryConstants) -> float:
    """Accumulated regularization benefit over the trace's cycle starts.

    Sum of -(c_il rho(t) / l_il) |g_il(theta_t)| |g_rl(theta_t)| minus the
    imitation-noise cost c_il^2 sigma_il^2 T / (2 l_il N_il), following the
    stated sign convention.
    """
    starts = trace.cycle_starts()
    if not starts:
        raise UsageError("trace has no cycle-start records")
    for key in ("rho", "gnorm_il", "gnorm_rl"):
        if key not in starts[0]:
            raise UsageError("trace records lack field %r" % key)
    t_count = len(starts)
    total = 0.0
    for rec in starts:
        total -= (consts.c_il * rec["rho"] / consts.l_il) * rec["gnorm_il"] * rec["gnorm_rl"]
    total -= consts.c_il ** 2 * consts.sigma_sq_il * t_count / (2.0 * consts.l_il * consts.n_il)
    return total


def bound_rhs_rl_only(consts: TheoryConstants, l_rl_gap, t_updates) -> float:
    """RL-only convergence bound on min ||grad L_RL||^2 after t_updates.

    l_rl_gap is the product L_RL * (L_RL(theta_0) - L_RL^*).
    """
    slack = (1.0 - consts.delta) ** 2
    first = 2.0 * l_rl_gap / (consts.c_rl * (1.0 - consts.c_rl / 2.0) * t_updates * slack)
    second = consts.c_rl * consts.sigma_sq_rl / ((1.0 - consts.c_rl / 2.0) * consts.n_rl * slack)
    return first + second


def bound_rhs_inril(consts: TheoryConstants, l_rl_gap, delta_benefit, m_bar, t_cycles) -> float:
    """Interleaved convergence bound on min ||grad L_RL||^2 after t_cycles."""
    slack = (1.0 - consts.delta) ** 2
    first = (2.0 * (l_rl_gap - delta_benefit)
             / (consts.c_rl * (1.0 - consts.c_rl / 2.0) * m_bar * t_cycles * slack))
    second = consts.c_rl * consts.sigma_sq_rl / ((1.0 - consts.c_rl / 2.0) * consts.n_rl * slack)
    return first + second


def efficiency_ratio(m, delta_benefit, l_rl_gap):
    """Update-count ratio T_rl_only / T_interleaved_total and beta.

    ratio = (m / (1+m)) * l_rl_gap / (l_rl_gap - delta_benefit), computed as
    a single fraction so the break-even case is exact. beta is the relative
    regularization benefit delta / l_rl_gap.
    """
    if l_rl_gap <= 0:
        raise UsageError("l_rl_gap must be positive")
    denom = (1.0 + m) * (l_rl_gap - delta_benefit)
    if denom <= 0:
        raise UsageError("regularization benefit %.6g exceeds the total gap %.6g"
                         % (delta_benefit, l_rl_gap))
    ratio = m * l_rl_gap / denom
    beta = delta_benefit / l_rl_gap
    return ratio, beta


def check_theorem2_condition(trace: TraceLog, consts: TheoryConstants, m):
    """Does the accumulated benefit clear the threshold l_rl_gap / (m + 1)?"""
    start = trace.records[0]
    l_rl_gap = consts.l_rl * start["loss_rl"]  # quadratic optimum value is 0
    lhs = delta_il_rl(trace, consts)
    rhs = l_rl_gap / (m + 1.0)
    return {"holds": bool(lhs > rhs), "margin": lhs - rhs, "lhs": lhs, "rhs": rhs}


def implied_delta(trace: TraceLog) -> float:
    """Largest per-cycle drop of ||grad L_RL|| below its cycle-start value.

    The cycle analysis assumes intermediate gradients stay within (1-delta)
    of the start; this reports the delta actually realized by the trace.
    """
    worst = 0.0
    start_norm = None
    for rec in trace.records:
        if rec["cycle_start"]:
            start_norm = rec["gnorm_rl"]
        elif start_norm is not None and start_norm > 1e-15:
            ratio = rec["gnorm_rl"] / start_norm
            worst = max(worst, 1.0 - ratio)
    return worst


def empirical_update_counts(pair: QuadraticPair, consts: TheoryConstants, m, epsilon, seed):
    """Updates until the min-so-far exact ||grad L_RL||^2 reaches epsilon.

    Counts total parameter updates for the plain schedule and for the
    interleaved one (cycle boundaries only). Raises BudgetExceededError when
    epsilon sits at or below the stochastic noise floor, or when either
    schedule exceeds MAX_EMPIRICAL_UPDATES.
    """
    _check_consts(pair, consts)
    if epsilon <= 0:
        raise UsageError("epsilon must be positive")
    if consts.sigma_sq_rl > 0:
        floor = consts.c_rl * consts.sigma_sq_rl / ((1.0 - consts.c_rl / 2.0) * consts.n_rl)
        if epsilon <= floor:
            raise BudgetExceededError(
                "epsilon %.3g is at or below the noise floor %.3g; unreachable" % (epsilon, floor))

    root = np.random.SeedSequence(seed)
    rl_ss, inril_ss = root.spawn(2)

    def gnorm_sq(theta):
        g = pair.grad_rl(theta)
        return float(g @ g)

    # plain schedule: check after every update
    rng = np.random.default_rng(rl_ss)
    theta = pair.theta0.copy()
    best = gnorm_sq(theta)
    t_rl = 0
    while best > epsilon:
        if t_rl >= MAX_EMPIRICAL_UPDATES:
            raise BudgetExceededError("rl_only did not reach epsilon within %d updates"
                                      % MAX_EMPIRICAL_UPDATES)
        noise = (pair.noise_std_rl / np.sqrt(pair.n_rl)) * rng.standard_normal(pair.dim) \
            if pair.noise_std_rl > 0 else 0.0
        theta = theta - consts.alpha_rl * (pair.grad_rl(theta) + noise)
        t_rl += 1
        best = min(best, gnorm_sq(theta))

    # interleaved schedule: check at cycle boundaries
    rng = np.random.default_rng(inril_ss)
    theta = pair.theta0.copy()
    best = gnorm_sq(theta)
    cycles = 0
    while best > epsilon:
        if cycles * (1 + m) >= MAX_EMPIRICAL_UPDATES:
            raise BudgetExceededError("inril did not reach epsilon within %d updates"
                                      % MAX_EMPIRICAL_UPDATES)
        noise_il = (pair.noise_std_il / np.sqrt(pair.n_il)) * rng.standard_normal(pair.dim) \
            if pair.noise_std_il > 0 else 0.0
        theta = theta - consts.alpha_il * (pair.grad_il(theta) + noise_il)
        for _ in range(m):
            noise_rl = (pair.noise_std_rl / np.sqrt(pair.n_rl)) * rng.standard_normal(pair.dim) \
                if pair.noise_std_rl > 0 else 0.0
            theta = theta - consts.alpha_rl * (pair.grad_rl(theta) + noise_rl)
        cycles += 1
        best = min(best, gnorm_sq(theta))
    return t_rl, cycles * (1 + m)


# -- randomized testbed instances ----------------------------------------------

def random_spd(rng, dim, eig_low=0.2, eig_high=2.0):
    """Random SPD matrix with eigenvalues drawn uniformly from the range."""
    eigs = rng.uniform(eig_low, eig_high, size=dim)
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    return (q * eigs) @ q.T


def random_pair(seed, noise=False) -> QuadraticPair:
    """A testbed instance in the fine-tuning regime.

    theta0 sits near the IL optimum (warm start) while the RL optimum is kept
    at least unit distance away, mirroring the premise that fine-tuning has
    substantial room for improvement; with the two optima nearly coincident
    the first-order benefit estimate can exceed the whole remaining gap.
    """
    rng = np.random.default_rng(np.random.SeedSequence((9001, int(seed), int(noise))))
    dim = int(rng.choice([1, 2, 4, 8]))
    a_il = random_spd(rng, dim)
    a_rl = random_spd(rng, dim)
    b_il = rng.uniform(-1.0, 1.0, dim)
    while True:
        b_rl = rng.uniform(-2.0, 2.0, dim)
        if np.linalg.norm(b_rl - b_il) >= 1.0:
            break
    theta0 = b_il + rng.uniform(-0.05, 0.05, dim)
    sigma = float(rng.uniform(0.05, 0.25)) if noise else 0.0
    return QuadraticPair(a_il=a_il, b_il=b_il, a_rl=a_rl, b_rl=b_rl, theta0=theta0,
                         noise_std_il=sigma, noise_std_rl=sigma,
                         n_il=int(rng.integers(8, 64)), n_rl=int(rng.integers(8, 64)))


def random_run_settings(seed):
    """Step sizes and ratios in the small-intra-cycle-drift regime.

    The interleaved bound absorbs the within-cycle gradient decay into its
    constants, which presumes parameters move little inside one cycle;
    m * c_rl is kept below ~0.8 so that premise actually holds here.
    """
    rng = np.random.default_rng(np.random.SeedSequence((9002, int(seed))))
    return {
        "c_il": float(rng.uniform(0.05, 0.3)),
        "c_rl": float(rng.uniform(0.05, 0.2)),
        "m": int(rng.integers(1, 5)),
        "t_cycles": int(rng.integers(20, 61)),
    }


# -- the check suite (consumed by the theory-check command and the tests) ------

def fixed_point_checks(alphas=(0.1, 0.3, 0.5), ms=(1, 2, 5, 10), t_cycles=400, tol=1e-9):
    """1-D cycle-map simulations against the closed-form fixed point."""
    checks = []
    a = np.array([[1.0]])
    for alpha in alphas:
        for m in ms:
            pair = QuadraticPair(a_il=a, b_il=[0.0], a_rl=a, b_rl=[1.0], theta0=[0.5])
            consts = constants_for_pair(pair, c_il=alpha, c_rl=alpha)
            trace = run_schedule(pair, "inril", m, t_cycles, consts, seed=0)
            simulated = float(trace.cycle_starts()[-1]["theta"][0])
            u = 1.0 - alpha
            closed_form = (1.0 - u ** m) / (1.0 - u ** (m + 1))
            checks.append({
                "name": "fixed_point alpha=%.1f m=%d" % (alpha, m),
                "lhs": abs(simulated - closed_form), "rhs": tol,
                "passed": abs(simulated - closed_form) <= tol,
                "margin": tol - abs(simulated - closed_form),
            })
    return checks


def bound_checks(n_seeds=25, include_noise=True):
    """Prefix-wise convergence-bound checks on random quadratic runs.

    For every run, the empirical min exact gradient-norm^2 over the first T
    cycle starts must stay at or below the corresponding bound for every T.
    """
    checks = []
    noise_options = (False, True) if include_noise else (False,)
    for seed in range(n_seeds):
        for noisy in noise_options:
            pair = random_pair(seed, noise=noisy)
            settings = random_run_settings(seed)
            consts = constants_for_pair(pair, settings["c_il"], settings["c_rl"])
            label = "seed=%d noise=%s" % (seed, noisy)

            trace = run_schedule(pair, "rl_only", 1, settings["t_cycles"], consts,
                                 seed=(seed, 0))
            checks.append(_prefix_bound_check("covRL %s" % label, trace, consts,
                                              kind="rl_only"))

            trace = run_schedule(pair, "inril", settings["m"], settings["t_cycles"],
                                 consts, seed=(seed, 1))
            checks.append(_prefix_bound_check("covINT %s m=%d" % (label, settings["m"]),
                                              trace, consts, kind="inril",
                                              m=settings["m"]))
    return checks


def _prefix_bound_check(name, trace, consts, kind, m=1):
    starts = trace.cycle_starts()
    l_rl_gap = consts.l_rl * starts[0]["loss_rl"]
    worst_margin = np.inf
    worst = None
    running_min = np.inf
    for t_prefix in range(1, len(starts) + 1):
        running_min = min(running_min, starts[t_prefix - 1]["gnorm_rl"] ** 2)
        if kind == "rl_only":
            rhs = bound_rhs_rl_only(consts, l_rl_gap, t_prefix)
        else:
            prefix_trace = TraceLog(kind=kind, m=m, records=[])
            # delta over the first t_prefix cycle starts
            total = 0.0
            for rec in starts[:t_prefix]:
                total -= (consts.c_il * rec["rho"] / consts.l_il) * rec["gnorm_il"] * rec["gnorm_rl"]
            total -= (consts.c_il ** 2 * consts.sigma_sq_il * t_prefix
                      / (2.0 * consts.l_il * consts.n_il))
            rhs = bound_rhs_inril(consts, l_rl_gap, total, m, t_prefix)
        margin = rhs - running_min
        if margin < worst_margin:
            worst_margin = margin
            worst = (running_min, rhs, t_prefix)
    return {
        "name": name,
        "lhs": worst[0], "rhs": worst[1],
        "passed": bool(worst_margin >= 0.0),
        "margin": worst_margin,
        "t": worst[2],
    }


def efficiency_checks():
    """Break-even identity, the no-benefit case, and monotonicity spot checks."""
    checks = []
    ratio, beta = efficiency_ratio(3.0, 0.25, 1.0)
    checks.append({"name": "break_even m=3 beta=1/4", "lhs": ratio, "rhs": 1.0,
                   "passed": abs(ratio - 1.0) <= 1e-12, "margin": 1e-12 - abs(ratio - 1.0)})
    ratio4, _ = efficiency_ratio(4.0, 0.2, 1.0)
    checks.append({"name": "break_even m=4 beta=1/5", "lhs": ratio4, "rhs": 1.0,
                   "passed": abs(ratio4 - 1.0) <= 1e-12, "margin": 1e-12 - abs(ratio4 - 1.0)})
    ok = True
    for m in (1, 2, 3, 5, 10, 100):
        r, _ = efficiency_ratio(float(m), 0.0, 1.0)
        ok = ok and abs(r - m / (1.0 + m)) <= 1e-15 and r < 1.0
    checks.append({"name": "zero_benefit ratio=m/(1+m)<1", "lhs": float(ok), "rhs": 1.0,
                   "passed": ok, "margin": 0.0})
    mono = True
    prev = -np.inf
    for m in (1, 2, 4, 8, 16):
        r, _ = efficiency_ratio(float(m), 0.3, 1.0)
        mono = mono and r > prev
        prev = r
    prev = -np.inf
    for beta in (0.0, 0.1, 0.2, 0.4, 0.6):
        r, _ = efficiency_ratio(3.0, beta, 1.0)
        mono = mono and r > prev
        prev = r
    checks.append({"name": "efficiency_ratio monotonicity", "lhs": float(mono), "rhs": 1.0,
                   "passed": mono, "margin": 0.0})
    return checks


def run_check_suite(n_seeds=25):
    """All theory checks; any failed record is a hard failure for the caller."""
    return fixed_point_checks() + bound_checks(n_seeds=n_seeds) + efficiency_checks()
