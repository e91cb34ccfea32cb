"""Two seedable toy MDPs with analytic experts and demo generation.

гridworld: 5x5 sparse-reward navigation. The policy emits a 2-d continuous
action that is discretized to the axis step with the largest aligned
component, so one Gaussian policy head serves both environments.
Observations are the (row, col) cell normalized to [0, 1]^2.

pointmass: dense-reward 2-d navigation, pos <- pos + 0.1 * clip(action)
(+ optional env noise). Reward uses the *pre-step* distance convention:
r = -||pos_before - goal|| - 0.01 * ||clipped action||^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
import json

import numpy as np

from .errors import ConfigError, EnvMisconfigurationError, ShapeError, UsageError

GRIDWORLD = "gridworld"
POINTMASS = "pointmass"
ENV_KINDS = (GRIDWORLD, POINTMASS)

# action directions, in documented order; ties in discretization and in the
# expert prefer the LAST entry (so right > left > down > up)
GRID_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))
GRID_MOVE_NAMES = ("up", "down", "left", "right")


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool
    logp_behavior: float = 0.0


def as_seedseq(seed):
    """Accept an int, a tuple of ints, or an existing SeedSequence."""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


class GridworldEnv:
    """Deterministic n x n grid; reward 1 exactly on entering the goal."""

    kind = GRIDWORLD

    def __init__(self, n=5, goal=(4, 4), horizon=50):
        self.n = int(n)
        self.goal = (int(goal[0]), int(goal[1]))
        self.horizon = int(horizon)
        self.obs_dim = 2
        self.action_dim = 2
        self._state = None
        self.step_count = 0
        self.done = True
        self.succeeded = False
        self._dist = self._shortest_path_distances()

    def _shortest_path_distances(self):
        # BFS from the goal over the deterministic grid
        dist = np.full((self.n, self.n), -1, dtype=int)
        gr, gc = self.goal
        dist[gr, gc] = 0
        frontier = [(gr, gc)]
        while frontier:
            nxt = []
            for r, c in frontier:
                for dr, dc in GRID_MOVES:
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < self.n and 0 <= cc < self.n and dist[rr, cc] < 0:
                        dist[rr, cc] = dist[r, c] + 1
                        nxt.append((rr, cc))
            frontier = nxt
        return dist

    def _obs(self):
        return np.asarray(self._state, dtype=np.float64) / (self.n - 1)

    def reset(self, seed, start=None):
        """Start uniformly over non-goal cells; identical seed, identical start."""
        if start is not None:
            self._state = (int(start[0]), int(start[1]))
        else:
            rng = np.random.default_rng(as_seedseq(seed))
            while True:
                r = int(rng.integers(0, self.n))
                c = int(rng.integers(0, self.n))
                if (r, c) != self.goal:
                    break
            self._state = (r, c)
        self.step_count = 0
        self.done = False
        self.succeeded = False
        return self._obs()

    def discretize(self, action):
        """Map a 2-d continuous action to a move index (documented tie rule)."""
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (2,):
            raise ShapeError("gridworld action must have shape (2,), got %r" % (action.shape,))
        scores = np.array([-action[0], action[0], -action[1], action[1]])
        # ties prefer the last direction in GRID_MOVES order
        return int(3 - np.argmax(scores[::-1]))

    def step(self, action):
        if self.done:
            raise UsageError("step() called on terminated gridworld episode")
        move = GRID_MOVES[self.discretize(action)]
        obs = self._obs()
        r, c = self._state
        rr = min(max(r + move[0], 0), self.n - 1)
        cc = min(max(c + move[1], 0), self.n - 1)
        self._state = (rr, cc)
        self.step_count += 1
        reached = (rr, cc) == self.goal
        reward = 1.0 if reached else 0.0
        self.succeeded = self.succeeded or reached
        self.done = reached or self.step_count >= self.horizon
        return Transition(obs=obs, action=np.array(action, dtype=np.float64), reward=reward,
                          next_obs=self._obs(), done=self.done)

    def expert_action(self, obs):
        """One shortest-path action; ties broken toward the last move in order."""
        cell = np.rint(np.asarray(obs, dtype=np.float64) * (self.n - 1)).astype(int)
        r, c = int(cell[0]), int(cell[1])
        if not (0 <= r < self.n and 0 <= c < self.n):
            raise UsageError("observation %r is outside the grid" % (obs,))
        best_idx, best_d = None, None
        for i, (dr, dc) in enumerate(GRID_MOVES):
            rr = min(max(r + dr, 0), self.n - 1)
            cc = min(max(c + dc, 0), self.n - 1)
            d = self._dist[rr, cc]
            if best_d is None or d <= best_d:
                best_d, best_idx = d, i
        return np.asarray(GRID_MOVES[best_idx], dtype=np.float64)


class PointmassEnv:
    """Dense-reward 2-d point mass with clipped velocity actions."""

    kind = POINTMASS

    def __init__(self, goal=(0.5, 0.5), horizon=100, sigma_env=0.0, goal_tol=0.05,
                 start_low=-1.0, start_high=1.0):
        self.goal = np.asarray(goal, dtype=np.float64)
        self.horizon = int(horizon)
        self.sigma_env = float(sigma_env)
        self.goal_tol = float(goal_tol)
        self.start_low = float(start_low)
        self.start_high = float(start_high)
        self.obs_dim = 2
        self.action_dim = 2
        self.pos = None
        self.step_count = 0
        self.done = True
        self.succeeded = False
        self._rng = None

    def reset(self, seed, start=None):
        self._rng = np.random.default_rng(as_seedseq(seed))
        if start is not None:
            self.pos = np.asarray(start, dtype=np.float64).copy()
        else:
            self.pos = self._rng.uniform(self.start_low, self.start_high, size=2)
        self.step_count = 0
        self.done = False
        self.succeeded = False
        return self.pos.copy()

    def step(self, action):
        if self.done:
            raise UsageError("step() called on terminated pointmass episode")
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (2,):
            raise ShapeError("pointmass action must have shape (2,), got %r" % (action.shape,))
        a = np.minimum(np.maximum(action, -1.0), 1.0)
        obs = self.pos.copy()
        d = self.pos - self.goal
        reward = -float(np.sqrt(d @ d)) - 0.01 * float(a @ a)
        self.pos = self.pos + 0.1 * a
        if self.sigma_env > 0:
            self.pos = self.pos + self.sigma_env * self._rng.standard_normal(2)
        self.step_count += 1
        d = self.pos - self.goal
        reached = float(np.sqrt(d @ d)) < self.goal_tol
        self.succeeded = self.succeeded or reached
        self.done = reached or self.step_count >= self.horizon
        return Transition(obs=obs, action=np.array(action, dtype=np.float64), reward=reward,
                          next_obs=self.pos.copy(), done=self.done)

    def expert_action(self, obs):
        """Proportional controller toward the goal, gain 2, clipped to [-1,1]^2."""
        pos = np.asarray(obs, dtype=np.float64)
        return np.clip(2.0 * (self.goal - pos), -1.0, 1.0)


def make_env(kind, **kwargs):
    if kind == GRIDWORLD:
        return GridworldEnv(**kwargs)
    if kind == POINTMASS:
        return PointmassEnv(**kwargs)
    raise ConfigError("unknown env %r (choices: %s)" % (kind, ", ".join(ENV_KINDS)))


def expert_policy(env_kind, state):
    """Expert action for `state` under the default geometry of `env_kind`."""
    return make_env(env_kind).expert_action(state)


@dataclass
class DemoDataset:
    """Expert (obs, action) pairs with provenance metadata."""

    obs: np.ndarray
    actions: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.obs = np.atleast_2d(np.asarray(self.obs, dtype=np.float64))
        self.actions = np.atleast_2d(np.asarray(self.actions, dtype=np.float64))
        if len(self.obs) == 0:
            raise ConfigError("demo dataset must be nonempty")
        if self.obs.shape[0] != self.actions.shape[0]:
            raise ConfigError("demo obs/action counts differ: %d vs %d"
                              % (self.obs.shape[0], self.actions.shape[0]))

    def __len__(self):
        return self.obs.shape[0]

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = dict(self.meta)
        meta["obs_dim"] = int(self.obs.shape[1])
        meta["action_dim"] = int(self.actions.shape[1])
        with open(path, "w") as f:
            f.write("# " + json.dumps(meta, sort_keys=True) + "\n")
            for o, a in zip(self.obs, self.actions):
                f.write(" ".join(repr(float(v)) for v in o) + " | "
                        + " ".join(repr(float(v)) for v in a) + "\n")

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.exists():
            raise UsageError("demo file not found: %s" % path)
        with open(path) as f:
            first = f.readline()
            if not first.startswith("# "):
                raise ConfigError("demo file %s missing header line" % path)
            meta = json.loads(first[2:])
            obs_dim, act_dim = int(meta["obs_dim"]), int(meta["action_dim"])
            obs_rows, act_rows = [], []
            for ln, line in enumerate(f, start=2):
                if not line.strip():
                    continue
                try:
                    o_part, a_part = line.split("|")
                    o = [float(v) for v in o_part.split()]
                    a = [float(v) for v in a_part.split()]
                except ValueError as e:
                    raise ConfigError("demo file %s line %d unparseable" % (path, ln)) from e
                if len(o) != obs_dim or len(a) != act_dim:
                    raise ConfigError("demo file %s line %d has inconsistent dimensions" % (path, ln))
                obs_rows.append(o)
                act_rows.append(a)
        return cls(np.asarray(obs_rows), np.asarray(act_rows), meta)


def generate_demos(env_kind, n_trajectories, action_noise_std, seed, env_kwargs=None):
    """Roll the expert with additive Gaussian action noise; keep only successes.

    Failed noisy episodes are discarded and resampled; demos are successful
    task completions by definition. Raises EnvMisconfigurationError if more
    than 100x the requested count of attempts is needed.
    """
    if n_trajectories < 1:
        raise UsageError("n_trajectories must be >= 1")
    env = make_env(env_kind, **(env_kwargs or {}))
    root = np.random.SeedSequence(seed)
    noise_rng = np.random.default_rng(root.spawn(1)[0])
    obs_rows, act_rows = [], []
    kept = 0
    attempts = 0
    episode_seed = 0
    while kept < n_trajectories:
        if attempts >= 100 * n_trajectories:
            raise EnvMisconfigurationError(
                "demo generation needed more than %d attempts; task or noise misconfigured"
                % (100 * n_trajectories))
        attempts += 1
        obs = env.reset((seed, episode_seed))
        episode_seed += 1
        ep_obs, ep_act = [], []
        while not env.done:
            action = env.expert_action(obs)
            if action_noise_std > 0:
                action = action + action_noise_std * noise_rng.standard_normal(env.action_dim)
            ep_obs.append(obs)
            ep_act.append(action)
            obs = env.step(action).next_obs
        if env.succeeded:
            obs_rows.extend(ep_obs)
            act_rows.extend(ep_act)
            kept += 1
    meta = {"env": env_kind, "seed": int(seed), "noise": float(action_noise_std),
            "n_trajectories": int(n_trajectories)}
    return DemoDataset(np.asarray(obs_rows), np.asarray(act_rows), meta)


def coverage_metric(demos: DemoDataset, reference_states) -> float:
    """Mean over reference states of the min distance to any demo state."""
    refs = np.atleast_2d(np.asarray(reference_states, dtype=np.float64))
    if len(refs) == 0:
        raise UsageError("reference state set must be nonempty")
    diff = refs[:, None, :] - demos.obs[None, :, :]
    dists = np.sqrt((diff * diff).sum(axis=2))
    return float(dists.min(axis=1).mean())
