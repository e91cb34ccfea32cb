"""Independent oracles used across the test suite.

These deliberately avoid the library's own gradient/GAE/value code paths:
finite differences, exhaustive value iteration, and brute-force double loops
are the reference every analytic implementation is checked against.
"""

import numpy as np


def finite_diff_grad(f, x, step=1e-5):
    """Central-difference gradient of scalar f at x (column by column)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        g[i] = (f(xp) - f(xm)) / (2.0 * step)
    return g


def rel_err(approx, exact):
    """Norm-based relative error, safe near zero."""
    approx = np.asarray(approx, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    denom = max(np.linalg.norm(exact), 1e-12)
    return np.linalg.norm(approx - exact) / denom


def value_iteration_grid(n, goal, gamma, sweeps=500):
    """Exact discounted values for the deterministic n x n grid.

    Reward 1 on entering the goal cell, episode ends there. Actions are
    up/down/left/right with walls clamping. Returns V and per-state-action
    Q arrays indexed [row, col, action] with actions ordered
    (up, down, left, right).
    """
    moves = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    v = np.zeros((n, n))
    for _ in range(sweeps):
        nxt = np.zeros_like(v)
        for r in range(n):
            for c in range(n):
                if (r, c) == goal:
                    continue
                best = -np.inf
                for dr, dc in moves:
                    rr = min(max(r + dr, 0), n - 1)
                    cc = min(max(c + dc, 0), n - 1)
                    reward = 1.0 if (rr, cc) == goal else 0.0
                    cont = 0.0 if (rr, cc) == goal else v[rr, cc]
                    best = max(best, reward + gamma * cont)
                nxt[r, c] = best
        if np.max(np.abs(nxt - v)) < 1e-14:
            v = nxt
            break
        v = nxt
    q = np.zeros((n, n, 4))
    for r in range(n):
        for c in range(n):
            for a, (dr, dc) in enumerate(moves):
                rr = min(max(r + dr, 0), n - 1)
                cc = min(max(c + dc, 0), n - 1)
                reward = 1.0 if (rr, cc) == goal else 0.0
                cont = 0.0 if (rr, cc) == goal else v[rr, cc]
                q[r, c, a] = reward + gamma * cont
    return v, q


def brute_force_gae(rewards, values, next_values, dones, gamma, lam):
    """GAE via the literal double loop over future TD errors.

    `values` are V(s_t); `next_values` are V(s_{t+1}) (used when the step is
    non-terminal, which includes a batch tail truncated mid-episode).
    """
    n = len(rewards)
    deltas = np.zeros(n)
    for t in range(n):
        terminal = dones[t]
        if terminal:
            deltas[t] = rewards[t] - values[t]
        else:
            deltas[t] = rewards[t] + gamma * next_values[t] - values[t]
    adv = np.zeros(n)
    for t in range(n):
        acc = 0.0
        coef = 1.0
        for j in range(t, n):
            acc += coef * deltas[j]
            if dones[j]:
                break
            coef *= gamma * lam
        adv[t] = acc
    return adv


def brute_force_coverage(demo_states, reference_states):
    """Mean over references of the min distance to any demo state, O(N*M)."""
    total = 0.0
    for ref in reference_states:
        best = np.inf
        for s in demo_states:
            d = np.linalg.norm(np.asarray(ref, dtype=float) - np.asarray(s, dtype=float))
            if d < best:
                best = d
        total += best
    return total / len(reference_states)


def cycle_fixed_point(alpha, m):
    """Fixed point of the 1-D interleaved cycle map with targets 0 (IL) and 1 (RL)."""
    u = 1.0 - alpha
    return (1.0 - u ** m) / (1.0 - u ** (m + 1))
