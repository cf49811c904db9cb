"""Independent reference implementations used by the tests.

Nothing here imports riskrl: each oracle recomputes its quantity from first
principles (dict-based MDPs, plain Bellman iteration, mpmath arithmetic) so
that agreement with the package is evidence rather than a tautology.
"""

import math

import numpy as np
from mpmath import mp, mpf

MOVES = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]
LEGEND = {"S": 0.1, ".": 0.1, "g": -0.1, "G": 1.0, "B": -1.0}


def grid_outcomes(rows, intended=0.93, slip=0.01):
    """Enumerate every direction per (cell, action) and renormalize over in-grid moves.

    Returns (outcomes, absorbing) with outcomes[(x, a)] = {next: (prob, reward)}.
    """
    H, W = len(rows), len(rows[0])
    absorbing = {r * W + c for r in range(H) for c in range(W) if rows[r][c] in "GB"}
    out = {}
    for r in range(H):
        for c in range(W):
            x = r * W + c
            for a in range(8):
                if x in absorbing:
                    out[(x, a)] = {x: (1.0, 0.0)}
                    continue
                raw = {}
                for d, (dr, dc) in enumerate(MOVES):
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < H and 0 <= cc < W:
                        raw[rr * W + cc] = raw.get(rr * W + cc, 0.0) + (intended if d == a else slip)
                total = sum(raw.values())
                out[(x, a)] = {y: (p / total, LEGEND[rows[y // W][y % W]]) for y, p in raw.items()}
    return out, absorbing


def value_iteration(outcomes, n_states, n_actions, gamma, absorbing, tol=1e-14, max_iter=100_000):
    """Classical Bellman optimality iteration, Q(x,a) = sum p (r + gamma max Q(y, .))."""
    Q = np.zeros((n_states, n_actions))
    for _ in range(max_iter):
        V = Q.max(axis=1)
        new = np.zeros_like(Q)
        for (x, a), succ in outcomes.items():
            if x in absorbing:
                continue
            new[x, a] = sum(p * (r + gamma * V[y]) for y, (p, r) in succ.items())
        if np.abs(new - Q).max() < tol:
            return new
        Q = new
    raise RuntimeError("value iteration did not converge")


def mp_value(family, y, k_minus=1, k_plus=1, zeta_minus=1, zeta_plus=1, lam=1, kappa=0, epsilon=1e-2, y0=0):
    """Value-function closed forms at 50 digits."""
    mp.dps = 50
    u = mpf(y) - mpf(y0)
    if family == "entropic":
        return mp.expm1(mpf(lam) * u) / mpf(lam)
    if family == "linear":
        return (1 - mpf(kappa)) * u if u > 0 else (1 + mpf(kappa)) * u
    e = mpf(epsilon) if family == "lprospect" else mpf(0)
    if u > 0:
        return mpf(k_plus) * ((u + e) ** mpf(zeta_plus) - e ** mpf(zeta_plus))
    return -mpf(k_minus) * ((-u + e) ** mpf(zeta_minus) - e ** mpf(zeta_minus))


def central_difference(f, x, h):
    return (f(x + h) - f(x - h)) / (2 * h)


def entropic_bandit(lam):
    """Q* and dQ*/dlam for rewards +-1 w.p. 1/2 under the normalized entropic map."""
    q = math.log(math.cosh(lam)) / lam
    dq = math.tanh(lam) / lam - math.log(math.cosh(lam)) / lam**2
    return q, dq


def truncnorm_mc_mean(loc, scale, lower, upper, n, seed):
    """Monte Carlo mean of a truncated normal by rejection sampling."""
    rng = np.random.default_rng(seed)
    kept, total = [], 0
    while total < n:
        z = rng.normal(loc, scale, size=2 * (n - total))
        z = z[(z >= lower) & (z <= upper)][: n - total]
        kept.append(z)
        total += z.size
    return float(np.concatenate(kept).mean())
