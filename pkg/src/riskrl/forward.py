"""Risk-sensitive forward solvers.

The operator

    (TQ)(x,a) = alpha * E[v~(r + gamma * max_a' Q(x',a') - Q(x,a))] + Q(x,a)

is iterated to its fixed point with an adaptive step size, and sampled by the
risk-sensitive Q-learning procedure.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import value_fn as vf
from .errors import (
    AlphaUnderflow,
    InvalidConfig,
    MaxItersExceeded,
    NoAdmissibleK,
    UnboundedDerivative,
)
from .mdp import FiniteMDP, Policy, QTable, _cumulative
from .value_fn import ValueFnSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    alpha0: float | None = None
    alpha_min: float = 1e-6
    shrink: float = 0.5
    grow: float = 1.1
    grow_period: int = 50
    tol: float = 1e-8
    max_iters: int = 100_000
    radius: float | None = None
    strict_k: bool = False

    def validate(self) -> None:
        if self.alpha0 is not None and not 0 < self.alpha0 <= 1:
            raise InvalidConfig(f"alpha0={self.alpha0} not in (0, 1]")
        if not 0 < self.shrink < 1:
            raise InvalidConfig(f"shrink={self.shrink} not in (0, 1)")
        if not self.grow > 1:
            raise InvalidConfig(f"grow={self.grow} must exceed 1")
        if not self.tol > 0:
            raise InvalidConfig("tol must be positive")


@dataclass(frozen=True)
class LearningRateSchedule:
    """alpha_t(x,a) = c / n_t(x,a)**omega with n_t the visit count."""

    c: float = 1.0
    omega: float = 0.8

    def __post_init__(self):
        if not 0.5 < self.omega <= 1:
            raise InvalidConfig(f"omega={self.omega} must lie in (0.5, 1]")
        if not self.c > 0:
            raise InvalidConfig("c must be positive")

    def __call__(self, n):
        return self.c / np.power(n, self.omega)


def _values(Q) -> np.ndarray:
    return np.asarray(Q.values if isinstance(Q, QTable) else Q, dtype=float)


def greedy_values(mdp: FiniteMDP, Q: np.ndarray) -> np.ndarray:
    """max over admissible actions, per state."""
    return np.where(mdp.admissible, Q, -np.inf).max(axis=1)


def greedy_actions(mdp: FiniteMDP, Q: np.ndarray) -> np.ndarray:
    """argmax over admissible actions; ties go to the lowest index."""
    return np.argmax(np.where(mdp.admissible, Q, -np.inf), axis=1)


def temporal_differences(mdp: FiniteMDP, Q: np.ndarray) -> np.ndarray:
    """TD for every live outcome, aligned with ``mdp.live``."""
    lv = mdp.live
    V = greedy_values(mdp, Q)
    return lv.reward + mdp.gamma * V[lv.next] - Q[lv.x, lv.a]


def expected_tilde(mdp: FiniteMDP, spec: ValueFnSpec, Q) -> np.ndarray:
    """E[v~(TD)] per (x, a); zero on absorbing and inadmissible pairs."""
    Q = _values(Q)
    g = mdp.expect(vf.eval_tilde(spec, temporal_differences(mdp, Q)))
    return np.where(mdp.active, g, 0.0)


def apply_T(mdp: FiniteMDP, spec: ValueFnSpec, Q, alpha: float) -> QTable:
    Q = _values(Q)
    new = Q + alpha * expected_tilde(mdp, spec, Q)
    new = np.where(mdp.active, new, 0.0)
    return QTable(new, spec)


def default_radius(mdp: FiniteMDP, spec: ValueFnSpec, cfg: SolverConfig) -> float | None:
    if cfg.radius is not None:
        return cfg.radius
    try:
        return vf.find_admissible_K(spec, mdp.reward_bound, mdp.gamma)
    except NoAdmissibleK:
        if cfg.strict_k:
            raise
        return None


def initial_alpha(mdp: FiniteMDP, spec: ValueFnSpec, cfg: SolverConfig, K: float | None) -> float:
    """min(1, 1/L_K) when a radius is known, else 1 (the adaptive scheme backs off)."""
    if cfg.alpha0 is not None:
        return cfg.alpha0
    if K is None:
        return 1.0
    M = mdp.reward_bound
    try:
        L = vf.lipschitz_bounds(spec, (-M - K, M + K)).L_K
    except UnboundedDerivative:
        return 1.0
    return min(1.0, 1.0 / L)


def adaptive_fixed_point(step, residual, x0, alpha, cfg: SolverConfig, label="fixed point"):
    """Iterate ``x <- step(x, alpha)`` with the adaptive step-size scheme.

    ``residual(x)`` is the alpha-free residual (E[...] term) whose sup norm must
    fall below ``cfg.tol``.  A step whose increment exceeds the previous
    increment at the same alpha is rejected and alpha is shrunk; after
    ``grow_period`` consecutive accepted steps alpha grows (capped at 1).
    """
    x = x0
    prev_inc = math.inf
    streak = 0
    n_shrinks = 0
    for it in range(1, cfg.max_iters + 1):
        g = residual(x)
        res = float(np.max(np.abs(g))) if g.size else 0.0
        if res < cfg.tol:
            return x, {"iterations": it - 1, "alpha": alpha, "residual": res, "shrinks": n_shrinks}
        cand = step(x, g, alpha)
        inc = alpha * res
        if not np.all(np.isfinite(cand)) or inc > prev_inc:
            alpha *= cfg.shrink
            n_shrinks += 1
            streak = 0
            prev_inc = math.inf
            if alpha < cfg.alpha_min:
                raise AlphaUnderflow(f"{label}: alpha fell below {cfg.alpha_min} after {it} iterations")
            continue
        x = cand
        prev_inc = inc
        streak += 1
        if streak % cfg.grow_period == 0 and alpha < 1.0:
            alpha = min(1.0, alpha * cfg.grow)
            prev_inc = math.inf
    raise MaxItersExceeded(f"{label}: no convergence in {cfg.max_iters} iterations (residual {res:.3e})")


def solve_q_fixed_point(
    mdp: FiniteMDP,
    spec: ValueFnSpec,
    cfg: SolverConfig | None = None,
    Q0=None,
) -> QTable:
    """Fixed point Q* of T, i.e. E[v~(TD)] = 0 at every free (x, a).

    Returns a QTable whose ``diagnostics`` carry iterations, final alpha,
    residual, radius K and wall time.
    """
    cfg = cfg or SolverConfig()
    cfg.validate()
    spec.validate()
    t0 = time.perf_counter()
    K = default_radius(mdp, spec, cfg)
    alpha = initial_alpha(mdp, spec, cfg, K)
    active = mdp.active
    Q = np.zeros((mdp.n_states, mdp.n_actions)) if Q0 is None else np.where(active, _values(Q0), 0.0)

    def residual(Q):
        return expected_tilde(mdp, spec, Q)

    def step(Q, g, a):
        return Q + a * g

    Q, info = adaptive_fixed_point(step, residual, Q, alpha, cfg, label="Q fixed point")
    info.update(radius=K, alpha0=alpha, seconds=time.perf_counter() - t0,
                sup_norm=float(np.abs(Q).max()))
    if K is not None and info["sup_norm"] > K:
        log.warning("Q* sup norm %.4g exceeds admissible radius %.4g", info["sup_norm"], K)
    log.debug("solve_q_fixed_point %s", info)
    return QTable(Q, spec, info)


# ---------------------------------------------------------------------------
# policies


def _admissible_mask(Q: np.ndarray, admissible) -> np.ndarray:
    if admissible is None:
        return np.ones(Q.shape, dtype=bool)
    if isinstance(admissible, FiniteMDP):
        return admissible.admissible
    return np.asarray(admissible, dtype=bool)


def boltzmann_policy(Q, beta: float, admissible=None) -> Policy:
    """pi(a|x) proportional to exp(beta Q(x,a)) over admissible actions."""
    if not beta > 0:
        raise InvalidConfig("beta must be positive")
    Q = _values(Q)
    mask = _admissible_mask(Q, admissible)
    z = np.where(mask, beta * Q, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    return Policy(e / e.sum(axis=1, keepdims=True))


def greedy_policy(Q, admissible=None) -> Policy:
    """Point mass on the argmax; ties broken by lowest action index."""
    Q = _values(Q)
    mask = _admissible_mask(Q, admissible)
    best = np.argmax(np.where(mask, Q, -np.inf), axis=1)
    probs = np.zeros(Q.shape)
    probs[np.arange(Q.shape[0]), best] = 1.0
    return Policy(probs)


# ---------------------------------------------------------------------------
# stochastic approximation


def q_learning(
    mdp: FiniteMDP,
    spec: ValueFnSpec,
    schedule: LearningRateSchedule | None = None,
    behavior_policy: Policy | None = None,
    n_steps: int = 100_000,
    rng_seed=None,
    epsilon: float = 0.1,
    start=None,
    clip_to_ball: bool = True,
    radius: float | None = None,
) -> QTable:
    """Risk-sensitive Q-learning: Q(x,a) += alpha_t(x,a) * v~(TD_t).

    Without a ``behavior_policy`` actions are epsilon-greedy in the current Q.
    Episodes restart on entering an absorbing state, at ``start`` when given or
    else at a uniformly drawn non-absorbing state.  With ``clip_to_ball`` the
    iterates are clipped to [-K, K] when an admissible radius is known; the
    number of excursions is reported in the diagnostics.
    """
    schedule = schedule or LearningRateSchedule()
    spec.validate()
    rng = np.random.default_rng(rng_seed)
    nS, nA = mdp.n_states, mdp.n_actions
    K = radius
    if K is None and clip_to_ball:
        try:
            K = vf.find_admissible_K(spec, mdp.reward_bound, mdp.gamma)
        except NoAdmissibleK:
            K = None
    Q = np.zeros((nS, nA))
    visits = np.zeros((nS, nA), dtype=np.int64)
    adm_lists = [np.flatnonzero(row) for row in mdp.admissible]
    free_states = np.flatnonzero(~mdp.absorbing)
    out_cdf = _cumulative(mdp.out_prob)
    pol_cdf = None if behavior_policy is None else _cumulative(np.where(mdp.admissible, behavior_policy.probs, 0.0))
    gamma = mdp.gamma
    excursions = 0
    u = rng.random((n_steps, 3))

    def restart(r):
        if start is not None:
            return int(start)
        return int(free_states[min(int(r * free_states.size), free_states.size - 1)])

    x = restart(rng.random())
    for t in range(n_steps):
        if mdp.absorbing[x]:
            x = restart(u[t, 2])
        acts = adm_lists[x]
        if pol_cdf is not None:
            a = int(min(np.searchsorted(pol_cdf[x], u[t, 0], side="right"), nA - 1))
        elif u[t, 0] < epsilon:
            a = int(acts[min(int(u[t, 1] * acts.size), acts.size - 1)])
        else:
            row = Q[x, acts]
            a = int(acts[np.argmax(row)])
        w = int(min(np.searchsorted(out_cdf[x, a], u[t, 1], side="right"), mdp.n_outcomes - 1))
        y = int(mdp.out_next[x, a, w])
        r = mdp.out_reward[x, a, w]
        v_next = 0.0 if mdp.absorbing[y] else Q[y, adm_lists[y]].max()
        td = r + gamma * v_next - Q[x, a]
        visits[x, a] += 1
        Q[x, a] += schedule(visits[x, a]) * vf.eval_tilde(spec, td)
        if K is not None and abs(Q[x, a]) > K:
            excursions += 1
            if clip_to_ball:
                Q[x, a] = math.copysign(K, Q[x, a])
        x = y
    info = {"steps": n_steps, "radius": K, "excursions": excursions,
            "min_visits": int(visits[mdp.active].min()) if mdp.active.any() else 0}
    return QTable(np.where(mdp.active, Q, 0.0), spec, info)


def config_record(cfg: SolverConfig) -> dict:
    return asdict(cfg)
