"""Gradient-based inverse risk-sensitive RL.

The derivative D_theta Q* is the fixed point of the companion operator

    (S phi)(x,a) = phi(x,a) + alpha * E[D2 v~(y) + D1 v~(y) (gamma phi(x',a*) - phi(x,a))]

with y the temporal difference at Q* and a* the greedy action at x'.  Chained
through the Boltzmann policy it gives the gradient of the demonstration loss,
which ``irl_fit`` minimizes by projected gradient descent with backtracking.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import value_fn as vf
from .errors import (
    AllRestartsFailed,
    EmptyDemonstrations,
    InvalidConfig,
    SolverError,
    ZeroProbabilityDemo,
)
from .forward import (
    SolverConfig,
    adaptive_fixed_point,
    boltzmann_policy,
    default_radius,
    greedy_actions,
    initial_alpha,
    solve_q_fixed_point,
    temporal_differences,
)
from .mdp import DemonstrationSet, FiniteMDP, Policy, QTable, empirical_policy
from .value_fn import FREE_PARAMS, ValueFnSpec

log = logging.getLogger(__name__)

TIE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class DQTable:
    """phi(x, a) = D_theta Q*(x, a), shape (S, A, d)."""

    phi: np.ndarray
    spec: ValueFnSpec | None = None
    diagnostics: dict | None = None

    @property
    def d(self) -> int:
        return self.phi.shape[-1]


def _phi(phi) -> np.ndarray:
    return np.asarray(phi.phi if isinstance(phi, DQTable) else phi, dtype=float)


def _q(Q) -> np.ndarray:
    return np.asarray(Q.values if isinstance(Q, QTable) else Q, dtype=float)


# ---------------------------------------------------------------------------
# operator S


class _SParts:
    """Quantities of S that depend only on (theta, Q*): E[D2 v~], D1 v~ per outcome, a*."""

    def __init__(self, mdp: FiniteMDP, spec: ValueFnSpec, Q: np.ndarray):
        lv = mdp.live
        y = temporal_differences(mdp, Q)
        self.mdp = mdp
        self.d1 = vf.deriv_y(spec, y)
        self.d2_mean = mdp.expect(vf.deriv_theta(spec, y))
        self.a_star = greedy_actions(mdp, Q)
        self.next = lv.next
        self.d1_mean = mdp.expect(self.d1)
        self.mask = mdp.active[..., None]
        ties = _count_ties(mdp, Q)
        if ties:
            log.debug("greedy action ties within %.0e at %d states", TIE_TOL, ties)

    def residual(self, phi: np.ndarray) -> np.ndarray:
        mdp = self.mdp
        nxt = phi[self.next, self.a_star[self.next]]  # (n_live, d)
        g = self.d2_mean + mdp.gamma * mdp.expect(self.d1[:, None] * nxt) - self.d1_mean[..., None] * phi
        return np.where(self.mask, g, 0.0)


def _count_ties(mdp: FiniteMDP, Q: np.ndarray) -> int:
    q = np.where(mdp.admissible, Q, -np.inf)
    top2 = -np.sort(-q, axis=1)[:, :2]
    if top2.shape[1] < 2:
        return 0
    gap = top2[:, 0] - top2[:, 1]
    return int(np.sum((gap < TIE_TOL) & ~mdp.absorbing))


def apply_S(mdp: FiniteMDP, spec: ValueFnSpec, Qstar, phi, alpha: float) -> DQTable:
    """One application of S at the fixed point ``Qstar`` of ``spec``."""
    parts = _SParts(mdp, spec, _q(Qstar))
    phi = _phi(phi)
    return DQTable(phi + alpha * parts.residual(phi), spec)


def solve_dq_fixed_point(
    mdp: FiniteMDP,
    spec: ValueFnSpec,
    Qstar,
    cfg: SolverConfig | None = None,
    phi0=None,
    method: str = "iterate",
) -> DQTable:
    """D_theta Q* as the fixed point of S.

    ``method="iterate"`` runs the adaptive-alpha iteration on all d components
    at once (S acts on each component separately, so this is the same as d
    independent solves).  ``method="direct"`` solves the linear system
    E[D1] phi - gamma E[D1 phi(x',a*)] = E[D2] with a sparse factorization.
    """
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    Q = _q(Qstar)
    parts = _SParts(mdp, spec, Q)
    d = spec.n_params
    if method == "direct":
        phi = _direct_solve(parts, d)
        info = {"method": "direct", "residual": float(np.abs(parts.residual(phi)).max())}
    elif method == "iterate":
        K = default_radius(mdp, spec, cfg)
        alpha = initial_alpha(mdp, spec, cfg, K)
        x0 = np.zeros(Q.shape + (d,)) if phi0 is None else np.where(parts.mask, _phi(phi0), 0.0)
        phi, info = adaptive_fixed_point(lambda p, g, a: p + a * g, parts.residual, x0, alpha, cfg,
                                         label="D_theta Q fixed point")
        info.update(method="iterate", alpha0=alpha)
    else:
        raise InvalidConfig(f"unknown method {method!r}")
    info["seconds"] = time.perf_counter() - t0
    return DQTable(phi, spec, info)


def _direct_solve(parts: _SParts, d: int) -> np.ndarray:
    from scipy.sparse import coo_matrix
    from scipy.sparse.linalg import spsolve

    mdp = parts.mdp
    lv = mdp.live
    S, A = mdp.n_states, mdp.n_actions
    n = S * A
    free = mdp.active.ravel()
    # rows of pinned pairs become phi = 0
    diag = np.where(free, parts.d1_mean.ravel(), 1.0)
    col = parts.next * A + parts.a_star[parts.next]
    keep = free[lv.pair] & free[col]
    off = coo_matrix((-mdp.gamma * lv.prob[keep] * parts.d1[keep], (lv.pair[keep], col[keep])), shape=(n, n))
    mat = (off + coo_matrix((diag, (np.arange(n), np.arange(n))), shape=(n, n))).tocsc()
    rhs = np.where(free[:, None], parts.d2_mean.reshape(n, d), 0.0)
    sol = spsolve(mat, rhs)
    return np.asarray(sol).reshape(S, A, d)


# ---------------------------------------------------------------------------
# policy derivative and losses


def policy_derivative(Q, phi, beta: float, admissible=None) -> np.ndarray:
    """D_theta pi(a|x) = pi * beta * (phi - sum_a' pi(a'|x) phi(x,a')), shape (S, A, d)."""
    pi = boltzmann_policy(Q, beta, admissible).probs
    phi = _phi(phi)
    centered = phi - np.einsum("xa,xad->xd", pi, phi)[:, None, :]
    return pi[..., None] * beta * centered


def _demo_pairs(policy: Policy, demos: DemonstrationSet):
    if demos.N == 0:
        raise EmptyDemonstrations("no state-action pairs in demonstration set")
    if policy.probs.shape != demos.counts.shape:
        raise InvalidConfig(f"policy shape {policy.probs.shape} != demos {demos.counts.shape}")
    seen = demos.counts > 0
    p = policy.probs[seen]
    if np.any(p <= 0):
        x, a = np.argwhere(seen & (policy.probs <= 0))[0]
        raise ZeroProbabilityDemo(f"policy assigns zero probability to demonstrated pair ({x}, {a})")
    return seen


def loss_nll(policy: Policy, demos: DemonstrationSet) -> float:
    """-sum_{x,a} w(x,a) log pi(a|x)."""
    seen = _demo_pairs(policy, demos)
    return float(-np.sum(demos.weights[seen] * np.log(policy.probs[seen])))


def loss_kl(policy: Policy, demos: DemonstrationSet) -> float:
    """sum over visited x of KL(pi_hat(.|x) || pi(.|x)), unweighted."""
    seen = _demo_pairs(policy, demos)
    pi_hat = empirical_policy(demos).probs
    return float(np.sum(pi_hat[seen] * (np.log(pi_hat[seen]) - np.log(policy.probs[seen]))))


LOSSES = {"nll": loss_nll, "kl": loss_kl}


def _outer_weights(demos: DemonstrationSet, kind: str) -> np.ndarray:
    """c(x,a) such that the loss gradient is -sum c(x,a) D pi(a|x) / pi(a|x)."""
    if kind == "nll":
        return demos.weights
    if kind == "kl":
        return empirical_policy(demos).probs
    raise InvalidConfig(f"unknown loss {kind!r}")


@dataclass(frozen=True, eq=False)
class LossEval:
    """Everything computed at one theta: loss, gradient and the tables behind them."""

    theta: np.ndarray
    loss: float
    grad: np.ndarray
    Q: QTable
    phi: DQTable
    policy: Policy


def evaluate_loss(
    mdp: FiniteMDP,
    spec: ValueFnSpec,
    demos: DemonstrationSet,
    beta: float = 4.0,
    kind: str = "nll",
    cfg: SolverConfig | None = None,
    warm: LossEval | None = None,
    with_grad: bool = True,
    dq_method: str = "iterate",
) -> LossEval:
    cfg = cfg or SolverConfig(tol=1e-10)
    Q = solve_q_fixed_point(mdp, spec, cfg, Q0=None if warm is None else warm.Q)
    policy = boltzmann_policy(Q, beta, mdp)
    loss = LOSSES[kind](policy, demos)
    if not with_grad:
        return LossEval(spec.params(), loss, np.full(spec.n_params, np.nan), Q, None, policy)
    phi = solve_dq_fixed_point(mdp, spec, Q, cfg, phi0=None if warm is None or warm.phi is None else warm.phi,
                               method=dq_method)
    dpi = policy_derivative(Q, phi, beta, mdp)
    c = _outer_weights(demos, kind)
    seen = demos.counts > 0
    ratio = np.where(seen[..., None], dpi / np.where(seen, policy.probs, 1.0)[..., None], 0.0)
    grad = -np.einsum("xa,xad->d", np.where(seen, c, 0.0), ratio)
    return LossEval(spec.params(), loss, grad, Q, phi, policy)


def loss_gradient(
    mdp: FiniteMDP,
    spec: ValueFnSpec,
    demos: DemonstrationSet,
    beta: float = 4.0,
    kind: str = "nll",
    cfg: SolverConfig | None = None,
) -> np.ndarray:
    """D_theta of the chosen loss at ``spec``'s parameters."""
    return evaluate_loss(mdp, spec, demos, beta, kind, cfg).grad


# ---------------------------------------------------------------------------
# Algorithm 1

DEFAULT_BOX = {
    "k_minus": (1e-3, 10.0),
    "k_plus": (1e-3, 10.0),
    "zeta_minus": (0.3, 2.0),
    "zeta_plus": (0.3, 2.0),
    "lam": (-1.0, 1.0),
    "kappa": (-0.99, 0.99),
}
# the entropic coefficient is kept at least this far from zero
LAMBDA_FLOOR = 1e-3


@dataclass(frozen=True)
class IRLConfig:
    restarts: int = 5
    param_box: dict | None = None
    max_outer_iters: int = 200
    grad_tol: float = 1e-6
    armijo_c1: float = 1e-4
    backtrack_shrink: float = 0.5
    max_backtracks: int = 30
    step0: float = 1.0
    loss: str = "nll"
    beta: float = 4.0
    scale_by_box: bool = True
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(tol=1e-10))
    dq_method: str = "iterate"

    def box(self, family: str) -> np.ndarray:
        names = FREE_PARAMS[family.lower()]
        user = self.param_box or {}
        return np.array([user.get(n, DEFAULT_BOX[n]) for n in names], dtype=float)

    def validate(self, family: str) -> None:
        if self.restarts < 1:
            raise InvalidConfig("restarts must be at least 1")
        if self.loss not in LOSSES:
            raise InvalidConfig(f"loss must be one of {sorted(LOSSES)}")
        if self.max_outer_iters < 0:
            raise InvalidConfig("max_outer_iters must be non-negative")
        box = self.box(family)
        if np.any(box[:, 0] >= box[:, 1]):
            raise InvalidConfig(f"param_box lower bounds must be below upper bounds: {box.tolist()}")
        if not 0 < self.backtrack_shrink < 1:
            raise InvalidConfig("backtrack_shrink must lie in (0, 1)")


@dataclass
class RestartRecord:
    seed: int
    theta_init: np.ndarray
    theta_final: np.ndarray | None = None
    loss_trace: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    error: str | None = None

    @property
    def final_loss(self) -> float:
        return self.loss_trace[-1] if self.loss_trace else math.inf

    def to_record(self) -> dict:
        return {
            "seed": self.seed,
            "theta_init": self.theta_init.tolist(),
            "theta_final": None if self.theta_final is None else self.theta_final.tolist(),
            "loss_trace": [float(v) for v in self.loss_trace],
            "converged": self.converged,
            "iterations": self.iterations,
            "error": self.error,
        }


@dataclass
class IRLResult:
    family: str
    restarts: list
    best_index: int
    best_spec: ValueFnSpec
    best_policy: Policy
    config: IRLConfig

    @property
    def best_theta(self) -> np.ndarray:
        return self.best_spec.params()

    @property
    def best_loss(self) -> float:
        return self.restarts[self.best_index].final_loss

    def to_record(self) -> dict:
        return {
            "family": vf.FAMILY_NAMES[self.family],
            "param_names": list(self.best_spec.param_names),
            "best_index": self.best_index,
            "best_loss": self.best_loss,
            "best_theta": dict(zip(self.best_spec.param_names, self.best_theta.tolist())),
            "best_spec": self.best_spec.to_record(),
            "loss": self.config.loss,
            "beta": self.config.beta,
            "restarts": [r.to_record() for r in self.restarts],
        }


def project(theta: np.ndarray, box: np.ndarray, family: str) -> np.ndarray:
    """Clip onto the box; the entropic coefficient is also pushed off zero."""
    out = np.clip(theta, box[:, 0], box[:, 1])
    if family == "entropic" and abs(out[0]) < LAMBDA_FLOOR:
        out[0] = math.copysign(LAMBDA_FLOOR, out[0] if out[0] != 0 else 1.0)
    return out


def sample_initial(box: np.ndarray, family: str, rng: np.random.Generator) -> np.ndarray:
    return project(rng.uniform(box[:, 0], box[:, 1]), box, family)


def _fit_one(mdp, demos, template: ValueFnSpec, cfg: IRLConfig, seed: int) -> tuple[RestartRecord, LossEval | None]:
    family = template.family
    box = cfg.box(family)
    rng = np.random.default_rng(seed)
    theta = sample_initial(box, family, rng)
    rec = RestartRecord(seed=seed, theta_init=theta.copy())
    # diagonal preconditioner: box widths put all coordinates on a common scale
    scale = (box[:, 1] - box[:, 0]) ** 2 if cfg.scale_by_box else np.ones(len(box))
    scale = scale / scale.max()

    def evaluate(th, warm=None, with_grad=True):
        return evaluate_loss(mdp, template.with_params(th), demos, cfg.beta, cfg.loss, cfg.solver,
                             warm=warm, with_grad=with_grad, dq_method=cfg.dq_method)

    try:
        cur = evaluate(theta, with_grad=cfg.max_outer_iters > 0)
    except SolverError as exc:
        rec.error = f"initial solve failed: {exc}"
        return rec, None
    rec.loss_trace.append(cur.loss)
    rec.theta_final = theta.copy()
    step = cfg.step0
    for it in range(cfg.max_outer_iters):
        rec.iterations = it + 1
        g = cur.grad
        accepted = None
        eta = step
        for _ in range(cfg.max_backtracks):
            trial = project(cur.theta - eta * scale * g, box, family)
            delta = trial - cur.theta
            if not np.any(delta):
                break
            try:
                cand = evaluate(trial, warm=cur, with_grad=False)
            except SolverError:
                cand = None
            if cand is not None and cand.loss <= cur.loss + cfg.armijo_c1 * float(g @ delta):
                accepted = trial
                break
            eta *= cfg.backtrack_shrink
        if accepted is None:
            # no descent available at this resolution: stationary for the projected problem
            rec.converged = True
            break
        prev = cur
        try:
            cur = evaluate(accepted, warm=cand)
        except SolverError as exc:
            rec.error = f"gradient solve failed: {exc}"
            cur = prev
            break
        rec.loss_trace.append(cur.loss)
        rec.theta_final = cur.theta.copy()
        # try a larger step next time when the first guess was accepted
        step = min(eta / cfg.backtrack_shrink, 1e3) if eta == step else eta
        if abs(prev.loss - cur.loss) < cfg.grad_tol:
            rec.converged = True
            break
    log.info("restart seed=%d loss=%.6g theta=%s iters=%d converged=%s",
             seed, rec.final_loss, np.round(rec.theta_final, 6).tolist(), rec.iterations, rec.converged)
    return rec, cur


def irl_fit(
    mdp: FiniteMDP,
    demos: DemonstrationSet,
    family,
    cfg: IRLConfig | None = None,
    rng_seed: int = 0,
    n_jobs: int = 1,
) -> IRLResult:
    """Projected gradient descent with Armijo backtracking from several random starts.

    ``family`` is a family name or a template ValueFnSpec whose non-free fields
    (epsilon, y0, v0) are kept fixed.  Restart k is seeded with rng_seed + k.
    """
    cfg = cfg or IRLConfig()
    template = family if isinstance(family, ValueFnSpec) else ValueFnSpec(family)
    cfg.validate(template.family)
    if demos.N == 0:
        raise EmptyDemonstrations("no state-action pairs in demonstration set")
    seeds = [int(rng_seed) + k for k in range(cfg.restarts)]
    if n_jobs > 1 and cfg.restarts > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=min(n_jobs, cfg.restarts)) as pool:
            outs = list(pool.map(_fit_one, [mdp] * len(seeds), [demos] * len(seeds),
                                 [template] * len(seeds), [cfg] * len(seeds), seeds))
    else:
        outs = [_fit_one(mdp, demos, template, cfg, s) for s in seeds]
    records = [r for r, _ in outs]
    ok = [i for i, (r, e) in enumerate(outs) if e is not None and r.loss_trace]
    if not ok:
        raise AllRestartsFailed("; ".join(r.error or "unknown failure" for r in records))
    best = min(ok, key=lambda i: records[i].final_loss)
    best_spec = template.with_params(records[best].theta_final)
    best_policy = outs[best][1].policy
    return IRLResult(template.family, records, best, best_spec, best_policy, cfg)


def refit_policy(mdp: FiniteMDP, spec: ValueFnSpec, beta: float = 4.0, cfg: SolverConfig | None = None) -> Policy:
    """Boltzmann policy induced by ``spec``; convenience for evaluation code."""
    return boltzmann_policy(solve_q_fixed_point(mdp, spec, cfg or SolverConfig(tol=1e-10)), beta, mdp)


__all__ = [
    "DQTable", "IRLConfig", "IRLResult", "LossEval", "RestartRecord",
    "apply_S", "solve_dq_fixed_point", "policy_derivative", "loss_nll", "loss_kl",
    "loss_gradient", "evaluate_loss", "irl_fit", "project", "refit_policy",
]
