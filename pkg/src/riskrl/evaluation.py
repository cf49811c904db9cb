"""Policy-comparison metrics, sample-complexity bounds and the sample-size sweep."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import AbsoluteContinuityViolation, DimensionMismatch, InvalidConfig, SupportMismatch
from .mdp import FiniteMDP, Policy, sample_demonstrations

log = logging.getLogger(__name__)


def _pair(p, q) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise DimensionMismatch(f"distributions have shapes {p.shape} and {q.shape}")
    return p, q


def tv_distance(p, q) -> float:
    """Half the L1 distance between two distributions on the same support."""
    p, q = _pair(p, q)
    return 0.5 * float(np.abs(p - q).sum())


def kl_divergence(p, q) -> float:
    """sum p log(p/q) with 0 log 0 = 0."""
    p, q = _pair(p, q)
    pos = p > 0
    if np.any(q[pos] <= 0):
        raise AbsoluteContinuityViolation("q vanishes where p has mass")
    return float(np.sum(p[pos] * np.log(p[pos] / q[pos])))


def pinsker_bound(kl: float) -> float:
    if kl < 0:
        raise InvalidConfig("KL divergence must be non-negative")
    return math.sqrt(2.0 * kl)


def dkw_bound(n: int, action_count: int, nu: float) -> float:
    """|A| sqrt((2/n) log(2|A|/nu)), the constant as printed alongside the composite bound.

    The standard DKW inversion has 1/(2n) in place of 2/n; see ``dkw_bound_tight``.
    """
    _check_dkw(n, nu)
    return action_count * math.sqrt((2.0 / n) * math.log(2 * action_count / nu))


def dkw_bound_tight(n: int, action_count: int, nu: float) -> float:
    """|A| sqrt(log(2|A|/nu) / (2n)): L1 deviation bound from the standard DKW inversion
    with a union bound over the |A| coordinates' CDF."""
    _check_dkw(n, nu)
    return action_count * math.sqrt(math.log(2 * action_count / nu) / (2.0 * n))


def _check_dkw(n, nu):
    if n < 1:
        raise InvalidConfig("n must be at least 1")
    if not 0 < nu < 1:
        raise InvalidConfig("nu must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class TVReport:
    per_state: np.ndarray
    states: np.ndarray
    mean: float
    variance: float

    def rows(self) -> list[tuple[int, float]]:
        return list(zip(self.states.tolist(), self.per_state.tolist()))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["state", "tv"])
            for x, d in self.rows():
                w.writerow([x, repr(d)])

    def summary(self) -> dict:
        return {"mean": self.mean, "variance": self.variance, "n_states": int(self.states.size)}


def policy_tv_report(pi_true: Policy, pi_learned: Policy, states=None) -> TVReport:
    """Per-state TV distance plus mean and variance over ``states`` (default: all states)."""
    p, q = pi_true.probs, pi_learned.probs
    if p.shape != q.shape:
        raise SupportMismatch(f"policy shapes {p.shape} and {q.shape} differ")
    if states is None:
        states = np.arange(p.shape[0])
    states = np.asarray(states, dtype=int)
    if np.any((p[states] > 0) != (q[states] > 0)):
        # both Boltzmann policies are positive on admissible actions, so this means
        # they were built on different action sets
        mismatched = np.any((p[states] > 0) != (q[states] > 0), axis=1)
        raise SupportMismatch(f"action supports differ at states {states[mismatched].tolist()}")
    d = 0.5 * np.abs(p[states] - q[states]).sum(axis=1)
    return TVReport(d, states, float(d.mean()) if d.size else 0.0, float(d.var()) if d.size else 0.0)


def free_states(mdp: FiniteMDP) -> np.ndarray:
    """States at which a policy makes a choice (non-absorbing)."""
    return np.flatnonzero(~mdp.absorbing)


def max_likelihood_path(mdp: FiniteMDP, policy: Policy, start: int, max_len: int = 100) -> list[int]:
    """Follow the most probable action, then the most probable successor; ties by lowest index."""
    P = mdp.transition
    x = int(start)
    path = [x]
    while len(path) <= max_len and not mdp.absorbing[x]:
        a = int(np.argmax(np.where(mdp.admissible[x], policy.probs[x], -np.inf)))
        x = int(np.argmax(P[x, a]))
        path.append(x)
    return path


# ---------------------------------------------------------------------------
# sample complexity


@dataclass(frozen=True)
class PowerLawFit:
    """y = a x^b fitted by least squares on (log x, log y)."""

    a: float
    b: float
    r2: float

    def __call__(self, x):
        return self.a * np.power(x, self.b)


def fit_power_law(x: Sequence[float], y: Sequence[float]) -> PowerLawFit:
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    if lx.size < 2:
        raise InvalidConfig("need at least two points for a power-law fit")
    b, log_a = np.polyfit(lx, ly, 1)
    resid = ly - (log_a + b * lx)
    ss = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss if ss > 0 else 1.0
    return PowerLawFit(float(math.exp(log_a)), float(b), r2)


@dataclass
class SampleComplexityResult:
    sizes: list
    per_dataset: list  # rows of (size, dataset, mean_tv, theta)
    mean_tv: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    fit: PowerLawFit
    true_spec: object = None
    meta: dict = field(default_factory=dict)

    def table(self) -> list[tuple[int, float, float, float]]:
        return [(int(n), float(m), float(lo), float(hi))
                for n, m, lo, hi in zip(self.sizes, self.mean_tv, self.ci_lo, self.ci_hi)]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["size", "mean_tv", "ci_lo", "ci_hi"])
            for row in self.table():
                w.writerow([row[0]] + [repr(v) for v in row[1:]])

    def summary(self) -> dict:
        return {"a": self.fit.a, "b": self.fit.b, "r2": self.fit.r2,
                "sizes": [int(s) for s in self.sizes], **self.meta}


def _sweep_cell(args):
    from .forward import boltzmann_policy, solve_q_fixed_point
    from .inverse import irl_fit

    mdp, pi_true, true_spec, n, j, seed, start, max_steps, irl_cfg = args
    demos = sample_demonstrations(mdp, pi_true, n, start, max_steps, seed)
    res = irl_fit(mdp, demos, true_spec, irl_cfg, rng_seed=seed)
    pi = boltzmann_policy(solve_q_fixed_point(mdp, res.best_spec, irl_cfg.solver), irl_cfg.beta, mdp)
    rep = policy_tv_report(pi_true, pi, free_states(mdp))
    log.info("sweep size=%d dataset=%d mean_tv=%.4g", n, j, rep.mean)
    return n, j, rep.mean, res.best_theta.tolist()


def sample_complexity_experiment(
    mdp: FiniteMDP,
    true_spec,
    sizes: Sequence[int],
    datasets_per_size: int = 5,
    restarts: int = 5,
    rng_seed: int = 0,
    start=None,
    max_steps: int = 100,
    irl_cfg=None,
    n_jobs: int = 1,
) -> SampleComplexityResult:
    """Mean TV between true and fitted policy as a function of the number of episodes.

    Dataset j of size n is sampled with seed rng_seed + 1000 * i + j (i the size
    index) and fitted with the same seed as its restart base.  Confidence
    intervals are 95% normal intervals across datasets.
    """
    from dataclasses import replace

    from .forward import SolverConfig, boltzmann_policy, solve_q_fixed_point
    from .inverse import IRLConfig

    if not sizes or any(int(n) < 1 for n in sizes):
        raise InvalidConfig("sizes must be positive integers")
    irl_cfg = replace(irl_cfg or IRLConfig(), restarts=restarts)
    if start is None:
        start = mdp.meta.get("start", 0)
    pi_true = boltzmann_policy(solve_q_fixed_point(mdp, true_spec, SolverConfig(tol=1e-12)), irl_cfg.beta, mdp)
    jobs = [(mdp, pi_true, true_spec, int(n), j, int(rng_seed) + 1000 * i + j, start, max_steps, irl_cfg)
            for i, n in enumerate(sizes) for j in range(datasets_per_size)]
    if n_jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            rows = list(pool.map(_sweep_cell, jobs))
    else:
        rows = [_sweep_cell(job) for job in jobs]
    mean, lo, hi = [], [], []
    for n in sizes:
        vals = np.array([r[2] for r in rows if r[0] == int(n)])
        m = float(vals.mean())
        half = 1.96 * float(vals.std(ddof=1)) / math.sqrt(vals.size) if vals.size > 1 else 0.0
        mean.append(m)
        lo.append(m - half)
        hi.append(m + half)
    mean = np.array(mean)
    fit = fit_power_law(sizes, np.maximum(mean, np.finfo(float).tiny))
    return SampleComplexityResult(list(map(int, sizes)), rows, mean, np.array(lo), np.array(hi), fit,
                                  true_spec, {"datasets_per_size": datasets_per_size, "restarts": restarts})
