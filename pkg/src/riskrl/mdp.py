"""Finite MDPs with discrete random rewards, policies and demonstrations.

Each admissible state-action pair carries a finite list of joint outcomes
``(prob, next_state, reward)``: the disturbance ``w`` indexes that list.  The
outcomes are stored padded into dense ``(n_states, n_actions, n_outcomes)``
arrays so the solvers can evaluate expectations with plain array arithmetic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from types import SimpleNamespace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyDemonstrations, InvalidMDP, InvalidPolicy

PROB_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class FiniteMDP:
    admissible: np.ndarray  # bool (S, A)
    out_next: np.ndarray  # int (S, A, O)
    out_prob: np.ndarray  # float (S, A, O)
    out_reward: np.ndarray  # float (S, A, O)
    gamma: float
    absorbing: np.ndarray  # bool (S,)
    state_labels: tuple = ()
    action_labels: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("admissible", "out_next", "out_prob", "out_reward", "absorbing"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_outcomes(
        cls,
        n_states: int,
        n_actions: int,
        outcomes: Mapping[tuple[int, int], Sequence[tuple[float, int, float]]],
        gamma: float,
        absorbing: Iterable[int] = (),
        state_labels: Sequence = (),
        action_labels: Sequence = (),
        meta: dict | None = None,
    ) -> "FiniteMDP":
        """Build from ``{(x, a): [(prob, next_state, reward), ...]}``.

        Pairs missing from ``outcomes`` are inadmissible.
        """
        width = max((len(v) for v in outcomes.values()), default=1)
        nxt = np.zeros((n_states, n_actions, width), dtype=np.int64)
        prob = np.zeros((n_states, n_actions, width))
        rew = np.zeros((n_states, n_actions, width))
        adm = np.zeros((n_states, n_actions), dtype=bool)
        for (x, a), outs in outcomes.items():
            adm[x, a] = True
            for k, (p, y, r) in enumerate(outs):
                prob[x, a, k] = p
                nxt[x, a, k] = y
                rew[x, a, k] = r
        absorb = np.zeros(n_states, dtype=bool)
        absorb[list(absorbing)] = True
        return cls(adm, nxt, prob, rew, float(gamma), absorb,
                   tuple(state_labels), tuple(action_labels), dict(meta or {}))

    @property
    def n_states(self) -> int:
        return self.admissible.shape[0]

    @property
    def n_actions(self) -> int:
        return self.admissible.shape[1]

    @property
    def n_outcomes(self) -> int:
        return self.out_prob.shape[2]

    @property
    def transition(self) -> np.ndarray:
        """Dense kernel P[x, a, x'] aggregated over disturbances."""
        P = np.zeros((self.n_states, self.n_actions, self.n_states))
        xs, as_, ks = np.indices(self.out_prob.shape)
        np.add.at(P, (xs, as_, self.out_next), self.out_prob)
        return P

    @property
    def reward_bound(self) -> float:
        """M = max |r| over all outcomes that carry probability."""
        live = self.out_prob > 0
        return float(np.abs(self.out_reward[live]).max()) if live.any() else 0.0

    def outcomes(self, x: int, a: int) -> list[tuple[float, int, float]]:
        live = self.out_prob[x, a] > 0
        return list(zip(self.out_prob[x, a][live].tolist(),
                        self.out_next[x, a][live].tolist(),
                        self.out_reward[x, a][live].tolist()))

    def expected_reward(self) -> np.ndarray:
        return (self.out_prob * self.out_reward).sum(axis=2)

    @cached_property
    def live(self) -> SimpleNamespace:
        """Flat arrays over outcomes with positive probability.

        ``pair`` is the flat index ``x * n_actions + a`` used with ``np.bincount``.
        """
        x, a, k = np.nonzero(self.out_prob > 0)
        return SimpleNamespace(
            x=x, a=a, pair=x * self.n_actions + a,
            next=self.out_next[x, a, k], prob=self.out_prob[x, a, k],
            reward=self.out_reward[x, a, k],
        )

    def expect(self, values: np.ndarray) -> np.ndarray:
        """Sum of prob * values over live outcomes, per (x, a); trailing dims allowed."""
        lv = self.live
        n = self.n_states * self.n_actions
        w = lv.prob.reshape((-1,) + (1,) * (values.ndim - 1)) * values
        if values.ndim == 1:
            return np.bincount(lv.pair, weights=w, minlength=n).reshape(self.n_states, self.n_actions)
        flat = w.reshape(w.shape[0], -1)
        out = np.stack([np.bincount(lv.pair, weights=flat[:, j], minlength=n)
                        for j in range(flat.shape[1])], axis=-1)
        return out.reshape((self.n_states, self.n_actions) + values.shape[1:])

    @property
    def active(self) -> np.ndarray:
        """Admissible pairs whose Q-value is free (i.e. not absorbing)."""
        return self.admissible & ~self.absorbing[:, None]

    # -- file format ------------------------------------------------------

    def to_record(self) -> dict:
        rewards = []
        for x in range(self.n_states):
            for a in range(self.n_actions):
                if self.admissible[x, a]:
                    rewards.append({
                        "x": x, "a": a,
                        "entries": [{"prob": p, "r": r, "next": y} for p, y, r in self.outcomes(x, a)],
                    })
        rec = {
            "states": list(self.state_labels) or list(range(self.n_states)),
            "actions": list(self.action_labels) or list(range(self.n_actions)),
            "admissible": [np.flatnonzero(row).tolist() for row in self.admissible],
            "transition": self.transition.reshape(-1).tolist(),
            "rewards": rewards,
            "gamma": self.gamma,
            "absorbing": np.flatnonzero(self.absorbing).tolist(),
        }
        if self.meta:
            rec["meta"] = self.meta
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "FiniteMDP":
        """Inverse of :meth:`to_record`.

        Reward entries with a ``next`` field are joint (next-state, reward)
        outcomes.  Entries without it are disturbance-only rewards independent
        of the next state, combined with the dense ``transition`` as a product.
        """
        states, actions = rec["states"], rec["actions"]
        nS, nA = len(states), len(actions)
        P = np.asarray(rec["transition"], dtype=float).reshape(nS, nA, nS)
        adm = {(x, a) for x, acts in enumerate(rec["admissible"]) for a in acts}
        outcomes: dict[tuple[int, int], list] = {}
        for item in rec["rewards"]:
            x, a = int(item["x"]), int(item["a"])
            entries = item["entries"]
            if entries and all("next" in e for e in entries):
                outs = [(float(e["prob"]), int(e["next"]), float(e["r"])) for e in entries]
            else:
                outs = [(float(P[x, a, y] * e["prob"]), y, float(e["r"]))
                        for y in np.flatnonzero(P[x, a]) for e in entries]
            outcomes[(x, a)] = outs
        missing = adm - set(outcomes)
        problems = [f"(x={x}, a={a}) admissible but has no reward entries" for x, a in sorted(missing)]
        if problems:
            raise InvalidMDP(problems)
        mdp = cls.from_outcomes(nS, nA, outcomes, rec["gamma"], rec.get("absorbing", ()),
                                states, actions, rec.get("meta"))
        agg = mdp.transition
        bad = [(x, a) for x, a in outcomes if not np.allclose(agg[x, a], P[x, a], atol=1e-12)]
        if bad:
            raise InvalidMDP([f"(x={x}, a={a}) reward entries disagree with transition row" for x, a in bad])
        return mdp

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_record(), indent=1))

    @classmethod
    def load(cls, path) -> "FiniteMDP":
        return cls.from_record(json.loads(Path(path).read_text()))


def validate(mdp: FiniteMDP) -> None:
    """Check every FiniteMDP invariant; raise InvalidMDP listing all violations."""
    problems = []
    nS, nA = mdp.n_states, mdp.n_actions
    if not 0 < mdp.gamma < 1:
        problems.append(f"gamma={mdp.gamma} not in (0, 1)")
    if np.any(mdp.out_prob < 0):
        for x, a, k in np.argwhere(mdp.out_prob < 0):
            problems.append(f"(x={x}, a={a}) negative probability {mdp.out_prob[x, a, k]}")
    if np.any((mdp.out_next < 0) | (mdp.out_next >= nS)):
        problems.append("next-state index out of range")
    if not np.all(np.isfinite(mdp.out_reward)):
        problems.append("non-finite reward")
    sums = mdp.out_prob.sum(axis=2)
    for x, a in np.argwhere(mdp.admissible):
        if abs(sums[x, a] - 1.0) > PROB_TOL:
            problems.append(f"(x={x}, a={a}) probabilities sum to {sums[x, a]!r}")
    for x, a in np.argwhere(~mdp.admissible):
        if np.any(mdp.out_prob[x, a] != 0):
            problems.append(f"(x={x}, a={a}) inadmissible pair carries probability mass")
    for x in np.flatnonzero(~mdp.admissible.any(axis=1)):
        problems.append(f"state {x} has no admissible action")
    for x in np.flatnonzero(mdp.absorbing):
        for a in np.flatnonzero(mdp.admissible[x]):
            live = mdp.out_prob[x, a] > 0
            if np.any(mdp.out_next[x, a][live] != x) or np.any(mdp.out_reward[x, a][live] != 0):
                problems.append(f"absorbing state {x} action {a} is not a zero-reward self-loop")
    if not mdp.reward_bound > 0:
        problems.append("reward bound M must be positive")
    if problems:
        raise InvalidMDP(problems)


# ---------------------------------------------------------------------------
# policies and tables


@dataclass(frozen=True, eq=False)
class Policy:
    """pi(a|x) table.  ``defined`` marks the rows that carry a distribution."""

    probs: np.ndarray
    defined: np.ndarray | None = None

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        defined = (np.ones(probs.shape[0], dtype=bool) if self.defined is None
                   else np.array(self.defined, dtype=bool))
        probs.setflags(write=False)
        defined.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "defined", defined)

    def validate(self, mdp: FiniteMDP | None = None) -> None:
        rows = self.probs[self.defined]
        if np.any(rows < 0):
            raise InvalidPolicy("negative action probability")
        bad = np.flatnonzero(np.abs(rows.sum(axis=1) - 1.0) > PROB_TOL)
        if bad.size:
            raise InvalidPolicy(f"rows {np.flatnonzero(self.defined)[bad].tolist()} do not sum to 1")
        if mdp is not None:
            if self.probs.shape != mdp.admissible.shape:
                raise InvalidPolicy(f"policy shape {self.probs.shape} != {mdp.admissible.shape}")
            leak = (self.probs > 0) & ~mdp.admissible & self.defined[:, None]
            if leak.any():
                x, a = np.argwhere(leak)[0]
                raise InvalidPolicy(f"mass on inadmissible action {a} at state {x}")


def uniform_policy(mdp: FiniteMDP) -> Policy:
    adm = mdp.admissible.astype(float)
    return Policy(adm / adm.sum(axis=1, keepdims=True))


@dataclass(frozen=True, eq=False)
class QTable:
    values: np.ndarray
    spec: object = None
    diagnostics: dict | None = None

    def to_record(self) -> dict:
        S, A = self.values.shape
        return {
            "shape": [S, A],
            "spec": self.spec.to_record() if self.spec is not None else None,
            "entries": [{"x": x, "a": a, "value": float(self.values[x, a])}
                        for x in range(S) for a in range(A)],
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "QTable":
        from .value_fn import ValueFnSpec

        S, A = rec["shape"]
        vals = np.zeros((S, A))
        for e in rec["entries"]:
            vals[e["x"], e["a"]] = e["value"]
        spec = ValueFnSpec.from_record(rec["spec"]) if rec.get("spec") else None
        return cls(vals, spec, rec.get("diagnostics"))


# ---------------------------------------------------------------------------
# simulation


@dataclass(frozen=True)
class Step:
    x: int
    a: int
    w: int
    r: float
    x_next: int


def _cumulative(p):
    p = np.asarray(p, dtype=float)
    c = np.cumsum(p, axis=-1)
    # round-off guard: everything from the last positive entry on is a sure hit
    k = np.arange(p.shape[-1])
    last = p.shape[-1] - 1 - np.argmax((p > 0)[..., ::-1], axis=-1)
    c[k >= last[..., None]] = np.inf
    return c


def _draw(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    return (u[:, None] >= cdf_rows).sum(axis=1)


def simulate(mdp: FiniteMDP, policy: Policy, start: int, max_steps: int, rng_seed) -> list[Step]:
    """Roll out one trajectory; stops on entering an absorbing state or after max_steps."""
    rng = np.random.default_rng(rng_seed)
    pol_cdf = _cumulative(np.where(mdp.admissible, policy.probs, 0.0))
    out_cdf = _cumulative(mdp.out_prob)
    traj = []
    x = int(start)
    for _ in range(max_steps):
        if mdp.absorbing[x]:
            break
        a = int(np.searchsorted(pol_cdf[x], rng.random(), side="right"))
        w = int(np.searchsorted(out_cdf[x, a], rng.random(), side="right"))
        y = int(mdp.out_next[x, a, w])
        traj.append(Step(x, a, w, float(mdp.out_reward[x, a, w]), y))
        x = y
    return traj


@dataclass(frozen=True, eq=False)
class DemonstrationSet:
    episodes: tuple  # tuple of tuples of (x, a)
    n_states: int
    n_actions: int

    def __post_init__(self):
        object.__setattr__(self, "episodes", tuple(tuple((int(x), int(a)) for x, a in ep)
                                                   for ep in self.episodes))
        counts = np.zeros((self.n_states, self.n_actions), dtype=np.int64)
        for ep in self.episodes:
            for x, a in ep:
                counts[x, a] += 1
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def N(self) -> int:
        return int(self.counts.sum())

    @property
    def weights(self) -> np.ndarray:
        return self.counts / self.N if self.N else np.zeros(self.counts.shape)

    @property
    def state_weights(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    @property
    def visited(self) -> np.ndarray:
        return self.counts.sum(axis=1) > 0

    def to_lines(self) -> list[str]:
        return [json.dumps({"episode": e, "t": t, "x": x, "a": a})
                for e, ep in enumerate(self.episodes) for t, (x, a) in enumerate(ep)]

    @classmethod
    def from_lines(cls, lines: Iterable[str], n_states: int, n_actions: int) -> "DemonstrationSet":
        eps: dict[int, dict[int, tuple[int, int]]] = {}
        for line in lines:
            if line.strip():
                rec = json.loads(line)
                eps.setdefault(int(rec["episode"]), {})[int(rec["t"])] = (rec["x"], rec["a"])
        n_eps = max(eps, default=-1) + 1
        episodes = [[eps[e][t] for t in sorted(eps[e])] if e in eps else [] for e in range(n_eps)]
        return cls(tuple(episodes), n_states, n_actions)

    def save(self, path) -> None:
        lines = self.to_lines()
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))

    @classmethod
    def load(cls, path, n_states: int, n_actions: int) -> "DemonstrationSet":
        return cls.from_lines(Path(path).read_text().splitlines(), n_states, n_actions)


def sample_demonstrations(
    mdp: FiniteMDP,
    policy: Policy,
    n_episodes: int,
    start_dist,
    max_steps: int,
    rng_seed,
) -> DemonstrationSet:
    """Sample independent episodes; all episodes advance in lockstep for speed.

    ``start_dist`` is a state index or a probability vector over states.
    """
    rng = np.random.default_rng(rng_seed)
    nS = mdp.n_states
    if np.ndim(start_dist) == 0:
        starts = np.full(n_episodes, int(start_dist))
    else:
        p0 = np.asarray(start_dist, dtype=float)
        starts = _draw(np.broadcast_to(_cumulative(p0), (n_episodes, nS)), rng.random(n_episodes))
    pol_cdf = _cumulative(np.where(mdp.admissible, policy.probs, 0.0))
    out_cdf = _cumulative(mdp.out_prob)
    xs = np.zeros((n_episodes, max_steps), dtype=np.int64)
    acts = np.zeros((n_episodes, max_steps), dtype=np.int64)
    lengths = np.zeros(n_episodes, dtype=np.int64)
    x = starts.copy()
    alive = ~mdp.absorbing[x]
    for t in range(max_steps):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        cur = x[idx]
        a = _draw(pol_cdf[cur], rng.random(idx.size))
        w = _draw(out_cdf[cur, a], rng.random(idx.size))
        xs[idx, t] = cur
        acts[idx, t] = a
        lengths[idx] += 1
        x[idx] = mdp.out_next[cur, a, w]
        alive[idx] = ~mdp.absorbing[x[idx]]
    episodes = tuple(tuple(zip(xs[e, :lengths[e]].tolist(), acts[e, :lengths[e]].tolist()))
                     for e in range(n_episodes))
    return DemonstrationSet(episodes, nS, mdp.n_actions)


def empirical_policy(demos: DemonstrationSet) -> Policy:
    """pi_hat(a|x) = n(x,a)/n(x) on visited states; other rows are left undefined."""
    if demos.N == 0:
        raise EmptyDemonstrations("no state-action pairs in demonstration set")
    counts = demos.counts.astype(float)
    nx = counts.sum(axis=1, keepdims=True)
    visited = nx[:, 0] > 0
    probs = np.divide(counts, nx, out=np.zeros_like(counts), where=nx > 0)
    return Policy(probs, visited)
