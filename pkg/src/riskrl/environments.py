"""Builders for the Grid World and the ride-sharing passenger MDP."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import norm

from .errors import InvalidConfig, MalformedMap
from .mdp import FiniteMDP

# ---------------------------------------------------------------------------
# Grid World

DIRECTIONS = ("N", "NE", "E", "SE", "S", "SW", "W", "NW")
_DELTAS = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))

CELL_REWARD = {"S": 0.1, ".": 0.1, "g": -0.1, "G": 1.0, "B": -1.0}


@dataclass(frozen=True)
class GridSpec:
    map: tuple[str, ...]
    slip: float = 0.01
    intended_prob: float = 0.93
    gamma: float = 0.95

    def __post_init__(self):
        rows = self.map.splitlines() if isinstance(self.map, str) else list(self.map)
        rows = tuple(r.strip() for r in rows if r.strip())
        object.__setattr__(self, "map", rows)

    def validate(self) -> None:
        if not self.map:
            raise MalformedMap("empty map")
        width = len(self.map[0])
        if any(len(r) != width for r in self.map):
            raise MalformedMap("map rows have different lengths")
        bad = {c for r in self.map for c in r} - set(CELL_REWARD)
        if bad:
            raise MalformedMap(f"unknown map symbols {sorted(bad)}")
        n_start = sum(r.count("S") for r in self.map)
        if n_start != 1:
            raise MalformedMap(f"map needs exactly one S, found {n_start}")
        if abs(self.intended_prob + 7 * self.slip - 1.0) > 1e-12:
            raise MalformedMap(
                f"intended_prob + 7*slip must equal 1 (got {self.intended_prob + 7 * self.slip!r})"
            )
        if not 0 < self.gamma < 1:
            raise MalformedMap(f"gamma={self.gamma} not in (0, 1)")

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.map), len(self.map[0])

    def cell_index(self, row: int, col: int) -> int:
        return row * self.shape[1] + col

    def cell_of(self, x: int) -> tuple[int, int]:
        return divmod(x, self.shape[1])

    @property
    def start(self) -> int:
        for i, r in enumerate(self.map):
            if "S" in r:
                return self.cell_index(i, r.index("S"))
        raise MalformedMap("no start cell")


def load_map(path) -> tuple[str, ...]:
    return tuple(Path(path).read_text().split())


def default_map() -> tuple[str, ...]:
    text = resources.files("riskrl.data").joinpath("gridworld.map").read_text()
    return tuple(text.split())


def build_gridworld(spec: GridSpec, absorbing_reward_mode: str = "entry") -> FiniteMDP:
    """Grid World with 8 compass actions and reward paid on entering a cell.

    Moves that would leave the grid are dropped and the remaining direction
    probabilities renormalized proportionally.  ``absorbing_reward_mode``:
    ``"entry"`` pays G/B once on entry, then a zero-reward self-loop;
    ``"recurring"`` makes G/B ordinary self-loop states that pay every step.
    """
    spec.validate()
    if absorbing_reward_mode not in ("entry", "recurring"):
        raise MalformedMap(f"unknown absorbing_reward_mode {absorbing_reward_mode!r}")
    rows, cols = spec.shape
    nS, nA = rows * cols, len(DIRECTIONS)
    terminal = {spec.cell_index(i, j) for i in range(rows) for j in range(cols)
                if spec.map[i][j] in "GB"}
    outcomes = {}
    for i in range(rows):
        for j in range(cols):
            x = spec.cell_index(i, j)
            for a in range(nA):
                if x in terminal:
                    r = 0.0 if absorbing_reward_mode == "entry" else CELL_REWARD[spec.map[i][j]]
                    outcomes[(x, a)] = [(1.0, x, r)]
                    continue
                raw = []
                for d, (di, dj) in enumerate(_DELTAS):
                    ni, nj = i + di, j + dj
                    if 0 <= ni < rows and 0 <= nj < cols:
                        p = spec.intended_prob if d == a else spec.slip
                        raw.append((p, spec.cell_index(ni, nj), CELL_REWARD[spec.map[ni][nj]]))
                mass = math.fsum(p for p, _, _ in raw)
                outcomes[(x, a)] = [(p / mass, y, r) for p, y, r in raw]
    labels = [f"({i},{j})" for i in range(rows) for j in range(cols)]
    absorbing = sorted(terminal) if absorbing_reward_mode == "entry" else []
    meta = {"kind": "gridworld", "map": list(spec.map), "start": spec.start,
            "absorbing_reward_mode": absorbing_reward_mode}
    return FiniteMDP.from_outcomes(nS, nA, outcomes, spec.gamma, absorbing,
                                   labels, DIRECTIONS, meta)


# ---------------------------------------------------------------------------
# surge pricing

PRICE_LEVELS = (1.0, 1.4, 1.8, 2.2)


def price_bin(multiplier: float) -> int:
    """Index of the price level for a raw multiplier."""
    if multiplier < 1.2:
        return 0
    if multiplier < 1.6:
        return 1
    if multiplier < 2.0:
        return 2
    return 3


def _parse_time(value) -> float:
    s = str(value).strip()
    try:
        return float(s)
    except ValueError:
        return datetime.fromisoformat(s.replace("Z", "+00:00")).timestamp()


def read_surge_csv(path) -> list[tuple[float, float]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or {"timestamp", "multiplier"} - set(reader.fieldnames):
            raise InvalidConfig(f"{path}: header must be 'timestamp,multiplier'")
        return [(_parse_time(row["timestamp"]), float(row["multiplier"])) for row in reader]


def ingest_surge_csv(rows: Iterable[tuple[object, float]]) -> np.ndarray:
    """4x4 price-level transition matrix estimated from consecutive observations."""
    rows = list(rows)
    if not rows:
        raise InvalidConfig("empty surge data")
    levels = []
    for _, m in rows:
        if m < 1.0:
            raise InvalidConfig(f"surge multiplier {m} below 1.0")
        levels.append(price_bin(m))
    n = len(PRICE_LEVELS)
    counts = np.zeros((n, n))
    for a, b in zip(levels[:-1], levels[1:]):
        counts[a, b] += 1
    totals = counts.sum(axis=1, keepdims=True)
    return np.where(totals > 0, counts / np.where(totals > 0, totals, 1.0), 1.0 / n)


def load_golden_transition() -> np.ndarray:
    """The published price-level matrix (3 decimals) used as a golden fixture."""
    text = resources.files("riskrl.data").joinpath("surge_transition_golden.json").read_text()
    return np.asarray(json.loads(text)["transition"], dtype=float)


def bundled_surge_fixture() -> Path:
    return Path(str(resources.files("riskrl.data").joinpath("surge_fixture.csv")))


# ---------------------------------------------------------------------------
# ride-sharing MDP


@dataclass(frozen=True)
class TravelTime:
    loc: float = 2371.0
    scale: float = 100.0
    lower: float = 1554.0
    upper: float = 3619.0


@dataclass(frozen=True)
class RideshareConfig:
    """Passenger MDP parameters.

    Pricing, distance, satisfaction and horizon defaults are illustrative
    placeholders, not published values.  Travel time is in seconds and
    billed per minute.  ``reward_scale`` multiplies every dollar amount.
    """

    price_levels: tuple[float, ...] = PRICE_LEVELS
    horizon: int = 10
    wait_reward: float = -0.5
    satisfaction0: float = 20.0
    satisfaction_step: float = 0.4
    p_base: float = 1.0
    p_mile: float = 0.9
    p_min: float = 0.15
    distance: float = 6.0
    travel_time: TravelTime = field(default_factory=TravelTime)
    time_bins: int = 32
    reward_scale: float = 0.1
    gamma: float = 0.95

    def validate(self) -> None:
        tt = self.travel_time
        if not self.wait_reward < 0:
            raise InvalidConfig("wait_reward must be negative")
        if not tt.lower < tt.loc < tt.upper:
            raise InvalidConfig("travel time needs lower < loc < upper")
        if tt.scale < 0:
            raise InvalidConfig("travel time scale must be non-negative")
        if any(b <= a for a, b in zip(self.price_levels[:-1], self.price_levels[1:])):
            raise InvalidConfig("price_levels must be strictly increasing")
        if self.horizon < 0 or self.time_bins < 1:
            raise InvalidConfig("horizon must be >= 0 and time_bins >= 1")
        if not 0 < self.gamma < 1:
            raise InvalidConfig("gamma must be in (0, 1)")

    def to_record(self) -> dict:
        return asdict(self)

    @classmethod
    def from_record(cls, rec: dict) -> "RideshareConfig":
        rec = dict(rec)
        if "travel_time" in rec:
            rec["travel_time"] = TravelTime(**rec["travel_time"])
        if "price_levels" in rec:
            rec["price_levels"] = tuple(rec["price_levels"])
        try:
            cfg = cls(**rec)
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from None
        cfg.validate()
        return cfg

    def satisfaction(self, t: int) -> float:
        return self.satisfaction0 - self.satisfaction_step * t


def travel_time_bins(tt: TravelTime, n_bins: int) -> np.ndarray:
    """Conditional means of equal-probability bins of the truncated normal (seconds)."""
    if tt.scale == 0:
        return np.full(n_bins, tt.loc)
    a, b = (tt.lower - tt.loc) / tt.scale, (tt.upper - tt.loc) / tt.scale
    Fa, Fb = norm.cdf(a), norm.cdf(b)
    edges = norm.ppf(Fa + (Fb - Fa) * np.linspace(0.0, 1.0, n_bins + 1))
    edges[0], edges[-1] = a, b
    mass = np.diff(norm.cdf(edges))
    means = tt.loc + tt.scale * (norm.pdf(edges[:-1]) - norm.pdf(edges[1:])) / mass
    return means


def rideshare_state(cfg: RideshareConfig, level: int, t: int) -> int:
    return t * len(cfg.price_levels) + level


def build_rideshare(cfg: RideshareConfig, price_transition: np.ndarray) -> FiniteMDP:
    """States (level, t) for t = 0..horizon plus the terminal ride-taken state.

    Action 0 waits (reward ``wait_reward``, price moves by the matrix, t+1);
    action 1 rides to the terminal state with a random reward driven by the
    discretized travel time.  At t = horizon only riding is admissible.
    """
    cfg.validate()
    P = np.asarray(price_transition, dtype=float)
    nL = len(cfg.price_levels)
    if P.shape != (nL, nL) or np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0, atol=1e-12):
        raise InvalidConfig(f"price transition must be a row-stochastic {nL}x{nL} matrix")
    nS = nL * (cfg.horizon + 1) + 1
    terminal = nS - 1
    z_minutes = travel_time_bins(cfg.travel_time, cfg.time_bins) / 60.0
    pz = 1.0 / cfg.time_bins
    s = cfg.reward_scale
    outcomes = {}
    for t in range(cfg.horizon + 1):
        for i, price in enumerate(cfg.price_levels):
            x = rideshare_state(cfg, i, t)
            fare = price * (cfg.p_base + cfg.p_mile * cfg.distance + cfg.p_min * z_minutes)
            ride = s * (cfg.satisfaction(t) - fare)
            outcomes[(x, 1)] = [(pz, terminal, float(r)) for r in ride]
            if t < cfg.horizon:
                outcomes[(x, 0)] = [(float(P[i, j]), rideshare_state(cfg, j, t + 1), s * cfg.wait_reward)
                                    for j in range(nL) if P[i, j] > 0]
    outcomes[(terminal, 0)] = [(1.0, terminal, 0.0)]
    outcomes[(terminal, 1)] = [(1.0, terminal, 0.0)]
    labels = [f"({p},{t})" for t in range(cfg.horizon + 1) for p in cfg.price_levels] + ["done"]
    meta = {"kind": "rideshare", "config": cfg.to_record(), "price_transition": P.tolist(),
            "start_states": [rideshare_state(cfg, i, 0) for i in range(nL)]}
    return FiniteMDP.from_outcomes(nS, 2, outcomes, cfg.gamma, [terminal], labels,
                                   ("wait", "ride"), meta)
