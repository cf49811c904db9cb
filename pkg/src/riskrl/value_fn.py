"""Behavioral value functions and the quantities the solvers need from them.

Four families are supported:

* ``Prospect``  -- k+ (y-y0)^z+ on gains, -k- (y0-y)^z- on losses.
* ``LProspect`` -- the epsilon-shifted prospect map, Lipschitz at the reference.
* ``Linear``    -- (1-kappa) on gains, (1+kappa) on losses.
* ``Entropic``  -- (exp(lambda (y-y0)) - 1) / lambda.

All evaluators are vectorized over ``y``; scalars in give scalars out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.special import lambertw

from .errors import (
    BracketFailure,
    InvalidParameter,
    NoAdmissibleK,
    NonDifferentiablePoint,
    UnboundedDerivative,
)

FAMILY_NAMES = {
    "prospect": "Prospect",
    "linear": "Linear",
    "entropic": "Entropic",
    "lprospect": "LProspect",
}

FREE_PARAMS: dict[str, tuple[str, ...]] = {
    "prospect": ("k_minus", "k_plus", "zeta_minus", "zeta_plus"),
    "lprospect": ("k_minus", "k_plus", "zeta_minus", "zeta_plus"),
    "linear": ("kappa",),
    "entropic": ("lam",),
}

# series cutoff for the entropic map near lambda*u = 0
_ENTROPIC_SERIES = 1e-4


@dataclass(frozen=True)
class ValueFnSpec:
    """Family tag plus parameters of a value function.

    ``lam`` is the entropic coefficient (serialized as ``lambda``).  Fields not
    used by the family are carried along but ignored.
    """

    family: str
    k_minus: float = 1.0
    k_plus: float = 1.0
    zeta_minus: float = 1.0
    zeta_plus: float = 1.0
    lam: float = 1.0
    kappa: float = 0.0
    epsilon: float = 1e-2
    y0: float = 0.0
    v0: float = 0.0

    def __post_init__(self):
        fam = str(self.family).lower().replace("-", "").replace("_", "")
        if fam not in FAMILY_NAMES:
            raise InvalidParameter(f"unknown value-function family {self.family!r}")
        object.__setattr__(self, "family", fam)
        for f in fields(self)[1:]:
            object.__setattr__(self, f.name, float(getattr(self, f.name)))

    # -- parameter vector --------------------------------------------------

    @property
    def param_names(self) -> tuple[str, ...]:
        return FREE_PARAMS[self.family]

    @property
    def n_params(self) -> int:
        return len(FREE_PARAMS[self.family])

    def params(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in self.param_names])

    def with_params(self, theta: Sequence[float]) -> "ValueFnSpec":
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != self.n_params:
            raise InvalidParameter(
                f"{self.name} expects {self.n_params} parameters, got {theta.size}"
            )
        return replace(self, **dict(zip(self.param_names, theta.tolist())))

    @property
    def name(self) -> str:
        return FAMILY_NAMES[self.family]

    def validate(self) -> None:
        fam = self.family
        if fam in ("prospect", "lprospect"):
            for n in ("k_minus", "k_plus", "zeta_minus", "zeta_plus"):
                v = getattr(self, n)
                if not (v > 0 and math.isfinite(v)):
                    raise InvalidParameter(f"{self.name}: {n} must be positive, got {v}")
            if fam == "lprospect" and not self.epsilon > 0:
                raise InvalidParameter(f"LProspect: epsilon must be positive, got {self.epsilon}")
        elif fam == "linear":
            if not abs(self.kappa) < 1:
                raise InvalidParameter(f"Linear: |kappa| must be < 1, got {self.kappa}")
        elif fam == "entropic":
            if self.lam == 0 or not math.isfinite(self.lam):
                raise InvalidParameter("Entropic: lambda must be nonzero and finite")

    # -- serialization -----------------------------------------------------

    def to_record(self) -> dict:
        return {
            "family": self.name,
            "k_minus": self.k_minus,
            "k_plus": self.k_plus,
            "zeta_minus": self.zeta_minus,
            "zeta_plus": self.zeta_plus,
            "lambda": self.lam,
            "kappa": self.kappa,
            "epsilon": self.epsilon,
            "y0": self.y0,
            "v0": self.v0,
        }

    @classmethod
    def from_record(cls, record: dict) -> "ValueFnSpec":
        rec = dict(record)
        if "lambda" in rec:
            rec["lam"] = rec.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(rec) - known
        if unknown:
            raise InvalidParameter(f"unknown value-function fields: {sorted(unknown)}")
        spec = cls(**rec)
        spec.validate()
        return spec


def prospect(k_minus, k_plus, zeta_minus, zeta_plus, **kw) -> ValueFnSpec:
    return ValueFnSpec("prospect", k_minus, k_plus, zeta_minus, zeta_plus, **kw)


def lprospect(k_minus, k_plus, zeta_minus, zeta_plus, epsilon=1e-2, **kw) -> ValueFnSpec:
    return ValueFnSpec("lprospect", k_minus, k_plus, zeta_minus, zeta_plus, epsilon=epsilon, **kw)


def entropic(lam, **kw) -> ValueFnSpec:
    return ValueFnSpec("entropic", lam=lam, **kw)


def linear(kappa, **kw) -> ValueFnSpec:
    return ValueFnSpec("linear", kappa=kappa, **kw)


# ---------------------------------------------------------------------------
# evaluation


def _out(result, like):
    return float(result) if np.ndim(like) == 0 else result


def eval(spec: ValueFnSpec, y):
    """v(y) for the spec's family."""
    spec.validate()
    y_arr = np.asarray(y, dtype=float)
    u = y_arr - spec.y0
    fam = spec.family
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        if fam == "prospect":
            gain = spec.k_plus * np.abs(u) ** spec.zeta_plus
            loss = -spec.k_minus * np.abs(u) ** spec.zeta_minus
            out = np.where(u > 0, gain, loss)
        elif fam == "lprospect":
            e = spec.epsilon
            a = np.abs(u) + e
            gain = spec.k_plus * (a**spec.zeta_plus - e**spec.zeta_plus)
            loss = -spec.k_minus * (a**spec.zeta_minus - e**spec.zeta_minus)
            out = np.where(u > 0, gain, loss)
        elif fam == "linear":
            out = np.where(u > 0, (1 - spec.kappa) * u, (1 + spec.kappa) * u)
        else:
            out = np.expm1(spec.lam * u) / spec.lam
    return _out(out, y)


def eval_tilde(spec: ValueFnSpec, y):
    """Shifted value v(y) - v0."""
    return eval(spec, y) - spec.v0


def _zero_slope_limit(k, zeta):
    # one-sided limit of k*zeta*d**(zeta-1) as d -> 0+
    if zeta == 1.0:
        return k
    return 0.0 if zeta > 1.0 else math.inf


def deriv_y(spec: ValueFnSpec, y):
    """Analytic derivative of v in its outcome argument."""
    spec.validate()
    y_arr = np.asarray(y, dtype=float)
    u = y_arr - spec.y0
    fam = spec.family
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        if fam == "prospect":
            if np.any(u == 0):
                lim_m = _zero_slope_limit(spec.k_minus, spec.zeta_minus)
                lim_p = _zero_slope_limit(spec.k_plus, spec.zeta_plus)
                if math.isinf(lim_m) or math.isinf(lim_p):
                    raise NonDifferentiablePoint(
                        "Prospect derivative is unbounded at the reference point "
                        f"(left limit {lim_m}, right limit {lim_p})"
                    )
            a = np.abs(u)
            gain = spec.k_plus * spec.zeta_plus * a ** (spec.zeta_plus - 1)
            loss = spec.k_minus * spec.zeta_minus * a ** (spec.zeta_minus - 1)
            out = np.where(u > 0, gain, loss)
            if np.any(u == 0):
                # loss branch owns the reference point; report its one-sided limit
                out = np.where(u == 0, lim_m, out)
        elif fam == "lprospect":
            a = np.abs(u) + spec.epsilon
            gain = spec.k_plus * spec.zeta_plus * a ** (spec.zeta_plus - 1)
            loss = spec.k_minus * spec.zeta_minus * a ** (spec.zeta_minus - 1)
            out = np.where(u > 0, gain, loss)
        elif fam == "linear":
            out = np.where(u > 0, 1 - spec.kappa, 1 + spec.kappa) + 0.0 * u
        else:
            out = np.exp(spec.lam * u)
    return _out(out, y)


def _entropic_dlam(lam, u):
    """d/d(lam) of expm1(lam*u)/lam, with a series branch for small lam*u."""
    x = lam * u
    with np.errstate(over="ignore", invalid="ignore"):
        direct = (x * np.exp(x) - np.expm1(x)) / lam**2
    series = u**2 * (0.5 + x / 3.0 + x**2 / 8.0 + x**3 / 30.0)
    return np.where(np.abs(x) < _ENTROPIC_SERIES, series, direct)


def deriv_theta(spec: ValueFnSpec, y):
    """Gradient of v-tilde with respect to the family's free parameters.

    Returns an array of shape ``y.shape + (n_params,)``.
    """
    spec.validate()
    y_arr = np.asarray(y, dtype=float)
    u = y_arr - spec.y0
    fam = spec.family
    zeros = np.zeros_like(u)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        if fam in ("prospect", "lprospect"):
            e = spec.epsilon if fam == "lprospect" else 0.0
            a = np.abs(u) + e
            pos = u > 0
            neg = u < 0 if fam == "prospect" else u <= 0
            safe_a = np.where(a > 0, a, 1.0)
            ap = safe_a**spec.zeta_plus
            am = safe_a**spec.zeta_minus
            la = np.log(safe_a)
            if fam == "lprospect":
                ep, em, le = e**spec.zeta_plus, e**spec.zeta_minus, math.log(e)
            else:
                ep = em = le = 0.0
            d_kminus = np.where(neg, -(am - em), 0.0)
            d_kplus = np.where(pos, ap - ep, 0.0)
            d_zminus = np.where(neg, -spec.k_minus * (am * la - em * le), 0.0)
            d_zplus = np.where(pos, spec.k_plus * (ap * la - ep * le), 0.0)
            out = np.stack([d_kminus, d_kplus, d_zminus, d_zplus], axis=-1)
        elif fam == "linear":
            out = np.where(u > 0, -u, u)[..., None]
        else:
            out = _entropic_dlam(spec.lam, u)[..., None]
        out = out + zeros[..., None]
    if np.ndim(y) == 0:
        return out.reshape(-1)
    return out


# ---------------------------------------------------------------------------
# Lipschitz bounds and the ball condition


@dataclass(frozen=True)
class LipschitzBounds:
    eps_K: float
    L_K: float
    interval: tuple[float, float]


def _branch_slope(spec: ValueFnSpec, side: str, d: float) -> float:
    """Slope of v-tilde at distance d >= 0 from y0 on the given side (limit at d=0)."""
    fam = spec.family
    if fam == "linear":
        return 1 - spec.kappa if side == "gain" else 1 + spec.kappa
    if fam == "entropic":
        return math.exp(spec.lam * (d if side == "gain" else -d))
    k, z = (spec.k_plus, spec.zeta_plus) if side == "gain" else (spec.k_minus, spec.zeta_minus)
    a = d + (spec.epsilon if fam == "lprospect" else 0.0)
    if a == 0:
        return _zero_slope_limit(k, z)
    return k * z * a ** (z - 1)


def _slope_extrema(spec: ValueFnSpec, lo: float, hi: float) -> tuple[float, float]:
    # each branch derivative is monotone in the distance to y0, so extrema sit on
    # piece endpoints (including one-sided limits at y0)
    y0 = spec.y0
    cands = []
    if lo <= y0:
        cands += [_branch_slope(spec, "loss", y0 - lo), _branch_slope(spec, "loss", max(y0 - hi, 0.0))]
    if hi > y0:
        cands += [_branch_slope(spec, "gain", hi - y0), _branch_slope(spec, "gain", max(lo - y0, 0.0))]
    return min(cands), max(cands)


def lipschitz_bounds(spec: ValueFnSpec, interval: Sequence[float]) -> LipschitzBounds:
    """Exact min and max of the derivative of v-tilde over a closed interval."""
    spec.validate()
    lo, hi = float(interval[0]), float(interval[1])
    if not lo <= hi:
        raise InvalidParameter(f"empty interval [{lo}, {hi}]")
    eps_K, L_K = _slope_extrema(spec, lo, hi)
    if math.isinf(L_K):
        raise UnboundedDerivative(
            f"{spec.name} derivative is unbounded on [{lo}, {hi}] (reference point {spec.y0})"
        )
    return LipschitzBounds(eps_K, L_K, (lo, hi))


def ball_condition_holds(spec: ValueFnSpec, M: float, gamma: float, K: float) -> bool:
    """Whether radius K satisfies max|v~(+-M)|/(1-gamma) < K * min_{I_K} Dv~."""
    if not (K > 0 and M > 0 and 0 < gamma < 1):
        return False
    lhs = max(abs(eval_tilde(spec, M)), abs(eval_tilde(spec, -M))) / (1 - gamma)
    eps_K, _ = _slope_extrema(spec, -M - K, M + K)
    return bool(lhs < K * eps_K)


def entropic_lambda_bound(M: float, gamma: float) -> float:
    """Largest |lambda| for which K = 1/|lambda| is admissible (Lambert-W bound)."""
    w = lambertw(2 * M * (1 - gamma) / math.e).real
    return float(w / (2 * M))


def find_admissible_K(spec: ValueFnSpec, M: float, gamma: float, K_max: float = 1e9) -> float:
    """Return a radius K that satisfies :func:`ball_condition_holds`."""
    spec.validate()
    if spec.family == "entropic":
        bound = entropic_lambda_bound(M, gamma)
        K = 1.0 / abs(spec.lam)
        if abs(spec.lam) < bound and ball_condition_holds(spec, M, gamma, K):
            return K
        raise NoAdmissibleK(
            f"entropic lambda={spec.lam} outside admissible range |lambda| < {bound:.6g} "
            f"(M={M}, gamma={gamma})"
        )

    def ok(K):
        return ball_condition_holds(spec, M, gamma, K)

    hi = 1.0
    while not ok(hi):
        hi *= 2.0
        if hi > K_max:
            raise NoAdmissibleK(f"no admissible K <= {K_max:g} for {spec.name}")
    lo = hi / 2.0 if hi > 1.0 else 0.0
    while hi - lo > 1e-6 * hi:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


# ---------------------------------------------------------------------------
# valuation oracle


def solve_valuation(
    outcomes: Iterable[tuple[float, float]], spec: ValueFnSpec, tol: float = 1e-12
) -> float:
    """Unique z with E[v(Y - z)] = v0, found by bisection.

    ``outcomes`` is a list of ``(value, probability)`` pairs.
    """
    spec.validate()
    pairs = np.asarray(list(outcomes), dtype=float).reshape(-1, 2)
    ys, ps = pairs[:, 0], pairs[:, 1]
    if np.any(ps < 0) or abs(ps.sum() - 1.0) > 1e-12:
        raise InvalidParameter(f"outcome probabilities must be non-negative and sum to 1, got {ps.sum()!r}")

    def f(z):
        return float(np.dot(ps, eval_tilde(spec, ys - z)))

    lo, hi = ys.min() - 1.0, ys.max() + 1.0
    f_lo, f_hi = f(lo), f(hi)
    if f_lo < f_hi:
        raise BracketFailure("E[v(Y - z)] is not decreasing in z; value function is not monotone")
    width = hi - lo
    for _ in range(60):
        if f_lo >= 0 >= f_hi:
            break
        width *= 2
        if f_lo < 0:
            lo -= width
            f_lo = f(lo)
        if f_hi > 0:
            hi += width
            f_hi = f(hi)
    else:
        raise BracketFailure(f"could not bracket the valuation root (f(lo)={f_lo}, f(hi)={f_hi})")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
