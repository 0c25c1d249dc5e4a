"""Regularity constants of the Lipschitz/Hoelder theory and empirical estimators."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from ._backend import parallel_map
from .errors import HypothesisViolated, InvalidArgument


# ---------------------------------------------------------------- theoretical constants

def theoretical_p(K: float, theta_tilde: float) -> float:
    """Lipschitz constant p = 1 + 2 K^2 theta~ / (1 - K theta~)."""
    if K * theta_tilde >= 1.0:
        raise HypothesisViolated(f"K*theta~ = {K * theta_tilde:.6g} >= 1")
    if theta_tilde < 0 or K <= 0:
        raise InvalidArgument("need K > 0 and theta~ >= 0")
    gap = 1 - K * theta_tilde
    # one division: a single rounding when the numerator is exact
    return (gap + 2 * K * K * theta_tilde) / gap


@dataclass
class TheoreticalConstants:
    K: float
    alpha: float
    M: float
    C_mu: float
    C_r: float
    lam: float
    beta: float
    beta_cap: float
    beta_star: float
    lambda_ok: bool
    beta_ok: bool
    contraction_ok: bool
    contraction_value: float
    notes: list = field(default_factory=list)
    p: Optional[float] = None

    @property
    def q(self) -> float:
        return 1.0 + self.lam

    @property
    def tau_coefficient(self) -> float:
        return 1.0 / (self.M + self.C_mu)

    @property
    def feasible(self) -> bool:
        return self.lambda_ok and self.beta_ok and self.contraction_ok

    def to_json(self) -> dict:
        return {"K": self.K, "alpha": self.alpha, "M": self.M, "C_mu": self.C_mu, "C_r": self.C_r,
                "p": self.p, "lambda": self.lam, "q": self.q, "beta": self.beta,
                "beta_cap": self.beta_cap, "beta_star": self.beta_star,
                "tau_coefficient": self.tau_coefficient, "contraction_value": self.contraction_value,
                "flags": {"lambda": self.lambda_ok, "beta": self.beta_ok,
                          "contraction": self.contraction_ok, "all": self.feasible},
                "notes": self.notes}


def lambda_lower_bound(alpha: float, M: float) -> float:
    """3/(1-e^{-alpha}) + 3/(2(1-e^{alpha-M})); nan when alpha >= M."""
    den = 1.0 - math.exp(alpha - M)
    if den <= 0:
        return math.nan
    return 3.0 / (1.0 - math.exp(-alpha)) + 3.0 / (2.0 * den)


def contraction_value(K: float, alpha: float, M: float, C_r: float, beta: float) -> float:
    """2 K C_r / (1 - e^{-(alpha - M beta)})."""
    gap = alpha - M * beta
    if gap <= 0:
        return math.inf
    return 2.0 * K * C_r / (1.0 - math.exp(-gap))


def theoretical_beta_lambda(K: float, alpha: float, M: float, C_mu: float, C_r: float,
                            theta_tilde: Optional[float] = None) -> TheoreticalConstants:
    """Deterministic (lambda, beta) choice: lambda at 1.01x its lower bound, beta at 0.9x its cap."""
    if not M > 0:
        raise InvalidArgument("M must be positive")
    if not (K > 0 and alpha > 0 and C_mu >= 0 and C_r >= 0):
        raise InvalidArgument("need K > 0, alpha > 0, C_mu >= 0, C_r >= 0")
    notes = []
    lam_lo = lambda_lower_bound(alpha, M)
    lambda_ok = math.isfinite(lam_lo) and lam_lo > 0
    if not lambda_ok:
        notes.append("lambda condition infeasible: 1 - exp(alpha - M) <= 0 (alpha >= M)")
    lam = 1.01 * lam_lo if lambda_ok else math.nan

    cap = alpha / (M + C_mu)
    upper = alpha / M
    if C_r == 0:
        beta_star = upper
        notes.append("C_r = 0: contraction value is 0, strict positivity fails")
    else:
        def excess(b):
            return contraction_value(K, alpha, M, C_r, b) - 1.0 / 3.0
        if excess(0.0) >= 0:
            beta_star = 0.0
            notes.append("contraction condition fails already at beta = 0")
        else:
            # the excess is increasing in beta and blows up at alpha/M
            beta_star = brentq(excess, 0.0, upper * (1.0 - 1e-15), xtol=1e-15, rtol=1e-14)
    beta = 0.9 * min(cap, beta_star, 1.0)
    beta_ok = 0.0 < beta < cap
    if not beta_ok:
        notes.append("no admissible beta")
    cval = contraction_value(K, alpha, M, C_r, beta)
    contraction_ok = 0.0 < cval < 1.0 / 3.0
    p = None
    if theta_tilde is not None and K * theta_tilde < 1:
        p = theoretical_p(K, theta_tilde)
    return TheoreticalConstants(K, alpha, M, C_mu, C_r, lam, beta, cap, beta_star,
                                lambda_ok, beta_ok, contraction_ok, cval, notes, p)


def tau_scale(M: float, C_mu: float, d: float) -> float:
    """ln(1/d) / (M + C_mu) for a distance d in (0, 1)."""
    if not 0.0 < d < 1.0:
        raise InvalidArgument(f"distance must lie in (0, 1), got {d}")
    return math.log(1.0 / d) / (M + C_mu)


# ---------------------------------------------------------------- empirical estimation

@dataclass(frozen=True)
class Box:
    """Axis-aligned sampling domain."""
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi) or any(a >= b for a, b in zip(lo, hi)):
            raise InvalidArgument("box needs lo < hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def n(self) -> int:
        return len(self.lo)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(np.subtract(self.hi, self.lo)))

    def contains(self, x) -> bool:
        return bool(np.all(x >= np.array(self.lo)) and np.all(x <= np.array(self.hi)))

    def uniform(self, rng) -> np.ndarray:
        return rng.uniform(self.lo, self.hi)


def _directions(rng, n, count):
    """Half random unit vectors, half signed coordinate axes."""
    d = rng.normal(size=(count, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    axes = rng.integers(0, n, size=count)
    signs = rng.choice((-1.0, 1.0), size=count)
    ax = np.zeros((count, n))
    ax[np.arange(count), axes] = signs
    pick = np.arange(count) % 2 == 1
    d[pick] = ax[pick]
    return d


def sample_pairs(domain: Box, d: float, count: int, rng, mode: str = "mixed", anchor=None):
    """``count`` point pairs at distance ``d`` inside the domain.

    ``mixed``: uniform base points with random or axis directions.
    ``origin``: pairs (anchor, anchor + d e) with anchor the origin unless given.
    """
    n = domain.n
    dirs = _directions(rng, n, count)
    out = []
    if mode == "origin":
        a = np.zeros(n) if anchor is None else np.asarray(anchor, dtype=float)
        for e in dirs:
            for sgn in (1.0, -1.0):
                q = a + sgn * d * e
                if domain.contains(q):
                    out.append((a.copy(), q))
                    break
        return out
    if mode != "mixed":
        raise InvalidArgument(f"unknown pair mode {mode!r}")
    for e in dirs:
        for _ in range(50):
            x = domain.uniform(rng)
            for sgn in (1.0, -1.0):
                q = x + sgn * d * e
                if domain.contains(q):
                    out.append((x, q))
                    break
            else:
                continue
            break
    return out


@dataclass
class RegularityEstimate:
    kind: str
    exponent: float
    log_constant: float
    scales: np.ndarray
    max_increments: np.ndarray
    residual: float
    flat: bool = False
    ratios: Optional[np.ndarray] = None

    @property
    def constant(self) -> float:
        return math.exp(self.log_constant) if math.isfinite(self.log_constant) else math.nan

    def to_json(self) -> dict:
        return {"kind": self.kind, "exponent": None if self.flat else self.exponent,
                "log_constant": None if self.flat else self.log_constant,
                "constant": None if self.flat else self.constant,
                "scale_range": [float(self.scales[0]), float(self.scales[-1])],
                "residual": self.residual, "flat": self.flat,
                "per_scale": [[float(s), float(m)] for s, m in zip(self.scales, self.max_increments)]}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scale", "max_increment"])
        for s, m in zip(self.scales, self.max_increments):
            w.writerow([f"{s:.17g}", f"{m:.17g}"])
        return buf.getvalue()


def _check_scales(scales, domain):
    s = np.asarray(scales, dtype=float)
    if s.ndim != 1 or s.size == 0 or np.any(s <= 0) or np.any(np.diff(s) <= 0):
        raise InvalidArgument("scales must be positive and strictly increasing")
    if s[-1] >= domain.diameter:
        raise InvalidArgument("scales must stay below the domain diameter")
    return s


def _max_increments(F, domain, scales, pairs_per_scale, mode, seed, anchor):
    rng = np.random.default_rng(seed)
    batches = [sample_pairs(domain, d, pairs_per_scale, rng, mode, anchor) for d in scales]

    def one(k):
        best = 0.0
        for x, y in batches[k]:
            inc = float(np.linalg.norm(np.atleast_1d(F(y)) - np.atleast_1d(F(x))))
            best = max(best, inc)
        return best

    return np.array(parallel_map(one, range(len(scales))))


def lipschitz_estimate(F: Callable, domain: Box, scales: Sequence[float], pairs_per_scale: int = 200,
                       mode: str = "mixed", seed: int = 0, anchor=None) -> RegularityEstimate:
    """Largest difference quotient |F(x) - F(y)|/d over sampled pairs, per scale and overall."""
    s = _check_scales(scales, domain)
    inc = _max_increments(F, domain, s, pairs_per_scale, mode, seed, anchor)
    ratios = inc / s
    top = float(np.max(ratios))
    return RegularityEstimate("lipschitz", 1.0, math.log(top) if top > 0 else -math.inf, s, inc,
                              0.0, flat=bool(top == 0.0), ratios=ratios)


def holder_estimate(F: Callable, domain: Box, scales: Sequence[float], pairs_per_scale: int = 200,
                    mode: str = "mixed", seed: int = 0, anchor=None) -> RegularityEstimate:
    """Least-squares slope of log(max increment) against log(scale)."""
    s = _check_scales(scales, domain)
    if s.size < 4 or s[-1] / s[0] < 100.0:
        raise InvalidArgument("need at least 4 scales spanning at least two decades")
    inc = _max_increments(F, domain, s, pairs_per_scale, mode, seed, anchor)
    if np.any(inc <= 0):
        return RegularityEstimate("holder", math.nan, math.nan, s, inc, math.nan, flat=True)
    X, Y = np.log(s), np.log(inc)
    slope, icpt = np.polyfit(X, Y, 1)
    resid = float(np.sqrt(np.mean((Y - (slope * X + icpt)) ** 2)))
    return RegularityEstimate("holder", float(slope), float(icpt), s, inc, resid)
