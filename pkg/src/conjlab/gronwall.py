"""Dichotomic (Gronwall-type) inequalities: windowed kernel operator, theta1, certificates.

An instance lives on a uniform grid of ``n_grid`` points over [t0, s].  The
right-hand side of either inequality is evaluated with the trapezoid rule on
that grid, which is also the operator used by the worst-case fixed point, so
the grid-level statement of each lemma holds exactly and certificates can be
checked without discretisation slack.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import _kernels as K_
from .dichotomy import _quad_pieces, exp_kernel_sweep
from .errors import ContractionViolated, ConvergenceFailure, InvalidArgument
from .moduli import ConstantModulus, ScalarModulus, TabulatedModulus

FIRST = "first"
SECOND = "second"
DEFAULT_GRID = 400

PASS = "pass"
LEMMA_VIOLATED = "lemma-violated"
HYPOTHESIS_FAILED = "hypothesis-not-satisfied"


@dataclass(frozen=True, eq=False)
class IneqInstance:
    """Data of one dichotomic inequality; ``u`` is optional (tabulated samples)."""
    t0: float
    s: float
    c: float
    c1: float
    c2: float
    alpha: float
    alpha1: float
    b: ScalarModulus
    u_times: Optional[np.ndarray] = None
    u_values: Optional[np.ndarray] = None
    which: str = FIRST
    n_grid: int = DEFAULT_GRID

    def __post_init__(self):
        if not math.isfinite(self.s) or not self.s > self.t0:
            raise InvalidArgument(f"need a finite window end s > t0, got t0={self.t0}, s={self.s}")
        for name in ("c", "c1", "c2", "alpha"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be positive")
        if not 0 < self.alpha1 < self.alpha:
            raise InvalidArgument("alpha1 must lie in (0, alpha)")
        if self.which not in (FIRST, SECOND):
            raise InvalidArgument(f"which must be {FIRST!r} or {SECOND!r}")
        if self.n_grid < 3:
            raise InvalidArgument("grid needs at least 3 points")
        if (self.u_times is None) != (self.u_values is None):
            raise InvalidArgument("u needs both times and values")
        if self.u_values is not None:
            ut = np.asarray(self.u_times, dtype=float)
            uv = np.asarray(self.u_values, dtype=float)
            if ut.shape != uv.shape or ut.ndim != 1 or ut.size < 2:
                raise InvalidArgument("u samples must be matching 1-d arrays")
            if np.any(uv < 0):
                raise InvalidArgument("u must be nonnegative")
            object.__setattr__(self, "u_times", ut)
            object.__setattr__(self, "u_values", uv)

    @property
    def alpha2(self) -> float:
        return self.alpha - self.alpha1

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(self.t0, self.s, self.n_grid)

    def u_on_grid(self) -> np.ndarray:
        if self.u_values is None:
            raise InvalidArgument("instance carries no u")
        return np.interp(self.grid, self.u_times, self.u_values)

    def with_u(self, times, values) -> "IneqInstance":
        return replace(self, u_times=np.asarray(times, float), u_values=np.asarray(values, float))

    def forcing(self) -> np.ndarray:
        g = self.grid
        gap = g - self.t0 if self.which == FIRST else self.s - g
        return self.c * np.exp(-self.alpha * gap)

    def bound(self, theta1: float) -> np.ndarray:
        g = self.grid
        gap = g - self.t0 if self.which == FIRST else self.s - g
        return self.c / (1.0 - theta1) * np.exp(-self.alpha2 * gap)

    def rhs(self, u: np.ndarray) -> np.ndarray:
        """Right-hand side of the inequality on the grid (trapezoid integrals)."""
        g = self.grid
        F, B = K_.exp_conv(g, np.asarray(self.b(g)) * u, self.alpha)
        return self.forcing() + self.c1 * F + self.c2 * B

    def to_json(self) -> dict:
        return {"which": self.which, "t0": self.t0, "s": self.s, "c": self.c, "c1": self.c1,
                "c2": self.c2, "alpha": self.alpha, "alpha1": self.alpha1, "n_grid": self.n_grid,
                "b": self.b.to_json()}


def l_alpha1_windowed(inst: IneqInstance, t: float) -> float:
    """c1 int_{t0}^t e^{-a1(t-tau)} b + c2 int_t^s e^{-a1(tau-t)} b, by adaptive quadrature."""
    t = float(t)
    if not inst.t0 <= t <= inst.s:
        raise InvalidArgument(f"t={t} outside [{inst.t0}, {inst.s}]")
    a1, b = inst.alpha1, inst.b
    if isinstance(b, ConstantModulus):
        left = (1.0 - math.exp(-a1 * (t - inst.t0))) / a1
        right = (1.0 - math.exp(-a1 * (inst.s - t))) / a1
        return b.value * (inst.c1 * left + inst.c2 * right)
    total = 0.0
    if t > inst.t0:
        knots = np.union1d([inst.t0, t], b.breakpoints(inst.t0, t))
        total += inst.c1 * _quad_pieces(lambda x: math.exp(-a1 * (t - x)) * float(b(x)), knots)[0]
    if t < inst.s:
        knots = np.union1d([t, inst.s], b.breakpoints(t, inst.s))
        total += inst.c2 * _quad_pieces(lambda x: math.exp(-a1 * (x - t)) * float(b(x)), knots)[0]
    return total


def theta1_discrete(inst: IneqInstance) -> float:
    """sup over the grid of the trapezoid version of the windowed operator."""
    g = inst.grid
    F, B = K_.exp_conv(g, np.asarray(inst.b(g), dtype=float) * np.ones_like(g), inst.alpha1)
    return float(np.max(inst.c1 * F + inst.c2 * B))


def theta1(inst: IneqInstance) -> float:
    """sup over the grid of the windowed operator at rate alpha1.

    The larger of the Gauss-Legendre sweep and the trapezoid-grid sup, so the
    returned value also dominates the operator used on the grid.
    """
    F, B = exp_kernel_sweep(inst.b, inst.alpha1, inst.grid)
    return max(float(np.max(inst.c1 * F + inst.c2 * B)), theta1_discrete(inst))


@dataclass
class Certificate:
    which: str
    status: str
    hypothesis_ok: bool
    theta1: float
    bound_margin: float
    worst_t: float
    hypothesis_margin: float
    slack: float

    @property
    def passed(self) -> bool:
        return self.status == PASS

    def to_json(self) -> dict:
        return {"which": self.which, "status": self.status, "hypothesis_ok": self.hypothesis_ok,
                "theta1": self.theta1, "bound_margin": self.bound_margin, "worst_t": self.worst_t,
                "hypothesis_margin": self.hypothesis_margin, "slack": self.slack}


def _certify(inst: IneqInstance, which: str, slack: float, th: Optional[float]) -> Certificate:
    if inst.which != which:
        inst = replace(inst, which=which)
    if slack < 0:
        raise InvalidArgument("slack must be nonnegative")
    th = theta1(inst) if th is None else th
    if th >= 1.0:
        raise ContractionViolated(f"theta1 = {th:.6g} >= 1; the lemma does not apply")
    u = inst.u_on_grid()
    rhs = inst.rhs(u)
    hyp = rhs * (1.0 + slack) - u
    scale = np.maximum(rhs, inst.c * 1e-300)
    hyp_margin = float(np.min(hyp / scale))
    hypothesis_ok = hyp_margin >= 0.0
    bnd = inst.bound(th)
    rel = (bnd * (1.0 + slack) - u) / bnd
    k = int(np.argmin(rel))
    margin = float(rel[k])
    # the lemma is an implication: without its hypothesis the conclusion is vacuous
    if not hypothesis_ok:
        status = HYPOTHESIS_FAILED
    else:
        status = PASS if margin >= 0.0 else LEMMA_VIOLATED
    return Certificate(which, status, hypothesis_ok, th, margin, float(inst.grid[k]), hyp_margin, slack)


def check_first_inequality(inst: IneqInstance, slack: float = 0.0,
                           theta: Optional[float] = None) -> Certificate:
    """Certify u(t) <= c/(1-theta1) e^{-alpha2 (t-t0)} given the forward inequality."""
    return _certify(inst, FIRST, slack, theta)


def check_second_inequality(inst: IneqInstance, slack: float = 0.0,
                            theta: Optional[float] = None) -> Certificate:
    """Certify u(t) <= c/(1-theta1) e^{-alpha2 (s-t)} given the backward inequality."""
    return _certify(inst, SECOND, slack, theta)


@dataclass
class WorstCase:
    times: np.ndarray
    values: np.ndarray
    iterations: int
    changes: list = field(default_factory=list)


def worst_case_u(inst: IneqInstance, tol: float = 1e-12, max_iter: int = 10_000,
                 theta: Optional[float] = None) -> WorstCase:
    """Maximal solution: Picard iteration of the right-hand side taken as equality.

    Stops when the sup-change drops below ``tol * c``; the relative criterion
    keeps the iterates exactly linear in ``c``.
    """
    th = theta1(inst) if theta is None else theta
    if th >= 1.0:
        raise ContractionViolated(f"theta1 = {th:.6g} >= 1; Picard iteration need not converge")
    u = inst.forcing()
    changes = []
    for it in range(1, max_iter + 1):
        nxt = inst.rhs(u)
        change = float(np.max(np.abs(nxt - u)))
        changes.append(change)
        u = nxt
        if change < tol * inst.c:
            return WorstCase(inst.grid, u, it, changes)
    raise ConvergenceFailure(f"no convergence in {max_iter} iterations", changes[-1], max_iter)


def random_instances(seed: int, count: int = 50, theta_max: float = 0.9,
                     n_grid: int = DEFAULT_GRID):
    """Seeded family: c, c1, c2 in [0.1, 3], alpha in [0.5, 2], constant or tabulated b."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        c, c1, c2 = rng.uniform(0.1, 3.0, 3)
        alpha = rng.uniform(0.5, 2.0)
        alpha1 = alpha * rng.uniform(0.1, 0.9)
        t0 = rng.uniform(-2.0, 2.0)
        s = t0 + rng.uniform(2.0, 10.0)
        if i % 2 == 0:
            b = ConstantModulus(value=1.0)
        else:
            ts = np.linspace(t0, s, 9)
            b = TabulatedModulus(times=tuple(ts), values=tuple(rng.uniform(0.0, 1.0, ts.size)))
        inst = IneqInstance(t0, s, c, c1, c2, alpha, alpha1, b, n_grid=n_grid)
        target = theta_max * rng.uniform(0.05, 1.0)
        scale = target / theta1(inst)
        b = b.scaled(scale) if not isinstance(b, ConstantModulus) else ConstantModulus(value=scale)
        out.append(replace(inst, b=b))
    return out
