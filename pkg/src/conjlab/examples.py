"""Builtin systems and closed-form conjugacy oracles."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dichotomy import DichotomyData
from .errors import HypothesisViolated, InvalidArgument
from .flows import (MatrixField, NonlinearField, planar_sine_field, radial_extend,
                    sawtooth_sine_field, scalar_time_field, unit_ball_field)
from .moduli import DEFAULT_WINDOW, SawtoothModulus


def _check_eps(eps):
    if not 0.0 < eps < 1.0:
        raise InvalidArgument(f"epsilon must lie in (0, 1), got {eps}")


# ---------------------------------------------------------------- unit-ball example

def h1(x, eps: float):
    """Scalar conjugacy of x' = -x + f_1(x) on [-1, 1]."""
    x = np.asarray(x, dtype=float)
    pos = np.maximum(x, 0.0)
    neg = np.maximum(-x, 0.0)
    with np.errstate(divide="ignore"):
        right = (1.0 - eps) * pos ** (1.0 / (1.0 - eps))
        left = -(1.0 - eps) ** 1.5 * (neg ** -2.0 - eps) ** -0.5
    out = np.where(x > 0, right, np.where(x < 0, left, 0.0))
    return out if out.ndim else float(out)


def g1(y, eps: float):
    """Inverse of :func:`h1` on [-(1 - eps), 1 - eps]."""
    y = np.asarray(y, dtype=float)
    pos = np.maximum(y, 0.0)
    neg = np.maximum(-y, 0.0)
    with np.errstate(divide="ignore"):
        right = (pos / (1.0 - eps)) ** (1.0 - eps)
        left = -((1.0 - eps) ** 3 * neg ** -2.0 + eps) ** -0.5
    out = np.where(y > 0, right, np.where(y < 0, left, 0.0))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class ClosedFormConjugacy:
    """Componentwise closed-form H and G with their valid (box) domains."""
    name: str
    H: Callable
    G: Callable
    domain: tuple
    image: tuple
    params: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"name": self.name, "domain": list(self.domain), "image": list(self.image),
                "params": self.params}


def unit_ball_example(eps: float):
    """(A, f, D, closed form) for the diagonal system with piecewise linear/cubic f.

    The returned field is radially extended at radius 1 so it is defined on all
    of the plane; the closed forms are valid on [-1, 1]^2.
    """
    _check_eps(eps)
    A = MatrixField.constant(np.diag([-1.0, 1.0]))
    f = radial_extend(unit_ball_field(eps), 1.0)
    D = DichotomyData(0.0, np.diag([1.0, 0.0]), 1.0, 1.0)

    def H(x):
        x = np.asarray(x, dtype=float)
        return h1(x, eps)

    def G(y):
        y = np.asarray(y, dtype=float)
        return g1(y, eps)

    cf = ClosedFormConjugacy("unit_ball", H, G, (-1.0, 1.0), (-(1.0 - eps), 1.0 - eps), {"eps": eps})
    return A, f, D, cf


@dataclass(frozen=True)
class TrajectoryOracles:
    eps: float

    def positive(self, t):
        """x1 with x1(0) = 1."""
        return np.exp((-1.0 + self.eps) * np.asarray(t, dtype=float))

    def negative(self, t):
        """x1 with x1(0) = -1."""
        t = np.asarray(t, dtype=float)
        return -((1.0 - self.eps) * np.exp(2.0 * t) + self.eps) ** -0.5

    def pushed_positive(self, t):
        return (1.0 - self.eps) * np.exp(-np.asarray(t, dtype=float))

    def pushed_negative(self, t):
        return (self.eps - 1.0) * np.exp(-np.asarray(t, dtype=float))


def trajectory_oracles(eps: float) -> TrajectoryOracles:
    _check_eps(eps)
    return TrajectoryOracles(float(eps))


def one_sided_derivatives(eps: float, h: float = 1e-12) -> tuple[float, float]:
    """Forward and backward difference quotients of h1 at 0.

    The right quotient is 0.75 h^{eps/(1-eps)}, so it needs a very small h.
    """
    return h1(h, eps) / h, -h1(-h, eps) / h


def unit_ball_selftest(eps: float, grid_points: int = 2001) -> dict:
    """Closed-form invariants of the unit-ball example."""
    from .flows import integrate
    _, f, _, cf = unit_ball_example(eps)
    A = MatrixField.constant(np.diag([-1.0, 1.0]))
    xs = np.linspace(-1.0, 1.0, grid_points)
    ys = np.linspace(-(1.0 - eps), 1.0 - eps, grid_points)
    orc = trajectory_oracles(eps)
    ts = np.linspace(0.0, 10.0, 1001)
    right, left = one_sided_derivatives(eps)
    traj = integrate(A, f, 0.0, [1.0, 0.0], (0.0, 5.0), tol=(1e-12, 1e-12))
    tt = np.linspace(0.0, 5.0, 51)
    mapped = h1(traj(tt)[:, 0], eps)
    checks = {
        "G_of_H": float(np.max(np.abs(g1(h1(xs, eps), eps) - xs))),
        "H_of_G": float(np.max(np.abs(h1(g1(ys, eps), eps) - ys))),
        "H_at_1": float(h1(1.0, eps)),
        "H_at_0": float(h1(0.0, eps)),
        "right_derivative_at_0": right,
        "left_derivative_at_0": left,
        "pushed_positive": float(np.max(np.abs(h1(orc.positive(ts), eps) - orc.pushed_positive(ts)))),
        "pushed_negative": float(np.max(np.abs(h1(orc.negative(ts), eps) - orc.pushed_negative(ts)))),
        "solution_mapping": float(np.max(np.abs(mapped - (1.0 - eps) * np.exp(-tt)))),
    }
    checks["passed"] = bool(checks["G_of_H"] <= 1e-10 and checks["H_of_G"] <= 1e-10
                            and abs(checks["H_at_1"] - (1.0 - eps)) <= 1e-15
                            and checks["H_at_0"] == 0.0
                            and abs(right) <= 1e-3 and abs(left - (1.0 - eps) ** 1.5) <= 1e-3
                            and checks["pushed_positive"] <= 1e-10
                            and checks["pushed_negative"] <= 1e-10
                            and checks["solution_mapping"] <= 1e-6)
    return checks


# ---------------------------------------------------------------- scalar time-dependent example

@dataclass(frozen=True)
class ScalarTimeOracle:
    """Closed-form H, G valid for |x| >= delta and the reference solution x(0) = 1."""
    eps: float
    delta: float

    @staticmethod
    def H(t, x):
        return 1.0 / x - np.exp(t) / 2.0

    @staticmethod
    def G(t, y):
        return 2.0 / (np.exp(t) + 2.0 * y)

    @staticmethod
    def reference(t):
        return 2.0 / (np.exp(t) + np.exp(-t))

    def pushed(self, t):
        return self.H(t, self.reference(t))

    def pushed_residual(self, t, h: float = 1e-20) -> float:
        """|d/dt H(t, x(t)) + H(t, x(t))| with a complex-step derivative."""
        t = np.asarray(t, dtype=float)
        z = t + 1j * h
        deriv = np.imag(self.H(z, self.reference(z))) / h
        return float(np.max(np.abs(deriv + self.pushed(t))))


def scalar_time_example(eps: float, delta: float):
    """(A, f, D, oracle) for x' = -x + f(t, x) with f blended between |x| = eps and delta."""
    if not 0.0 < eps < delta:
        raise InvalidArgument(f"need 0 < eps < delta, got eps={eps}, delta={delta}")
    A = MatrixField.constant([[-1.0]])
    f = scalar_time_field(eps, delta)
    D = DichotomyData(0.0, np.eye(1), 1.0, 1.0)
    return A, f, D, ScalarTimeOracle(float(eps), float(delta))


def scalar_time_selftest(eps: float, delta: float, seed: int = 0) -> dict:
    *_, orc = scalar_time_example(eps, delta)
    ts = np.linspace(-5.0, 5.0, 1001)
    rng = np.random.default_rng(seed)
    x1 = rng.choice((-1.0, 1.0), 2000) * rng.uniform(delta, 10.0, 2000)
    x2 = rng.choice((-1.0, 1.0), 2000) * rng.uniform(delta, 10.0, 2000)
    keep = x1 != x2
    t = rng.uniform(-3.0, 3.0, 2000)[keep]
    ratio = np.abs(orc.H(t, x1[keep]) - orc.H(t, x2[keep])) / np.abs(x1[keep] - x2[keep])
    checks = {"H_at_0_1": float(orc.H(0.0, 1.0)), "pushed_residual": orc.pushed_residual(ts),
              "lipschitz_ratio": float(np.max(ratio)), "lipschitz_bound": 1.0 / delta ** 2}
    checks["passed"] = bool(checks["H_at_0_1"] == 0.5 and checks["pushed_residual"] <= 1e-10
                            and checks["lipschitz_ratio"] <= checks["lipschitz_bound"] + 1e-6)
    return checks


# ---------------------------------------------------------------- sawtooth and planar

def sawtooth_modulus(c: float, window=DEFAULT_WINDOW) -> SawtoothModulus:
    """Even triangular bumps of height c m / 2 on [m, m + 1/m]; unbounded, unit-window mass <= c."""
    return SawtoothModulus(c=float(c), window=tuple(window))


def sawtooth_example(c: float, window=DEFAULT_WINDOW):
    """(A, f, D) with f(t, x) = mu(t) sin(x) and the sawtooth mu."""
    A = MatrixField.constant(np.diag([-1.0, 1.0]))
    f = sawtooth_sine_field(c, 2, window)
    D = DichotomyData(0.0, np.diag([1.0, 0.0]), 1.0, 1.0)
    return A, f, D


def sawtooth_selftest(c: float, m_max: int = 50) -> dict:
    mu = sawtooth_modulus(c, window=(-(m_max + 1.0), m_max + 1.0))
    starts, vals = mu.window_integrals()
    peaks = [mu.peak(m) for m in range(1, m_max + 1)]
    checks = {"max_window_integral": float(vals.max()), "c": c,
              "max_peak": float(max(peaks)), "peak_at_4": mu.peak(4),
              "value_on_0_1": float(np.max(mu(np.linspace(0.0, 0.999, 100))))}
    checks["passed"] = bool(checks["max_window_integral"] <= c and checks["max_peak"] > 10 * c
                            and checks["value_on_0_1"] == 0.0)
    return checks


def planar_example(sigma: float, alpha1: float = 0.5):
    """(A, f, D): A = diag(-1, 1), f = sigma (sin x2, sin x1), K = 1, alpha = 1."""
    if not sigma > 0:
        raise InvalidArgument(f"sigma must be positive, got {sigma}")
    if sigma >= 0.5:
        raise HypothesisViolated(f"sigma = {sigma} gives theta = 2 sigma >= 1")
    A = MatrixField.constant(np.diag([-1.0, 1.0]))
    f: NonlinearField = planar_sine_field(sigma)
    D = DichotomyData(0.0, np.diag([1.0, 0.0]), 1.0, 1.0, alpha1)
    return A, f, D


EXAMPLES = ("unit_ball", "scalar_time", "sawtooth", "planar")
