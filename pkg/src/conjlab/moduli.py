"""Nonnegative scalar moduli b(t): bounds mu(t), Lipschitz rates r(t), kernel weights.

Every modulus lives on a declared evaluation window.  Its window supremum
``C = sup_t int_t^{t+1} b`` is computed on a grid of left endpoints with step
``grid_step`` (reported alongside the value), because a supremum over the whole
real line is not computable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .errors import InvalidArgument
from . import _kernels

DEFAULT_WINDOW = (-20.0, 20.0)
DEFAULT_GRID_STEP = 1e-2

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class ScalarModulus:
    window: tuple = DEFAULT_WINDOW
    grid_step: float = DEFAULT_GRID_STEP

    kind = "abstract"

    def __call__(self, t):
        raise NotImplementedError

    def breakpoints(self, a: float, b: float) -> np.ndarray:
        """Kinks of the modulus inside (a, b); quadrature splits there."""
        return np.empty(0)

    def antiderivative(self, ts) -> np.ndarray:
        """int_{ts[0]}^{ts[k]} b(s) ds for increasing ``ts`` (8-point Gauss per piece)."""
        ts = np.asarray(ts, dtype=float)
        if ts.size == 0:
            return ts.copy()
        knots = np.union1d(ts, self.breakpoints(ts[0], ts[-1]))
        lo, hi = knots[:-1], knots[1:]
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        nodes = mid[:, None] + half[:, None] * _GL_X[None, :]
        pieces = half * (np.asarray(self(nodes.ravel())).reshape(nodes.shape) @ _GL_W)
        cum = np.concatenate(([0.0], np.cumsum(pieces)))
        return cum[np.searchsorted(knots, ts)]

    def integral(self, a: float, b: float) -> float:
        F = self.antiderivative(np.array([a, b]))
        return float(F[1] - F[0])

    def window_integrals(self):
        """(left endpoints, unit-window integrals) on the sampling grid."""
        a, b = self.window
        starts = np.arange(a, b - 1.0 + 0.5 * self.grid_step, self.grid_step)
        pts = np.union1d(starts, starts + 1.0)
        F = self.antiderivative(pts)
        lo = F[np.searchsorted(pts, starts)]
        hi = F[np.searchsorted(pts, starts + 1.0)]
        return starts, hi - lo

    @cached_property
    def window_sup(self) -> float:
        """C = sup over the window grid of int_t^{t+1} b."""
        _, vals = self.window_integrals()
        return float(max(vals.max(initial=0.0), 0.0))

    @cached_property
    def sup_value(self) -> float:
        a, b = self.window
        ts = np.union1d(np.arange(a, b + self.grid_step, self.grid_step), self.breakpoints(a, b))
        return float(np.max(self(ts)))

    @property
    def is_constant(self) -> bool:
        return False

    def scaled(self, factor: float) -> "ScalarModulus":
        return ScaledModulus(base=self, factor=float(factor), window=self.window, grid_step=self.grid_step)

    def to_json(self) -> dict:
        return {"kind": self.kind, "window": list(self.window), "grid_step": self.grid_step}


@dataclass(frozen=True)
class ConstantModulus(ScalarModulus):
    value: float = 0.0

    kind = "constant"

    def __post_init__(self):
        if not self.value >= 0:
            raise InvalidArgument(f"modulus value must be nonnegative, got {self.value}")

    def __call__(self, t):
        return np.full(np.shape(t), self.value, dtype=float) if np.ndim(t) else float(self.value)

    def antiderivative(self, ts):
        ts = np.asarray(ts, dtype=float)
        return self.value * (ts - ts[0]) if ts.size else ts.copy()

    @property
    def window_sup(self):
        return float(self.value)

    @property
    def sup_value(self):
        return float(self.value)

    @property
    def is_constant(self):
        return True

    def scaled(self, factor):
        return ConstantModulus(value=self.value * factor, window=self.window, grid_step=self.grid_step)

    def to_json(self):
        return {**super().to_json(), "value": self.value}


@dataclass(frozen=True)
class TabulatedModulus(ScalarModulus):
    """Piecewise-linear through (times, values), clamped outside the table."""
    times: tuple = ()
    values: tuple = ()

    kind = "tabulated"

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size < 2:
            raise InvalidArgument("tabulated modulus needs matching 1-d times/values with >= 2 samples")
        if np.any(np.diff(t) <= 0):
            raise InvalidArgument("tabulated times must be strictly increasing")
        if np.any(v < 0):
            raise InvalidArgument("tabulated modulus values must be nonnegative")

    @cached_property
    def _t(self):
        return np.asarray(self.times, dtype=float)

    @cached_property
    def _v(self):
        return np.asarray(self.values, dtype=float)

    def __call__(self, t):
        out = np.interp(t, self._t, self._v)
        return out if np.ndim(t) else float(out)

    def breakpoints(self, a, b):
        t = self._t
        return t[(t > a) & (t < b)]

    def antiderivative(self, ts):
        # exact: the integrand is piecewise linear between knots
        ts = np.asarray(ts, dtype=float)
        if ts.size == 0:
            return ts.copy()
        knots = np.union1d(ts, self.breakpoints(ts[0], ts[-1]))
        vals = self(knots)
        cum = np.concatenate(([0.0], np.cumsum(0.5 * np.diff(knots) * (vals[:-1] + vals[1:]))))
        return cum[np.searchsorted(knots, ts)]

    def to_json(self):
        return {**super().to_json(), "times": list(map(float, self.times)),
                "values": list(map(float, self.values))}


@dataclass(frozen=True)
class SawtoothModulus(ScalarModulus):
    """Even extension of triangular bumps of height c*m/2 on [m, m + 1/m], m >= 1.

    Unbounded (peaks grow linearly in m) while every unit window carries mass
    at most c/4 + c/4.
    """
    c: float = 1.0

    kind = "sawtooth"

    def __post_init__(self):
        if not self.c > 0:
            raise InvalidArgument(f"sawtooth amplitude c must be positive, got {self.c}")

    def __call__(self, t):
        if np.ndim(t) == 0:
            return _kernels.sawtooth_value(self.c, float(t))
        tau = np.abs(np.asarray(t, dtype=float))
        m = np.floor(tau)
        u = tau - m
        msafe = np.maximum(m, 1.0)
        rise = self.c * m * m * u
        fall = self.c * m - self.c * m * m * u
        out = np.where(u < 0.5 / msafe, rise, np.where(u < 1.0 / msafe, fall, 0.0))
        return np.where(tau < 1.0, 0.0, out)

    def peak(self, m: int) -> float:
        return self.c * m / 2.0

    def breakpoints(self, a, b):
        lo = max(1, int(math.floor(min(abs(a), abs(b)))) - 1) if a * b > 0 else 1
        hi = int(math.ceil(max(abs(a), abs(b)))) + 1
        m = np.arange(lo, hi + 1, dtype=float)
        pos = np.concatenate((m, m + 0.5 / m, m + 1.0 / m))
        pts = np.concatenate((pos, -pos, [0.0]))
        pts = np.unique(pts)
        return pts[(pts > a) & (pts < b)]

    def _half_antiderivative(self, tau):
        c = self.c
        tau = np.asarray(tau, dtype=float)
        m = np.floor(tau)
        msafe = np.maximum(m, 1.0)
        u = tau - m
        full = (msafe - 1.0) * c / 4.0
        rise = c * msafe * msafe * u * u / 2.0
        v = u - 0.5 / msafe
        fall = c / 8.0 + c * msafe * v - c * msafe * msafe * (u * u - 0.25 / msafe ** 2) / 2.0
        part = np.where(u < 0.5 / msafe, rise, np.where(u < 1.0 / msafe, fall, c / 4.0))
        return np.where(tau < 1.0, 0.0, full + part)

    def antiderivative(self, ts):
        ts = np.asarray(ts, dtype=float)
        if ts.size == 0:
            return ts.copy()
        G = np.sign(ts) * self._half_antiderivative(np.abs(ts))
        return G - G[0]

    def to_json(self):
        return {**super().to_json(), "c": self.c}


@dataclass(frozen=True)
class ScaledModulus(ScalarModulus):
    base: Optional[ScalarModulus] = None
    factor: float = 1.0

    kind = "scaled"

    def __call__(self, t):
        return self.factor * self.base(t)

    def breakpoints(self, a, b):
        return self.base.breakpoints(a, b)

    def antiderivative(self, ts):
        return self.factor * self.base.antiderivative(ts)

    @property
    def is_constant(self):
        return self.base.is_constant

    def to_json(self):
        return {**super().to_json(), "factor": self.factor, "base": self.base.to_json()}


@dataclass(frozen=True)
class ReducedModulus(ScalarModulus):
    """b(t) * exp(-eps |t|)."""
    base: Optional[ScalarModulus] = None
    eps: float = 0.0

    kind = "reduced"

    def __call__(self, t):
        return self.base(t) * np.exp(-self.eps * np.abs(t))

    def breakpoints(self, a, b):
        bp = self.base.breakpoints(a, b)
        return np.union1d(bp, [0.0]) if a < 0.0 < b else bp

    def to_json(self):
        return {**super().to_json(), "eps": self.eps, "base": self.base.to_json()}


@dataclass(frozen=True)
class FunctionModulus(ScalarModulus):
    """A builtin closed-form modulus (vectorized callable)."""
    fn: Optional[Callable] = field(default=None, compare=False)
    name: str = "function"
    params: tuple = ()

    kind = "builtin"

    def __call__(self, t):
        out = self.fn(np.asarray(t, dtype=float))
        return out if np.ndim(t) else float(out)

    def to_json(self):
        return {**super().to_json(), "name": self.name, "params": list(self.params)}


ZERO = ConstantModulus(value=0.0)


def constant(value: float, window=DEFAULT_WINDOW) -> ConstantModulus:
    return ConstantModulus(value=float(value), window=tuple(window))
