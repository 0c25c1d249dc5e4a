"""Linear and perturbed flows: coefficient fields, perturbations, integration."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.linalg import expm

from . import _kernels as K
from .errors import IntegrationFailure, InvalidArgument, NumericOverflow
from .moduli import (DEFAULT_GRID_STEP, DEFAULT_WINDOW, ConstantModulus, FunctionModulus,
                     SawtoothModulus, ScalarModulus)

DEFAULT_TOL = (1e-9, 1e-9)
DEFAULT_MAX_STEPS = 2_000_000


def opnorm(m) -> float:
    """Spectral norm (largest singular value)."""
    m = np.atleast_2d(m)
    return float(np.linalg.norm(m, 2))


# ---------------------------------------------------------------- MatrixField

@dataclass(frozen=True, eq=False)
class MatrixField:
    """A(t) = const + diag(tabulated, piecewise linear, clamped) + diag(amp * sin(freq t))."""
    a_const: np.ndarray
    tab_t: np.ndarray = field(default_factory=lambda: np.empty(0))
    tab_d: np.ndarray = None
    sin_amp: np.ndarray = None
    sin_freq: float = 0.0
    kind: str = "constant"
    spec: dict = field(default_factory=dict)
    window: tuple = DEFAULT_WINDOW
    grid_step: float = DEFAULT_GRID_STEP

    def __post_init__(self):
        a = np.ascontiguousarray(np.atleast_2d(np.asarray(self.a_const, dtype=float)))
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
            raise InvalidArgument(f"coefficient matrix must be square, got shape {a.shape}")
        n = a.shape[0]
        object.__setattr__(self, "a_const", a)
        object.__setattr__(self, "tab_t", np.ascontiguousarray(self.tab_t, dtype=float))
        tab_d = np.empty((0, n)) if self.tab_d is None else self.tab_d
        object.__setattr__(self, "tab_d", np.ascontiguousarray(np.asarray(tab_d, dtype=float).reshape(-1, n)))
        amp = np.zeros(n) if self.sin_amp is None else self.sin_amp
        object.__setattr__(self, "sin_amp", np.ascontiguousarray(amp, dtype=float))
        if self.tab_t.shape[0] != self.tab_d.shape[0]:
            raise InvalidArgument("tabulated times and diagonal values differ in length")
        if self.tab_t.size and np.any(np.diff(self.tab_t) <= 0):
            raise InvalidArgument("tabulated times must be strictly increasing")
        if self.sin_amp.shape != (n,):
            raise InvalidArgument("sinusoid amplitude must have one entry per dimension")

    # constructors
    @classmethod
    def constant(cls, matrix, **kw) -> "MatrixField":
        m = np.atleast_2d(np.asarray(matrix, dtype=float))
        return cls(a_const=m, kind="constant", spec={"kind": "constant", "matrix": m.tolist()}, **kw)

    @classmethod
    def tabulated_diagonal(cls, times, values, **kw) -> "MatrixField":
        v = np.asarray(values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        n = v.shape[1]
        return cls(a_const=np.zeros((n, n)), tab_t=np.asarray(times, dtype=float), tab_d=v,
                   kind="tabulated_diagonal",
                   spec={"kind": "tabulated_diagonal", "n_samples": int(v.shape[0])}, **kw)

    @classmethod
    def sin_diagonal(cls, base, amp, freq=1.0, **kw) -> "MatrixField":
        base = np.atleast_1d(np.asarray(base, dtype=float))
        return cls(a_const=np.diag(base), sin_amp=np.atleast_1d(np.asarray(amp, dtype=float)),
                   sin_freq=float(freq), kind="sin_diagonal",
                   spec={"kind": "builtin", "name": "sin_diagonal", "base": base.tolist(),
                         "amp": list(np.atleast_1d(amp)), "freq": float(freq)}, **kw)

    # evaluation
    @property
    def n(self) -> int:
        return self.a_const.shape[0]

    @property
    def kernel_args(self):
        return (self.a_const, self.tab_t, self.tab_d, self.sin_amp, float(self.sin_freq))

    def __call__(self, t: float) -> np.ndarray:
        out = np.empty((self.n, self.n))
        K.matrix_eval(float(t), *self.kernel_args, out)
        return out

    @property
    def is_constant(self) -> bool:
        return self.tab_t.size == 0 and (self.sin_freq == 0.0 or not np.any(self.sin_amp))

    @property
    def is_diagonal(self) -> bool:
        off = self.a_const - np.diag(np.diag(self.a_const))
        return not np.any(off)

    @cached_property
    def bound_M(self) -> float:
        """sup of ||A(t)|| over the window, sampled with ``grid_step``."""
        if self.is_constant:
            return opnorm(self.a_const)
        a, b = self.window
        ts = np.union1d(np.arange(a, b + self.grid_step, self.grid_step),
                        self.tab_t[(self.tab_t >= a) & (self.tab_t <= b)])
        return float(np.max(np.linalg.norm(self.stack(ts), ord=2, axis=(1, 2))))

    def stack(self, ts) -> np.ndarray:
        """A(t) for every t in ``ts``, shape (len(ts), n, n)."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        out = np.repeat(self.a_const[None], ts.size, axis=0)
        idx = np.arange(self.n)
        if self.tab_t.size:
            for i in idx:
                out[:, i, i] += np.interp(ts, self.tab_t, self.tab_d[:, i])
        if self.sin_freq != 0.0:
            out[:, idx, idx] += np.sin(self.sin_freq * ts)[:, None] * self.sin_amp[None, :]
        return out

    def diag_antiderivative(self, ts) -> np.ndarray:
        """F(t) with F' = diag(A(t)) and F(0) = 0, exact for every catalog kind."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        out = np.outer(ts, np.diag(self.a_const))
        if self.tab_t.size:
            out = out + _tab_antiderivative(self.tab_t, self.tab_d, ts) \
                - _tab_antiderivative(self.tab_t, self.tab_d, np.zeros(1))
        if self.sin_freq != 0.0:
            w = self.sin_freq
            out = out + np.outer(1.0 - np.cos(w * ts), self.sin_amp) / w
        return out

    def diag_integral(self, t, s) -> np.ndarray:
        """int_s^t of the diagonal of A."""
        F = self.diag_antiderivative([t, s])
        return F[0] - F[1]

    def propagators(self, nodes) -> tuple[np.ndarray, np.ndarray]:
        """Step maps U(s_{k+1}, s_k) and their inverses on a node set."""
        nodes = np.asarray(nodes, dtype=float)
        h = np.diff(nodes)
        n = self.n
        if self.is_diagonal:
            d = np.diff(self.diag_antiderivative(nodes), axis=0)
            phis = np.zeros((h.size, n, n))
            phinvs = np.zeros((h.size, n, n))
            idx = np.arange(n)
            phis[:, idx, idx] = np.exp(d)
            phinvs[:, idx, idx] = np.exp(-d)
            return phis, phinvs
        if self.is_constant:
            uniq, inv = np.unique(np.round(h, 15), return_inverse=True)
            e = np.stack([expm(self.a_const * hk) for hk in uniq])
            ei = np.stack([expm(-self.a_const * hk) for hk in uniq])
            return np.ascontiguousarray(e[inv]), np.ascontiguousarray(ei[inv])
        nsub = max(1, int(math.ceil(np.max(h) * max(self.bound_M, 1.0) / 0.01)))
        phis = K.rk4_propagators(nodes, nsub, *self.kernel_args)
        return phis, np.linalg.inv(phis)

    def to_json(self) -> dict:
        return dict(self.spec, n=self.n, bound_M=self.bound_M, window=list(self.window),
                    grid_step=self.grid_step)


def _tab_antiderivative(tt, td, ts):
    """int_{tt[0]}^{t} of the clamped piecewise-linear diagonal table, rows per t."""
    cum = np.concatenate((np.zeros((1, td.shape[1])),
                          np.cumsum(0.5 * np.diff(tt)[:, None] * (td[:-1] + td[1:]), axis=0)))
    ts = np.asarray(ts, dtype=float)
    k = np.clip(np.searchsorted(tt, ts, side="right") - 1, 0, tt.size - 2)
    tc = np.clip(ts, tt[0], tt[-1])
    w = ((tc - tt[k]) / (tt[k + 1] - tt[k]))[:, None]
    val = (1 - w) * td[k] + w * td[k + 1]
    inside = cum[k] + 0.5 * (tc - tt[k])[:, None] * (td[k] + val)
    below = (np.minimum(ts, tt[0]) - tt[0])[:, None] * td[0]
    above = (np.maximum(ts, tt[-1]) - tt[-1])[:, None] * td[-1]
    return inside + below + above


# ---------------------------------------------------------------- NonlinearField

_FIELD_CODES = {
    "zero": K.FIELD_ZERO,
    "planar_sine": K.FIELD_PLANAR_SINE,
    "unit_ball": K.FIELD_UNIT_BALL,
    "scalar_time": K.FIELD_SCALAR_TIME,
    "sawtooth_sine": K.FIELD_SAWTOOTH_SINE,
    "linear": K.FIELD_LINEAR,
}


@dataclass(frozen=True, eq=False)
class NonlinearField:
    """Perturbation f(t, x) from the closed catalog, with its moduli.

    ``mu`` bounds ||f(t,x)|| (``None`` when f is unbounded in x) and ``r`` is
    the Lipschitz rate in x.  ``radius > 0`` marks a radial extension.
    """
    kind: str
    n: int
    params: tuple = ()
    mu: Optional[ScalarModulus] = None
    r: ScalarModulus = field(default_factory=lambda: ConstantModulus(value=0.0))
    radius: float = 0.0

    def __post_init__(self):
        if self.kind not in _FIELD_CODES:
            raise InvalidArgument(f"unknown field kind {self.kind!r}; known: {sorted(_FIELD_CODES)}")

    @property
    def code(self) -> int:
        return _FIELD_CODES[self.kind]

    @property
    def kernel_args(self):
        return (self.code, np.asarray(self.params, dtype=float).reshape(-1), float(self.radius))

    def __call__(self, t: float, x) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=float)
        out = np.empty_like(x)
        K.field_eval(float(t), x, *self.kernel_args, out)
        return out

    def many(self, ts, xs) -> np.ndarray:
        ts = np.ascontiguousarray(np.broadcast_to(np.asarray(ts, dtype=float), (len(xs),)))
        return K.field_eval_many(ts, np.ascontiguousarray(xs, dtype=float), *self.kernel_args)

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero"

    def to_json(self) -> dict:
        return {"kind": self.kind, "n": self.n, "params": list(self.params), "radius": self.radius,
                "mu": None if self.mu is None else self.mu.to_json(), "r": self.r.to_json()}


def zero_field(n: int, window=DEFAULT_WINDOW) -> NonlinearField:
    z = ConstantModulus(value=0.0, window=tuple(window))
    return NonlinearField("zero", n, (), mu=z, r=z)


def planar_sine_field(sigma: float, window=DEFAULT_WINDOW) -> NonlinearField:
    """sigma * (sin x2, sin x1): bound sigma*sqrt(2), Lipschitz rate sigma."""
    w = tuple(window)
    return NonlinearField("planar_sine", 2, (float(sigma),),
                          mu=ConstantModulus(value=abs(sigma) * math.sqrt(2.0), window=w),
                          r=ConstantModulus(value=abs(sigma), window=w))


def unit_ball_field(eps: float, window=DEFAULT_WINDOW) -> NonlinearField:
    """Piecewise linear/cubic components on [-1, 1]^2 (not extended)."""
    w = tuple(window)
    return NonlinearField("unit_ball", 2, (float(eps),),
                          mu=ConstantModulus(value=float(eps) * math.sqrt(2.0), window=w),
                          r=ConstantModulus(value=3.0 * float(eps), window=w))


def scalar_time_field(eps: float, delta: float, window=DEFAULT_WINDOW) -> NonlinearField:
    """w(|x|) * 2/(e^{2t}+1) * x with a cubic Hermite ramp w from |x|=eps to |x|=delta."""
    ramp = 1.0 + 1.5 * delta / (delta - eps)
    rate = FunctionModulus(fn=lambda t: ramp * 2.0 / (np.exp(np.minimum(2.0 * t, 700.0)) + 1.0),
                           name="scalar_time_rate", params=(eps, delta), window=tuple(window))
    return NonlinearField("scalar_time", 1, (float(eps), float(delta)), mu=None, r=rate)


def sawtooth_sine_field(c: float, n: int = 2, window=DEFAULT_WINDOW) -> NonlinearField:
    """mu(t) * sin(x) componentwise with the sawtooth mu."""
    saw = SawtoothModulus(c=float(c), window=tuple(window))
    return NonlinearField("sawtooth_sine", n, (float(c),), mu=saw.scaled(math.sqrt(n)), r=saw)


def linear_field(kappa: float, n: int = 1, window=DEFAULT_WINDOW) -> NonlinearField:
    return NonlinearField("linear", n, (float(kappa),), mu=None,
                          r=ConstantModulus(value=abs(kappa), window=tuple(window)))


def radial_extend(f: NonlinearField, eps: float) -> NonlinearField:
    """Freeze ``f`` along rays outside the closed eps-ball; doubles the Lipschitz rate."""
    if not eps > 0:
        raise InvalidArgument(f"radius must be positive, got {eps}")
    if f.radius > 0:
        raise InvalidArgument("field is already radially extended")
    for t in (-1.0, 0.0, 1.0):
        if np.any(f(t, np.zeros(f.n)) != 0.0):
            raise InvalidArgument("radial extension needs f(t, 0) = 0")
    mu = f.mu if f.mu is not None else f.r.scaled(eps)
    return NonlinearField(f.kind, f.n, f.params, mu=mu, r=f.r.scaled(2.0), radius=float(eps))


# ---------------------------------------------------------------- Trajectory and integration

@dataclass(frozen=True, eq=False)
class Trajectory:
    """Accepted integrator nodes with cubic Hermite dense output."""
    times: np.ndarray
    states: np.ndarray
    derivatives: np.ndarray
    rtol: float = DEFAULT_TOL[0]
    atol: float = DEFAULT_TOL[1]

    def __call__(self, t):
        scalar = np.ndim(t) == 0
        q = np.atleast_1d(np.asarray(t, dtype=float))
        out = K.hermite_sample(self.times, self.states, self.derivatives, np.ascontiguousarray(q))
        return out[0] if scalar else out

    @property
    def span(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def __len__(self):
        return self.times.shape[0]


def _run(A, f, t0, x0, t_end, tol, max_steps, h_init, adaptive):
    ts, xs, fs, status, t_fail, _ = K.dopri5(float(t0), x0, float(t_end), float(tol[0]), float(tol[1]),
                                             float(h_init), int(max_steps), bool(adaptive),
                                             *A.kernel_args, *f.kernel_args)
    if status == K.STATUS_NONFINITE:
        raise NumericOverflow(f"non-finite state at t={t_fail:.6g}", time=t_fail)
    if status == K.STATUS_UNDERFLOW:
        raise IntegrationFailure(f"step size underflow at t={t_fail:.6g}", time=t_fail)
    if status == K.STATUS_MAX_STEPS:
        raise IntegrationFailure(f"step budget of {max_steps} exhausted at t={t_fail:.6g}", time=t_fail)
    return ts, xs, fs


def integrate(A: MatrixField, f: NonlinearField, t0: float, x0, span, tol=DEFAULT_TOL,
              max_steps: int = DEFAULT_MAX_STEPS, h_init: float = 0.0, adaptive: bool = True) -> Trajectory:
    """Solve x' = A(t)x + f(t,x), x(t0) = x0, over ``span`` (which must contain t0)."""
    a, b = map(float, span)
    if not a <= t0 <= b:
        raise InvalidArgument(f"span [{a}, {b}] does not contain t0={t0}")
    if not (tol[0] > 0 and tol[1] > 0):
        raise InvalidArgument("tolerances must be positive")
    if not adaptive and not h_init > 0:
        raise InvalidArgument("fixed-step integration needs h_init > 0")
    x0 = np.ascontiguousarray(np.atleast_1d(np.asarray(x0, dtype=float)))
    if x0.shape != (A.n,) or f.n != A.n:
        raise InvalidArgument(f"dimension mismatch: x0 {x0.shape}, A n={A.n}, f n={f.n}")
    parts_t, parts_x, parts_f = [], [], []
    if a < t0:
        ts, xs, fs = _run(A, f, t0, x0, a, tol, max_steps, h_init, adaptive)
        parts_t.append(ts[::-1])
        parts_x.append(xs[::-1])
        parts_f.append(fs[::-1])
    ts, xs, fs = _run(A, f, t0, x0, b, tol, max_steps, h_init, adaptive)
    if parts_t:
        ts, xs, fs = ts[1:], xs[1:], fs[1:]
    parts_t.append(ts)
    parts_x.append(xs)
    parts_f.append(fs)
    return Trajectory(np.ascontiguousarray(np.concatenate(parts_t)),
                      np.ascontiguousarray(np.concatenate(parts_x)),
                      np.ascontiguousarray(np.concatenate(parts_f)), float(tol[0]), float(tol[1]))


def evolution_operator(A: MatrixField, t: float, s: float, tol=(1e-12, 1e-13)) -> np.ndarray:
    """U(t, s): maps the linear state at time s to time t."""
    if t == s:
        return np.eye(A.n)
    if A.is_constant:
        return expm(A.a_const * (t - s))
    if A.is_diagonal:
        return np.diag(np.exp(A.diag_integral(t, s)))
    zero = zero_field(A.n)
    cols = []
    for j in range(A.n):
        e = np.zeros(A.n)
        e[j] = 1.0
        ts, xs, _ = _run(A, zero, s, e, t, tol, DEFAULT_MAX_STEPS, 0.0, True)
        cols.append(xs[-1])
    return np.column_stack(cols)
