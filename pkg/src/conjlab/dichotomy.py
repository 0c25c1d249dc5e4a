"""Exponential dichotomies, the Green operator and the exponential-kernel transform."""
from __future__ import annotations

import math
import threading
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate as spi
from scipy.signal import lfilter

from . import _kernels as K_
from ._backend import parallel_map
from .errors import EstimationFailure, InvalidArgument, QuadratureFailure
from .flows import MatrixField, evolution_operator, opnorm
from .moduli import ConstantModulus, ReducedModulus, ScalarModulus

IDEMPOTENT_TOL = 1e-12
QUAD_EPSABS = 1e-13
QUAD_EPSREL = 1e-11
# relative rounding allowance when comparing a norm against its claimed bound
_ROUND = 1e-12


# ---------------------------------------------------------------- DichotomyData

@dataclass(frozen=True, eq=False)
class DichotomyData:
    t0: float
    P0: np.ndarray
    K: float
    alpha: float
    alpha1: Optional[float] = None

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P0, dtype=float))
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise InvalidArgument(f"projection must be square, got shape {P.shape}")
        if np.max(np.abs(P @ P - P), initial=0.0) > IDEMPOTENT_TOL * max(1.0, np.max(np.abs(P))):
            raise InvalidArgument("P0 is not idempotent (P0 @ P0 != P0)")
        if not (self.K > 0 and math.isfinite(self.K)):
            raise InvalidArgument(f"K must be positive, got {self.K}")
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise InvalidArgument(f"alpha must be positive, got {self.alpha}")
        a1 = 0.5 * self.alpha if self.alpha1 is None else float(self.alpha1)
        if not 0.0 < a1 < self.alpha:
            raise InvalidArgument(f"alpha1 must lie in (0, alpha={self.alpha}), got {a1}")
        object.__setattr__(self, "P0", P)
        object.__setattr__(self, "alpha1", a1)
        object.__setattr__(self, "t0", float(self.t0))

    @property
    def n(self) -> int:
        return self.P0.shape[0]

    @property
    def alpha2(self) -> float:
        return self.alpha - self.alpha1

    @property
    def rank(self) -> int:
        return int(round(np.trace(self.P0)))

    def to_json(self) -> dict:
        return {"t0": self.t0, "P0": self.P0.tolist(), "K": self.K, "alpha": self.alpha,
                "alpha1": self.alpha1, "alpha2": self.alpha2}


def project(D: DichotomyData, A: MatrixField, s: float) -> np.ndarray:
    """P(s) = U(s,t0) P0 U(t0,s)."""
    if s == D.t0:
        return D.P0.copy()
    if _projection_is_constant(D, A):
        return D.P0.copy()
    return evolution_operator(A, s, D.t0) @ D.P0 @ evolution_operator(A, D.t0, s)


def _projection_is_constant(D, A) -> bool:
    P = D.P0
    if A.is_diagonal and not np.any(P - np.diag(np.diag(P))):
        return True
    if A.is_constant:
        return np.max(np.abs(A.a_const @ P - P @ A.a_const)) <= 1e-14 * max(1.0, opnorm(A.a_const))
    return False


def projections_on(D: DichotomyData, A: MatrixField, nodes, phis=None, phinvs=None) -> np.ndarray:
    """P(s_k) on increasing nodes."""
    nodes = np.asarray(nodes, dtype=float)
    N, n = nodes.size, D.n
    if _projection_is_constant(D, A):
        return np.ascontiguousarray(np.broadcast_to(D.P0, (N, n, n)))
    if A.is_diagonal:
        # P(s)_ij = P0_ij exp(d_i(s) - d_j(s)) with d the diagonal antiderivative from t0
        d = A.diag_antiderivative(nodes) - A.diag_antiderivative([D.t0])
        return np.ascontiguousarray(D.P0[None] * np.exp(d[:, :, None] - d[:, None, :]))
    if phis is None:
        phis, phinvs = A.propagators(nodes)
    c = int(np.argmin(np.abs(nodes - D.t0)))
    out = np.empty((N, n, n))
    out[c] = project(D, A, float(nodes[c]))
    for k in range(c, N - 1):
        out[k + 1] = phis[k] @ out[k] @ phinvs[k]
    for k in range(c - 1, -1, -1):
        out[k] = phinvs[k] @ out[k + 1] @ phis[k]
    return out


# ---------------------------------------------------------------- verification and estimation

@dataclass
class DichotomyReport:
    n_pairs: int
    n_violations: int
    worst_ratio: float
    worst_pair: Optional[tuple]
    worst_branch: str
    slack: float
    violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.n_violations == 0

    def to_json(self) -> dict:
        return {"n_pairs": self.n_pairs, "n_violations": self.n_violations,
                "worst_ratio": self.worst_ratio,
                "worst_pair": None if self.worst_pair is None else list(self.worst_pair),
                "worst_branch": self.worst_branch, "slack": self.slack, "passed": self.passed}


def pair_grid(times) -> np.ndarray:
    """All ordered (t, s) pairs of a time list, diagonal included."""
    times = np.asarray(times, dtype=float)
    t, s = np.meshgrid(times, times, indexing="ij")
    return np.column_stack((t.ravel(), s.ravel()))


def _branch_norms(A, P0, t0, pairs):
    """Stable and unstable kernel norms per pair (nan where the branch does not apply)."""
    D = DichotomyData(t0, P0, 1.0, 1.0)
    proj = {}
    n = D.n
    eye = np.eye(n)
    stable = np.full(len(pairs), np.nan)
    unstable = np.full(len(pairs), np.nan)
    for i, (t, s) in enumerate(pairs):
        if s not in proj:
            proj[s] = project(D, A, s)
        U = evolution_operator(A, t, s)
        if t >= s:
            stable[i] = opnorm(U @ proj[s])
        if t <= s:
            unstable[i] = opnorm(U @ (eye - proj[s]))
    return stable, unstable


def verify_dichotomy(D: DichotomyData, A: MatrixField, pairs, slack: float = 0.0) -> DichotomyReport:
    """Check the two dichotomy estimates at each (t, s) pair."""
    pairs = [(float(t), float(s)) for t, s in np.asarray(pairs, dtype=float).reshape(-1, 2)]
    if not pairs:
        raise InvalidArgument("pair grid is empty")
    if slack < 0:
        raise InvalidArgument("slack must be nonnegative")
    stable, unstable = _branch_norms(A, D.P0, D.t0, pairs)
    dt = np.array([t - s for t, s in pairs])
    with np.errstate(over="ignore"):
        r_st = stable / (D.K * np.exp(-D.alpha * dt))
        r_un = unstable / (D.K * np.exp(D.alpha * dt))
    limit = (1.0 + slack) * (1.0 + _ROUND)
    worst, wpair, wbranch = 0.0, None, "none"
    violations = []
    for i, p in enumerate(pairs):
        for ratio, branch in ((r_st[i], "stable"), (r_un[i], "unstable")):
            if np.isnan(ratio):
                continue
            if ratio > worst:
                worst, wpair, wbranch = float(ratio), p, branch
            if ratio > limit:
                violations.append({"pair": list(p), "branch": branch, "ratio": float(ratio)})
    return DichotomyReport(len(pairs), len(violations), worst, wpair, wbranch, float(slack), violations)


@dataclass
class DichotomyEstimate:
    K: float
    alpha: float
    candidates: np.ndarray
    K_per_candidate: np.ndarray

    def to_json(self) -> dict:
        return {"K": self.K, "alpha": self.alpha}


def default_alpha_candidates() -> np.ndarray:
    return np.geomspace(1e-2, 1e2, 401)


def estimate_dichotomy_constants(A: MatrixField, P0, t0: float, grid,
                                 candidates: Optional[Sequence[float]] = None) -> DichotomyEstimate:
    """Smallest admissible K over candidate rates; ties go to the larger rate.

    ``grid`` is either a list of times (all ordered pairs are used) or an
    (m, 2) array of (t, s) pairs.
    """
    g = np.asarray(grid, dtype=float)
    pairs = g.reshape(-1, 2) if g.ndim == 2 else pair_grid(g)
    dt = pairs[:, 0] - pairs[:, 1]
    if not (np.any(dt > 0) and np.any(dt < 0)):
        raise InvalidArgument("grid must contain pairs with t > s and with t < s")
    cand = default_alpha_candidates() if candidates is None else np.asarray(candidates, dtype=float)
    if cand.size == 0 or np.any(cand <= 0):
        raise InvalidArgument("candidate rates must be positive")
    stable, unstable = _branch_norms(A, P0, t0, [tuple(p) for p in pairs])
    norms = np.concatenate((stable, unstable))
    gaps = np.concatenate((dt, -dt))
    keep = ~np.isnan(norms)
    norms, gaps = norms[keep], gaps[keep]
    with np.errstate(over="ignore", invalid="ignore"):
        Ks = np.array([np.max(norms * np.exp(a * gaps)) for a in cand])
    finite = np.isfinite(Ks)
    if not np.any(finite):
        raise EstimationFailure("no candidate rate admits a finite constant on this grid")
    best = np.min(Ks[finite])
    ties = finite & (Ks <= best * (1.0 + 1e-9))
    idx = int(np.flatnonzero(ties)[np.argmax(cand[ties])])
    return DichotomyEstimate(float(Ks[idx]), float(cand[idx]), cand, Ks)


# ---------------------------------------------------------------- L_alpha and the Coppel bound

@dataclass
class KernelIntegral:
    value: float
    error: float
    tail: float
    horizon: float

    @property
    def total_error(self) -> float:
        return self.error + self.tail


def default_horizon(b: ScalarModulus, alpha: float, tail_tol: float = 1e-10) -> float:
    """Horizon T with 2 C e^{-alpha T}/(1-e^{-alpha}) <= tail_tol."""
    C = b.window_sup
    if C <= 0:
        return 1.0 / alpha
    need = math.log(2.0 * C / ((1.0 - math.exp(-alpha)) * tail_tol)) / alpha
    return max(need, 1.0 / alpha)


def coppel_tail(b: ScalarModulus, alpha: float, T: float) -> float:
    return 2.0 * b.window_sup * math.exp(-alpha * T) / (1.0 - math.exp(-alpha))


def _quad_pieces(fn, knots):
    total, err = 0.0, 0.0
    for lo, hi in zip(knots[:-1], knots[1:]):
        if hi <= lo:
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            val, e, info = spi.quad(fn, lo, hi, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL,
                                    limit=200, full_output=1)[:3]
        if not np.isfinite(val) or (e > 1e-8 * max(1.0, abs(val))):
            raise QuadratureFailure(f"quadrature did not converge on [{lo:.6g}, {hi:.6g}] "
                                    f"(error estimate {e:.3g})")
        total += val
        err += e
    return total, err


def l_alpha(b: ScalarModulus, alpha: float, t: float, T: Optional[float] = None) -> KernelIntegral:
    """int_{t-T}^{t+T} e^{-alpha|t-s|} b(s) ds by adaptive quadrature, plus the tail bound."""
    if not alpha > 0:
        raise InvalidArgument(f"alpha must be positive, got {alpha}")
    T = default_horizon(b, alpha) if T is None else float(T)
    if not T > 0:
        raise InvalidArgument(f"horizon must be positive, got {T}")
    t = float(t)
    tail = coppel_tail(b, alpha, T)
    if isinstance(b, ConstantModulus):
        val = 2.0 * b.value * (1.0 - math.exp(-alpha * T)) / alpha
        return KernelIntegral(val, 0.0, tail, T)
    knots = np.union1d([t - T, t, t + T], b.breakpoints(t - T, t + T))
    val, err = _quad_pieces(lambda s: math.exp(-alpha * abs(t - s)) * float(b(s)), knots)
    return KernelIntegral(val, err, tail, T)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)


def exp_kernel_sweep(b: ScalarModulus, rate: float, nodes) -> tuple[np.ndarray, np.ndarray]:
    """One-sided kernel integrals of ``b`` on a uniform node set.

    F_k = int_{s_0}^{s_k} e^{-rate(s_k - x)} b(x) dx and
    B_k = int_{s_k}^{s_N} e^{-rate(x - s_k)} b(x) dx, with 10-point
    Gauss-Legendre on every piece between nodes and modulus breakpoints, then
    the exact exponential recursion across nodes.
    """
    nodes = np.asarray(nodes, dtype=float)
    h = np.diff(nodes)
    if not np.allclose(h, h[0], rtol=1e-9, atol=0.0):
        raise InvalidArgument("exp_kernel_sweep needs uniform nodes")
    knots = np.union1d(nodes, b.breakpoints(nodes[0], nodes[-1]))
    lo, hi = knots[:-1], knots[1:]
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    x = mid[:, None] + half[:, None] * _GL_X[None, :]
    wb = half[:, None] * _GL_W[None, :] * np.asarray(b(x.ravel()), dtype=float).reshape(x.shape)
    cell = np.clip(np.searchsorted(nodes, mid) - 1, 0, h.size - 1)
    right = nodes[cell + 1][:, None]
    left = nodes[cell][:, None]
    inc_f = np.bincount(cell, (wb * np.exp(-rate * (right - x))).sum(axis=1), minlength=h.size)
    inc_b = np.bincount(cell, (wb * np.exp(-rate * (x - left))).sum(axis=1), minlength=h.size)
    e = math.exp(-rate * h[0])
    F = np.concatenate(([0.0], lfilter([1.0], [1.0, -e], inc_f)))
    B = np.concatenate((lfilter([1.0], [1.0, -e], inc_b[::-1])[::-1], [0.0]))
    return F, B


@dataclass
class SupEstimate:
    value: float
    argmax: float
    grid: np.ndarray
    values: np.ndarray
    horizon: float
    tail: float

    def to_json(self) -> dict:
        g = self.grid
        return {"value": self.value, "argmax": self.argmax, "grid": [float(g[0]), float(g[-1]), int(g.size)],
                "horizon": self.horizon, "tail": self.tail}


def default_time_grid(b: ScalarModulus, points: int = 401) -> np.ndarray:
    a, c = b.window
    return np.linspace(a, c, points)


def sup_l_alpha(b: ScalarModulus, alpha: float, grid=None, T: Optional[float] = None) -> SupEstimate:
    """max of l_alpha over a time grid (the grid is returned for coverage judgement)."""
    grid = default_time_grid(b) if grid is None else np.atleast_1d(np.asarray(grid, dtype=float))
    T = default_horizon(b, alpha) if T is None else float(T)
    d = np.diff(grid)
    if grid.size > 8 and np.allclose(d, d[0], rtol=1e-9, atol=0.0) and not isinstance(b, ConstantModulus):
        # uniform grid: one sweep over [t_0 - T, t_N + T] on the same spacing, then cut
        # every point's integral back to its own window of m steps
        m = int(math.ceil(T / d[0] - 1e-9))
        T = m * d[0]
        ext = grid[0] + d[0] * np.arange(-m, grid.size + m)
        F, B = exp_kernel_sweep(b, alpha, ext)
        e = math.exp(-alpha * T)
        k = np.arange(m, m + grid.size)
        vals = F[k] - e * F[k - m] + B[k] - e * B[k + m]
    else:
        vals = np.array([r.value for r in parallel_map(lambda t: l_alpha(b, alpha, t, T), grid)])
    k = int(np.argmax(vals))
    return SupEstimate(float(vals[k]), float(grid[k]), grid, vals, T, coppel_tail(b, alpha, T))


def coppel_bound(b: ScalarModulus, alpha: float) -> float:
    """2 (1 - e^{-alpha})^{-1} C_b."""
    if not alpha > 0:
        raise InvalidArgument(f"alpha must be positive, got {alpha}")
    return 2.0 * b.window_sup / (1.0 - math.exp(-alpha))


def nonuniform_reduce(b: ScalarModulus, eps: float) -> ScalarModulus:
    """b(t) e^{-eps|t|}."""
    if not eps >= 0:
        raise InvalidArgument(f"eps must be nonnegative, got {eps}")
    if eps == 0 or (isinstance(b, ConstantModulus) and b.value == 0):
        return b
    return ReducedModulus(base=b, eps=float(eps), window=b.window, grid_step=b.grid_step)


def weighted_l_alpha(b_reduced: ReducedModulus, alpha: float, t: float, T: float) -> KernelIntegral:
    """int e^{-alpha|t-s| + eps|s|} b~(s) ds; equals l_alpha of the unreduced modulus."""
    eps = b_reduced.eps
    t = float(t)
    knots = np.union1d([t - T, t, t + T], b_reduced.breakpoints(t - T, t + T))
    val, err = _quad_pieces(
        lambda s: math.exp(-alpha * abs(t - s) + eps * abs(s)) * float(b_reduced(s)), knots)
    return KernelIntegral(val, err, coppel_tail(b_reduced.base, alpha, T), T)


# ---------------------------------------------------------------- Green kernel and operator

def green_horizon(K: float, alpha: float, sup_phi: float, tol: float) -> float:
    """T with K sup|phi| e^{-alpha T}/alpha <= tol."""
    if sup_phi <= 0:
        return 1.0 / alpha
    return max(math.log(K * sup_phi / (alpha * tol)) / alpha, 1.0 / alpha)


@dataclass(eq=False)
class GreenGrid:
    """Uniform node set carrying step propagators and projections for the Green recursion."""
    nodes: np.ndarray
    phis: np.ndarray
    phinvs: np.ndarray
    projs: np.ndarray
    center: int

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.nodes)

    def split(self, phi_vals):
        """(S, Q): stable integral from the left end, unstable integral to the right end."""
        return K_.green_recursion(np.ascontiguousarray(self.h), self.phis, self.phinvs, self.projs,
                                  np.ascontiguousarray(phi_vals, dtype=float))

    def apply(self, phi_vals) -> np.ndarray:
        S, Q = self.split(phi_vals)
        return S - Q

    def linear_states(self, y) -> np.ndarray:
        """U(s_k, s_center) y on every node."""
        return K_.propagate_from(self.phis, self.phinvs, self.center,
                                 np.ascontiguousarray(y, dtype=float))


def build_green_grid(D: DichotomyData, A: MatrixField, t: float, left: float, right: float,
                     step: float) -> GreenGrid:
    """Grid over [t - left, t + right] with ``t`` exactly on a node."""
    if not step > 0:
        raise InvalidArgument("grid step must be positive")
    nl = max(0, int(math.ceil(left / step - 1e-9)))
    nr = max(0, int(math.ceil(right / step - 1e-9)))
    if nl + nr < 1:
        raise InvalidArgument("grid must span at least one step")
    nodes = t + step * np.arange(-nl, nr + 1, dtype=float)
    nodes[nl] = t
    phis, phinvs = A.propagators(nodes)
    projs = projections_on(D, A, nodes, phis, phinvs)
    return GreenGrid(nodes, np.ascontiguousarray(phis), np.ascontiguousarray(phinvs),
                     np.ascontiguousarray(projs), nl)


class GreenKernel:
    """k(t,s) = U(t,s)P(s) for t >= s and -U(t,s)(I-P(s)) for t < s."""

    def __init__(self, D: DichotomyData, A: MatrixField, T: float = 20.0):
        if not T > 0:
            raise InvalidArgument("horizon must be positive")
        if D.n != A.n:
            raise InvalidArgument("dichotomy and coefficient dimensions differ")
        self.D = D
        self.A = A
        self.T = float(T)
        self._memo: dict = {}
        self._lock = threading.Lock()

    def tail_bound(self, sup_phi: float) -> float:
        return self.D.K * sup_phi * math.exp(-self.D.alpha * self.T) / self.D.alpha

    def __call__(self, t: float, s: float) -> np.ndarray:
        key = (round(float(t), 12), round(float(s), 12))
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        P = project(self.D, self.A, s)
        U = evolution_operator(self.A, t, s)
        val = U @ P if t >= s else -U @ (np.eye(self.D.n) - P)
        with self._lock:
            self._memo.setdefault(key, val)
        return val


@dataclass
class GreenValue:
    value: np.ndarray
    tail: float
    horizon: float
    step: float


def _sample(phi: Callable, ts: np.ndarray, n: int) -> np.ndarray:
    try:
        vals = np.asarray(phi(ts), dtype=float)
        if vals.shape == (ts.size, n):
            return vals
    except Exception:
        pass
    return np.array([np.asarray(phi(float(s)), dtype=float).reshape(n) for s in ts])


def green_apply(kernel: GreenKernel, phi: Callable, t: float, T: Optional[float] = None,
                step: float = 1e-3) -> GreenValue:
    """(K phi)(t) truncated to [t-T, t+T]; ``phi`` maps a time (or array of times) to vectors."""
    T = kernel.T if T is None else float(T)
    grid = build_green_grid(kernel.D, kernel.A, float(t), T, T, step)
    vals = _sample(phi, grid.nodes, kernel.D.n)
    out = grid.apply(vals)[grid.center]
    sup_phi = float(np.max(np.linalg.norm(vals, axis=1), initial=0.0))
    tail = kernel.D.K * sup_phi * math.exp(-kernel.D.alpha * T) / kernel.D.alpha
    return GreenValue(out, tail, T, step)
