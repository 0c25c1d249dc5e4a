"""Fixed-point construction and verification of the conjugacy H, G between the
perturbed system x' = A(t)x + f(t,x) and its linear part y' = A(t)y.

All Green-operator integrals run on a uniform node grid centred on the
evaluation time and truncated at a horizon T chosen from the tail bound
2 K sup|f| e^{-alpha T} / alpha.  Nonlinear trajectories come from the
adaptive integrator and are sampled on the grid by Hermite dense output.
"""
from __future__ import annotations

import csv
import io
import math
import threading
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._backend import parallel_map
from .dichotomy import (DichotomyData, GreenGrid, SupEstimate, build_green_grid, project,
                        sup_l_alpha)
from .errors import ConvergenceFailure, HypothesisViolated, InvalidArgument
from .flows import (DEFAULT_TOL, MatrixField, NonlinearField, Trajectory, evolution_operator,
                    integrate)
from .moduli import ConstantModulus

DEFAULT_TAIL_TOL = 1e-4
DEFAULT_STEP = 1e-3
DEFAULT_PICARD_TOL = 1e-6
DEFAULT_SLACK = 1e-3
DEFAULT_MAX_ITER = 200


@dataclass(frozen=True, eq=False)
class ConjugacyProblem:
    A: MatrixField
    f: NonlinearField
    D: DichotomyData
    horizon: Optional[float] = None
    tail_tol: float = DEFAULT_TAIL_TOL
    step: float = DEFAULT_STEP
    picard_tol: float = DEFAULT_PICARD_TOL
    ode_tol: tuple = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    window: tuple = (-20.0, 20.0)
    hyp_points: int = 401

    def __post_init__(self):
        if not (self.A.n == self.f.n == self.D.n):
            raise InvalidArgument(f"dimension mismatch: A {self.A.n}, f {self.f.n}, P0 {self.D.n}")
        if not (self.step > 0 and self.tail_tol > 0 and self.picard_tol > 0):
            raise InvalidArgument("step, tail_tol and picard_tol must be positive")
        if self.horizon is not None and not self.horizon > 0:
            raise InvalidArgument("horizon must be positive")
        if self.horizon is None and self.f.mu is None:
            raise InvalidArgument("field has no bound modulus; give the horizon explicitly")
        object.__setattr__(self, "_cache", {})
        object.__setattr__(self, "_lock", threading.Lock())

    @property
    def n(self) -> int:
        return self.A.n

    @property
    def mu_sup(self) -> float:
        return math.inf if self.f.mu is None else self.f.mu.sup_value

    @property
    def T(self) -> float:
        """Truncation horizon; tails of both half-line integrals together below tail_tol."""
        if self.horizon is not None:
            return float(self.horizon)
        D = self.D
        if self.mu_sup <= 0:
            return 1.0
        return max(math.log(2.0 * D.K * self.mu_sup / (D.alpha * self.tail_tol)) / D.alpha, 1.0)

    @property
    def tail_bound(self) -> float:
        if self.f.mu is None:
            return math.nan
        return 2.0 * self.D.K * self.mu_sup * math.exp(-self.D.alpha * self.T) / self.D.alpha

    def hypotheses(self) -> "HypothesisReport":
        with self._lock:
            rep = self._cache.get("hyp")
        if rep is None:
            rep = check_hypotheses(self)
            with self._lock:
                self._cache["hyp"] = rep
        return rep

    def grid(self, t: float) -> GreenGrid:
        key = ("grid", float(t))
        with self._lock:
            g = self._cache.get(key)
        if g is None:
            g = build_green_grid(self.D, self.A, float(t), self.T, self.T, self.step)
            with self._lock:
                self._cache[key] = g
        return g

    def to_json(self) -> dict:
        return {"A": self.A.to_json(), "f": self.f.to_json(), "dichotomy": self.D.to_json(),
                "horizon": self.T, "tail_tol": self.tail_tol, "tail_bound": self.tail_bound,
                "step": self.step, "picard_tol": self.picard_tol, "ode_tol": list(self.ode_tol),
                "max_iter": self.max_iter, "window": list(self.window)}


# ---------------------------------------------------------------- hypotheses

@dataclass
class HypothesisReport:
    sup_L_mu: float
    theta: float
    theta_tilde: float
    K: float
    alpha: float
    alpha1: float
    shortcut: Optional[float]
    grid: list

    @property
    def K_theta(self) -> float:
        return self.K * self.theta

    @property
    def K_theta_tilde(self) -> float:
        return self.K * self.theta_tilde

    @property
    def mu_ok(self) -> bool:
        return math.isfinite(self.sup_L_mu)

    @property
    def theta_ok(self) -> bool:
        return self.K_theta < 1.0

    @property
    def theta_tilde_ok(self) -> bool:
        return self.K_theta_tilde < 1.0

    @property
    def all_ok(self) -> bool:
        return self.mu_ok and self.theta_ok and self.theta_tilde_ok

    @property
    def offset_bound(self) -> float:
        """K sup L_alpha(mu): the uniform bound on |H - id| and |G - id|."""
        return self.K * self.sup_L_mu

    def to_json(self) -> dict:
        return {"sup_L_alpha_mu": self.sup_L_mu, "theta": self.theta, "theta_tilde": self.theta_tilde,
                "K_theta": self.K_theta, "K_theta_tilde": self.K_theta_tilde,
                "shortcut_2rK_over_alpha": self.shortcut, "offset_bound": self.offset_bound,
                "flags": {"sup_L_alpha_mu_finite": self.mu_ok, "K_theta_lt_1": self.theta_ok,
                          "K_theta_tilde_lt_1": self.theta_tilde_ok, "all": self.all_ok},
                "grid": self.grid}


def _sup(b, alpha, grid) -> SupEstimate:
    return sup_l_alpha(b, alpha, grid)


def check_hypotheses(problem: ConjugacyProblem) -> HypothesisReport:
    """sup L_alpha(mu), theta = sup L_alpha(r), theta~ = sup L_alpha1(r) on the window grid."""
    D, f = problem.D, problem.f
    grid = np.linspace(problem.window[0], problem.window[1], problem.hyp_points)
    mu = math.inf if f.mu is None else _sup(f.mu, D.alpha, grid).value
    theta = _sup(f.r, D.alpha, grid).value
    theta_t = _sup(f.r, D.alpha1, grid).value
    shortcut = None
    if problem.A.is_constant and isinstance(f.r, ConstantModulus):
        shortcut = 2.0 * f.r.value * D.K / D.alpha
    return HypothesisReport(mu, theta, theta_t, D.K, D.alpha, D.alpha1, shortcut,
                            [float(grid[0]), float(grid[-1]), int(grid.size)])


def _require_theta(problem: ConjugacyProblem):
    hyp = problem.hypotheses()
    if not hyp.theta_ok:
        raise HypothesisViolated(f"K*theta = {hyp.K_theta:.6g} >= 1")
    return hyp


def _require_theta_tilde(problem: ConjugacyProblem):
    hyp = problem.hypotheses()
    if not hyp.theta_tilde_ok:
        raise HypothesisViolated(f"K*theta~ = {hyp.K_theta_tilde:.6g} >= 1")
    return hyp


# ---------------------------------------------------------------- h and g

def _vec(x, n) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (n,):
        raise InvalidArgument(f"expected a vector of length {n}, got shape {x.shape}")
    return x


def nonlinear_on_grid(problem: ConjugacyProblem, grid: GreenGrid, tau: float, xi) -> np.ndarray:
    """X(s, tau, xi) sampled on the grid nodes."""
    a, b = float(grid.nodes[0]), float(grid.nodes[-1])
    traj = integrate(problem.A, problem.f, float(tau), xi, (min(a, tau), max(b, tau)), problem.ode_tol)
    return traj(grid.nodes)


def solve_h(problem: ConjugacyProblem, t: float, tau: float, xi) -> np.ndarray:
    """h(t,(tau,xi)) = -(Green operator applied to f(., X(., tau, xi)))(t)."""
    xi = _vec(xi, problem.n)
    if problem.f.is_zero:
        return np.zeros(problem.n)
    grid = problem.grid(t)
    X = nonlinear_on_grid(problem, grid, tau, xi)
    phi = problem.f.many(grid.nodes, X)
    return -grid.apply(phi)[grid.center]


@dataclass
class PicardResult:
    value: np.ndarray
    iterations: int
    changes: list
    ratios: list
    nodes: Optional[np.ndarray] = None
    path: Optional[np.ndarray] = None

    @property
    def max_ratio_after_first(self) -> float:
        r = [x for x in self.ratios[1:] if np.isfinite(x)]
        return max(r) if r else 0.0


def _ratios(changes):
    out = []
    for a, b in zip(changes[:-1], changes[1:]):
        out.append(b / a if a > 0 else 0.0)
    return out


def solve_g(problem: ConjugacyProblem, t: float, tau: float, xi, tol: Optional[float] = None,
            keep_path: bool = False) -> PicardResult:
    """g(t,(tau,xi)): Picard iteration Z <- Green(f(., Y + Z)) with Y(s) = U(s,tau) xi."""
    _require_theta(problem)
    xi = _vec(xi, problem.n)
    tol = problem.picard_tol if tol is None else float(tol)
    grid = problem.grid(t)
    y_t = evolution_operator(problem.A, float(t), float(tau)) @ xi
    Y = grid.linear_states(y_t)
    Z = np.zeros_like(Y)
    changes = []
    for it in range(1, problem.max_iter + 1):
        Znew = grid.apply(problem.f.many(grid.nodes, Y + Z))
        change = float(np.max(np.abs(Znew - Z)))
        changes.append(change)
        Z = Znew
        if change < tol:
            return PicardResult(Z[grid.center].copy(), it, changes, _ratios(changes),
                                grid.nodes if keep_path else None, Z if keep_path else None)
    raise ConvergenceFailure(f"g did not converge in {problem.max_iter} iterations "
                             f"(last change {changes[-1]:.3g})", changes[-1], problem.max_iter)


class MapEvaluator:
    """Memoised H (mode 'H') or G (mode 'G') evaluator; safe for concurrent reads."""

    def __init__(self, problem: ConjugacyProblem, mode: str):
        if mode not in ("H", "G"):
            raise InvalidArgument("mode must be 'H' or 'G'")
        if mode == "G":
            _require_theta(problem)
        self.problem = problem
        self.mode = mode
        self._memo: dict = {}
        self._lock = threading.Lock()
        self.last_picard: Optional[PicardResult] = None

    def offset(self, t: float, x) -> np.ndarray:
        x = _vec(x, self.problem.n)
        key = (float(t), x.tobytes())
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        if self.mode == "H":
            val = solve_h(self.problem, t, t, x)
        else:
            res = solve_g(self.problem, t, t, x)
            self.last_picard = res
            val = res.value
        with self._lock:
            self._memo.setdefault(key, val)
        return val

    def __call__(self, t: float, x) -> np.ndarray:
        x = _vec(x, self.problem.n)
        return x + self.offset(t, x)

    def __len__(self):
        return len(self._memo)


def _evaluator(problem: ConjugacyProblem, mode: str) -> MapEvaluator:
    key = ("eval", mode)
    with problem._lock:
        ev = problem._cache.get(key)
    if ev is None:
        ev = MapEvaluator(problem, mode)
        with problem._lock:
            ev = problem._cache.setdefault(key, ev)
    return ev


def H_eval(problem: ConjugacyProblem, t: float, x) -> np.ndarray:
    """H(t,x) = x + h(t,(t,x))."""
    return _evaluator(problem, "H")(t, x)


def G_eval(problem: ConjugacyProblem, t: float, y) -> np.ndarray:
    """G(t,y) = y + g(t,(t,y))."""
    return _evaluator(problem, "G")(t, y)


# ---------------------------------------------------------------- verification

@dataclass
class SampleSpec:
    n_points: int = 100
    t_range: tuple = (-2.0, 2.0)
    radius: float = 2.0
    n_trajectories: int = 20
    horizon: float = 3.0
    seed: int = 0
    composition_budget: float = 5e-3
    mapping_budget: float = 5e-3
    slack: float = DEFAULT_SLACK


def _ball_points(rng, count, n, radius):
    d = rng.normal(size=(count, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.uniform(size=count) ** (1.0 / n)
    return d * r[:, None]


@dataclass
class ConjugacyReport:
    hypotheses: dict
    composition_HG: float
    composition_GH: float
    mapping_H: float
    mapping_G: float
    offset_bound: float
    max_offset_H: float
    max_offset_G: float
    slack: float
    budgets: dict
    samples: list = field(default_factory=list)

    @property
    def margin_H(self) -> float:
        return self.offset_bound * (1.0 + self.slack) - self.max_offset_H

    @property
    def margin_G(self) -> float:
        return self.offset_bound * (1.0 + self.slack) - self.max_offset_G

    @property
    def passed(self) -> bool:
        return (self.composition_HG <= self.budgets["composition"]
                and self.composition_GH <= self.budgets["composition"]
                and self.mapping_H <= self.budgets["mapping"]
                and self.mapping_G <= self.budgets["mapping"]
                and self.margin_H >= 0 and self.margin_G >= 0)

    def to_json(self) -> dict:
        return {"hypotheses": self.hypotheses,
                "residuals": {"H_of_G_minus_id": self.composition_HG, "G_of_H_minus_id": self.composition_GH,
                              "solution_mapping_H": self.mapping_H, "solution_mapping_G": self.mapping_G},
                "bounds": {"offset_bound": self.offset_bound, "max_offset_H": self.max_offset_H,
                           "max_offset_G": self.max_offset_G, "margin_H": self.margin_H,
                           "margin_G": self.margin_G, "slack": self.slack},
                "budgets": self.budgets, "passed": self.passed, "n_samples": len(self.samples)}

    def samples_csv(self) -> str:
        """Rows (t, x..., H(t,x)...) for plotting."""
        if not self.samples:
            return ""
        n = len(self.samples[0][1])
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"H{i + 1}" for i in range(n)])
        for t, x, hx in self.samples:
            w.writerow([f"{v:.17g}" for v in (t, *x, *hx)])
        return buf.getvalue()


def verify_conjugacy(problem: ConjugacyProblem, spec: Optional[SampleSpec] = None) -> ConjugacyReport:
    """Composition residuals, solution-mapping residuals and offset-bound margins."""
    spec = SampleSpec() if spec is None else spec
    hyp = _require_theta(problem)
    n = problem.n
    rng = np.random.default_rng(spec.seed)
    ts = rng.uniform(*spec.t_range, size=spec.n_points)
    pts = _ball_points(rng, spec.n_points, n, spec.radius)
    Hm, Gm = _evaluator(problem, "H"), _evaluator(problem, "G")

    def compose(i):
        t, p = float(ts[i]), pts[i]
        hp, gp = Hm(t, p), Gm(t, p)
        return (np.linalg.norm(Hm(t, gp) - p), np.linalg.norm(Gm(t, hp) - p),
                np.linalg.norm(hp - p), np.linalg.norm(gp - p), (t, p.tolist(), hp.tolist()))

    comp = parallel_map(compose, range(spec.n_points))

    t0s = rng.uniform(*spec.t_range, size=spec.n_trajectories)
    x0s = _ball_points(rng, spec.n_trajectories, n, spec.radius)
    fracs = (1.0 / 3.0, 2.0 / 3.0, 1.0)

    def mapping(i):
        t0, x0 = float(t0s[i]), x0s[i]
        t1s = [t0 + spec.horizon * q for q in fracs]
        X = integrate(problem.A, problem.f, t0, x0, (t0, t1s[-1]), problem.ode_tol)
        h0, g0 = Hm(t0, x0), Gm(t0, x0)
        Xg = integrate(problem.A, problem.f, t0, g0, (t0, t1s[-1]), problem.ode_tol)
        worst_h = worst_g = 0.0
        for t1 in t1s:
            U = evolution_operator(problem.A, t1, t0)
            worst_h = max(worst_h, np.linalg.norm(Hm(t1, X(t1)) - U @ h0))
            worst_g = max(worst_g, np.linalg.norm(Gm(t1, U @ x0) - Xg(t1)))
        return worst_h, worst_g

    maps = parallel_map(mapping, range(spec.n_trajectories))

    def mx(seq):
        return float(max(seq, default=0.0))

    return ConjugacyReport(
        hypotheses=hyp.to_json(),
        composition_HG=mx(c[0] for c in comp), composition_GH=mx(c[1] for c in comp),
        mapping_H=mx(m[0] for m in maps), mapping_G=mx(m[1] for m in maps),
        offset_bound=hyp.offset_bound,
        max_offset_H=mx(c[2] for c in comp), max_offset_G=mx(c[3] for c in comp),
        slack=spec.slack,
        budgets={"composition": spec.composition_budget, "mapping": spec.mapping_budget},
        samples=[c[4] for c in comp])


# ---------------------------------------------------------------- bounded half-line solutions

def _trajectory_from_nodes(problem, nodes, states) -> Trajectory:
    derivs = np.array([problem.A(s) @ x for s, x in zip(nodes, states)]) + problem.f.many(nodes, states)
    return Trajectory(np.ascontiguousarray(nodes), np.ascontiguousarray(states),
                      np.ascontiguousarray(derivs), float(problem.ode_tol[0]), float(problem.ode_tol[1]))


@dataclass
class BoundedSolution:
    trajectory: Trajectory
    iterations: int
    changes: list
    t0: float

    @property
    def initial_state(self) -> np.ndarray:
        """The full state X(t0) (both projections)."""
        tr = self.trajectory
        return tr.states[0] if tr.times[0] == self.t0 else tr.states[-1]


def _bounded(problem, t0, xi, horizon, tol, forward):
    D = problem.D
    P = project(D, problem.A, t0)
    xi = _vec(xi, problem.n)
    target = P @ xi if forward else xi - P @ xi
    if np.linalg.norm(target - xi) > 1e-9 * max(1.0, np.linalg.norm(xi)):
        side = "P(t0)" if forward else "I - P(t0)"
        raise InvalidArgument(f"initial datum is not in the range of {side}")
    tol = problem.picard_tol if tol is None else float(tol)
    L = float(horizon)
    if forward:
        grid = build_green_grid(D, problem.A, t0, 0.0, L + problem.T, problem.step)
    else:
        grid = build_green_grid(D, problem.A, t0, L + problem.T, 0.0, problem.step)
    lin = grid.linear_states(xi)
    X = lin.copy()
    changes = []
    for it in range(1, problem.max_iter + 1):
        S, Q = grid.split(problem.f.many(grid.nodes, X))
        Xn = lin + S - Q
        change = float(np.max(np.abs(Xn - X)))
        changes.append(change)
        X = Xn
        if change < tol:
            break
    else:
        raise ConvergenceFailure(f"bounded solution did not converge in {problem.max_iter} iterations",
                                 changes[-1], problem.max_iter)
    m = int(round(L / problem.step))
    sl = slice(0, m + 1) if forward else slice(grid.center - m, grid.center + 1)
    traj = _trajectory_from_nodes(problem, grid.nodes[sl], X[sl])
    return BoundedSolution(traj, it, changes, float(t0))


def solve_bounded_forward(problem: ConjugacyProblem, t0: float, xi1, horizon: float = 8.0,
                          tol: Optional[float] = None) -> BoundedSolution:
    """Bounded solution on [t0, t0 + horizon] with P(t0)X(t0) = xi1."""
    _require_theta(problem)
    return _bounded(problem, float(t0), xi1, horizon, tol, True)


def solve_bounded_backward(problem: ConjugacyProblem, t0: float, xi2, horizon: float = 8.0,
                           tol: Optional[float] = None) -> BoundedSolution:
    """Bounded solution on [t0 - horizon, t0] with (I - P(t0))X(t0) = xi2."""
    _require_theta(problem)
    return _bounded(problem, float(t0), xi2, horizon, tol, False)


@dataclass
class DecayReport:
    direction: str
    margin: float
    worst_t: float
    constant: float
    distance: float
    slack: float

    @property
    def passed(self) -> bool:
        return self.margin >= 0.0

    def to_json(self) -> dict:
        return {"direction": self.direction, "margin": self.margin, "worst_t": self.worst_t,
                "constant": self.constant, "distance": self.distance, "slack": self.slack,
                "passed": self.passed}


def decay_check(problem: ConjugacyProblem, t0: float, xi, xi_bar, horizon: float = 6.0,
                slack: float = DEFAULT_SLACK, direction: str = "forward",
                tol: float = 1e-10) -> DecayReport:
    """|X(t) - Xbar(t)| <= K/(1 - K theta~) |xi - xi_bar| e^{-alpha2 |t - t0|} along both solutions."""
    hyp = _require_theta_tilde(problem)
    _require_theta(problem)
    forward = direction == "forward"
    if direction not in ("forward", "backward"):
        raise InvalidArgument("direction must be 'forward' or 'backward'")
    a = _bounded(problem, float(t0), xi, horizon, tol, forward).trajectory
    b = _bounded(problem, float(t0), xi_bar, horizon, tol, forward).trajectory
    diff = np.linalg.norm(a.states - b.states, axis=1)
    const = problem.D.K / (1.0 - hyp.K_theta_tilde)
    dist = float(np.linalg.norm(np.asarray(xi, float) - np.asarray(xi_bar, float)))
    bound = const * dist * np.exp(-problem.D.alpha2 * np.abs(a.times - t0))
    if dist == 0.0:
        margin = -float(np.max(diff))
        k = int(np.argmax(diff))
    else:
        rel = (bound * (1.0 + slack) - diff) / bound
        k = int(np.argmin(rel))
        margin = float(rel[k])
    return DecayReport(direction, margin, float(a.times[k]), const, dist, slack)


# ---------------------------------------------------------------- uniqueness probe

@dataclass
class ProbeReport:
    norms: list
    ratios: list
    final_norm: float
    iterations: int

    def to_json(self) -> dict:
        return {"norms": self.norms, "ratios": self.ratios, "final_norm": self.final_norm,
                "iterations": self.iterations}


def zero_uniqueness_probe(problem: ConjugacyProblem, reference, Z0, t: float = 0.0,
                          tol: float = 1e-10) -> ProbeReport:
    """Picard iteration of Z = Green(f(., x + Z) - f(., x)) from Z0; must collapse to 0.

    ``reference`` is a Trajectory (or any callable of an array of times) covering
    the grid around ``t``; ``Z0`` is a constant vector or an array over the grid.
    """
    _require_theta(problem)
    grid = problem.grid(t)
    x = np.asarray(reference(grid.nodes), dtype=float).reshape(grid.nodes.size, problem.n)
    Z = np.broadcast_to(np.asarray(Z0, dtype=float), x.shape).copy()
    fx = problem.f.many(grid.nodes, x)
    norms = [float(np.max(np.linalg.norm(Z, axis=1)))]
    for it in range(1, problem.max_iter + 1):
        if norms[-1] < tol:
            return ProbeReport(norms, _ratios(norms), norms[-1], it - 1)
        Z = grid.apply(problem.f.many(grid.nodes, x + Z) - fx)
        norms.append(float(np.max(np.linalg.norm(Z, axis=1))))
    if norms[-1] < tol:
        return ProbeReport(norms, _ratios(norms), norms[-1], problem.max_iter)
    raise ConvergenceFailure(f"perturbation did not collapse (last norm {norms[-1]:.3g})",
                             norms[-1], problem.max_iter)
