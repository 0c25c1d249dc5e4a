"""Command-line front end.

    conjlab <hypotheses|verify|regularity|gronwall|example> --config PATH [--out DIR] [--seed N]

Exit codes: 0 pass, 1 verification violation, 2 config error, 3 hypothesis failure.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from dataclasses import replace
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import __version__, _backend
from . import examples as ex
from . import gronwall as gw
from .conjugacy import ConjugacyProblem, G_eval, H_eval, SampleSpec, verify_conjugacy
from .dichotomy import DichotomyData, estimate_dichotomy_constants
from .errors import (ConjlabError, ContractionViolated, HypothesisViolated, InvalidArgument)
from .flows import (MatrixField, linear_field, planar_sine_field, radial_extend,
                    sawtooth_sine_field, scalar_time_field, unit_ball_field, zero_field)
from .moduli import ConstantModulus, TabulatedModulus
from .regularity import Box, holder_estimate, lipschitz_estimate, theoretical_beta_lambda

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG, EXIT_HYPOTHESIS = 0, 1, 2, 3
COMMANDS = ("hypotheses", "verify", "regularity", "gronwall", "example")
U64_MAX = 2 ** 64 - 1


class ConfigError(Exception):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ---------------------------------------------------------------- config schema

class MatrixSpec(_Strict):
    kind: Literal["constant", "tabulated_diagonal", "sin_diagonal"] = "constant"
    matrix: Optional[list[list[float]]] = None
    times: Optional[list[float]] = None
    values: Optional[list[list[float]]] = None
    base: Optional[list[float]] = None
    amp: Optional[list[float]] = None
    freq: float = 1.0

    @model_validator(mode="after")
    def _fields_for_kind(self):
        need = {"constant": ("matrix",), "tabulated_diagonal": ("times", "values"),
                "sin_diagonal": ("base", "amp")}[self.kind]
        missing = [k for k in need if getattr(self, k) is None]
        if missing:
            raise ValueError(f"matrix kind {self.kind!r} needs {missing}")
        return self


FIELD_PARAMS = {
    "zero": {"n": 2},
    "planar_sine": {"sigma": 0.1},
    "unit_ball": {"eps": 0.25},
    "scalar_time": {"eps": 0.1, "delta": 0.5},
    "sawtooth_sine": {"c": 1.0, "n": 2},
    "linear": {"kappa": 0.1, "n": 1},
}

EXAMPLE_PARAMS = {
    "planar": {"sigma": 0.1, "alpha1": 0.5},
    "unit_ball": {"eps": 0.25},
    "scalar_time": {"eps": 0.1, "delta": 0.5},
    "sawtooth": {"c": 1.0},
}


def _fill(defaults: dict, given: dict, what: str) -> dict:
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ValueError(f"unknown {what} parameters {unknown}; allowed {sorted(defaults)}")
    return {**defaults, **given}


class FieldSpec(_Strict):
    kind: Literal["zero", "planar_sine", "unit_ball", "scalar_time", "sawtooth_sine", "linear"]
    params: dict[str, float] = Field(default_factory=dict)
    radial_extension: Optional[float] = None

    @model_validator(mode="after")
    def _materialize(self):
        self.params = _fill(FIELD_PARAMS[self.kind], self.params, f"field {self.kind!r}")
        return self


class SystemSpec(_Strict):
    example: Optional[Literal["planar", "unit_ball", "scalar_time", "sawtooth"]] = None
    params: dict[str, float] = Field(default_factory=dict)
    A: Optional[MatrixSpec] = None
    f: Optional[FieldSpec] = None

    @model_validator(mode="after")
    def _one_form(self):
        if self.example is not None:
            if self.A is not None or self.f is not None:
                raise ValueError("give either a builtin example or explicit A and f, not both")
            self.params = _fill(EXAMPLE_PARAMS[self.example], self.params, f"example {self.example!r}")
        else:
            if self.A is None or self.f is None:
                raise ValueError("explicit systems need both A and f")
            if self.params:
                raise ValueError("params belong to a builtin example")
        return self


class DichotomySpec(_Strict):
    t0: float = 0.0
    P0: list[list[float]]
    K: Optional[float] = None
    alpha: Optional[float] = None
    alpha1: Optional[float] = None
    estimate: bool = False
    estimate_times: list[float] = Field(default_factory=lambda: np.linspace(-3.0, 3.0, 13).tolist())

    @model_validator(mode="after")
    def _constants_or_estimate(self):
        if not self.estimate and (self.K is None or self.alpha is None):
            raise ValueError("give K and alpha, or set estimate to true")
        return self


class Tolerances(_Strict):
    ode_rtol: float = 1e-9
    ode_atol: float = 1e-9
    picard: float = 1e-6
    tail: float = 1e-4
    slack: float = 1e-3


class Grids(_Strict):
    step: float = 1e-3
    window: tuple[float, float] = (-20.0, 20.0)
    hyp_points: int = 401
    horizon: Optional[float] = None
    max_iter: int = 200


class VerifyOptions(_Strict):
    n_points: int = 100
    t_range: tuple[float, float] = (-2.0, 2.0)
    radius: float = 2.0
    n_trajectories: int = 20
    horizon: float = 3.0
    composition_budget: float = 5e-3
    mapping_budget: float = 5e-3


class RegularityOptions(_Strict):
    target: Literal["H1", "G1", "H", "G", "constant"] = "G1"
    t: float = 0.0
    lo: Optional[list[float]] = None
    hi: Optional[list[float]] = None
    scales: list[float] = Field(default_factory=lambda: np.geomspace(1e-6, 1e-1, 11).tolist())
    pairs_per_scale: int = 200
    mode: Literal["mixed", "origin"] = "origin"
    expect_lipschitz_max: Optional[float] = None
    expect_exponent: Optional[float] = None
    exponent_tol: float = 0.02


class BSpec(_Strict):
    kind: Literal["constant", "tabulated"] = "constant"
    value: Optional[float] = None
    times: Optional[list[float]] = None
    values: Optional[list[float]] = None


class InstanceSpec(_Strict):
    t0: float = 0.0
    s: float
    c: float
    c1: float
    c2: float
    alpha: float
    alpha1: float
    b: BSpec
    n_grid: int = gw.DEFAULT_GRID


class GronwallOptions(_Strict):
    suite: Literal["random", "custom"] = "random"
    count: int = 50
    theta_max: float = 0.9
    n_grid: int = gw.DEFAULT_GRID
    instances: list[InstanceSpec] = Field(default_factory=list)
    slack: float = 1e-6
    tol: float = 1e-12
    scaling_factor: float = 3.0


class Output(_Strict):
    csv: bool = True


class RunConfig(_Strict):
    system: Optional[SystemSpec] = None
    dichotomy: Optional[DichotomySpec] = None
    tolerances: Tolerances = Field(default_factory=Tolerances)
    grids: Grids = Field(default_factory=Grids)
    verify: VerifyOptions = Field(default_factory=VerifyOptions)
    regularity: RegularityOptions = Field(default_factory=RegularityOptions)
    gronwall: GronwallOptions = Field(default_factory=GronwallOptions)
    output: Output = Field(default_factory=Output)
    seed: int = Field(default=0, ge=0, le=U64_MAX)


def load_config(path: str, seed: Optional[int] = None) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if seed is not None:
        raw["seed"] = seed
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------- system assembly

def _matrix(spec: MatrixSpec) -> MatrixField:
    if spec.kind == "constant":
        return MatrixField.constant(np.array(spec.matrix, dtype=float))
    if spec.kind == "tabulated_diagonal":
        return MatrixField.tabulated_diagonal(spec.times, np.array(spec.values, dtype=float))
    return MatrixField.sin_diagonal(spec.base, spec.amp, spec.freq)


def _field(spec: FieldSpec, window):
    p = spec.params
    if spec.kind == "zero":
        f = zero_field(int(p["n"]), window)
    elif spec.kind == "planar_sine":
        f = planar_sine_field(p["sigma"], window)
    elif spec.kind == "unit_ball":
        f = unit_ball_field(p["eps"], window)
    elif spec.kind == "scalar_time":
        f = scalar_time_field(p["eps"], p["delta"], window)
    elif spec.kind == "sawtooth_sine":
        f = sawtooth_sine_field(p["c"], int(p["n"]), window)
    else:
        f = linear_field(p["kappa"], int(p["n"]), window)
    if spec.radial_extension is not None:
        f = radial_extend(f, spec.radial_extension)
    return f


def _example_system(name: str, p: dict, window):
    """(A, f, D) for a builtin; the planar one is built without its smallness guard."""
    if name == "planar":
        if not p["sigma"] > 0:
            raise InvalidArgument(f"sigma must be positive, got {p['sigma']}")
        A = MatrixField.constant(np.diag([-1.0, 1.0]))
        D = DichotomyData(0.0, np.diag([1.0, 0.0]), 1.0, 1.0, p["alpha1"])
        return A, planar_sine_field(p["sigma"], window), D
    if name == "unit_ball":
        A, f, D, _ = ex.unit_ball_example(p["eps"])
        return A, f, D
    if name == "scalar_time":
        A, f, D, _ = ex.scalar_time_example(p["eps"], p["delta"])
        return A, f, D
    return ex.sawtooth_example(p["c"], window)


def build_system(cfg: RunConfig):
    """(A, f, D, dichotomy info); D comes from the config when a dichotomy block is given."""
    if cfg.system is None:
        raise ConfigError("missing 'system' block")
    window = tuple(cfg.grids.window)
    if cfg.system.example is not None:
        A, f, D = _example_system(cfg.system.example, cfg.system.params, window)
    else:
        A, f, D = _matrix(cfg.system.A), _field(cfg.system.f, window), None
    if cfg.dichotomy is None:
        raise ConfigError("missing 'dichotomy' block")
    d = cfg.dichotomy
    P0 = np.array(d.P0, dtype=float)
    info = {"source": "config"}
    K, alpha = d.K, d.alpha
    if d.estimate:
        est = estimate_dichotomy_constants(A, P0, d.t0, d.estimate_times)
        K, alpha = est.K, est.alpha
        info = {"source": "estimated", **est.to_json()}
    D = DichotomyData(d.t0, P0, K, alpha, d.alpha1)
    return A, f, D, info


def build_problem(cfg: RunConfig):
    A, f, D, info = build_system(cfg)
    tol, g = cfg.tolerances, cfg.grids
    problem = ConjugacyProblem(A, f, D, horizon=g.horizon, tail_tol=tol.tail, step=g.step,
                               picard_tol=tol.picard, ode_tol=(tol.ode_rtol, tol.ode_atol),
                               max_iter=g.max_iter, window=tuple(g.window), hyp_points=g.hyp_points)
    return problem, info


# ---------------------------------------------------------------- subcommands
# each returns (exit code, result dict, {csv name: text})

def cmd_hypotheses(cfg: RunConfig):
    problem, info = build_problem(cfg)
    rep = problem.hypotheses()
    result = {"problem": problem.to_json(), "dichotomy_source": info, "hypotheses": rep.to_json()}
    return (EXIT_OK if rep.all_ok else EXIT_HYPOTHESIS), result, {}


def cmd_verify(cfg: RunConfig):
    problem, info = build_problem(cfg)
    hyp = problem.hypotheses()
    result = {"problem": problem.to_json(), "dichotomy_source": info, "hypotheses": hyp.to_json()}
    if not hyp.theta_ok:
        return EXIT_HYPOTHESIS, result, {}
    v = cfg.verify
    spec = SampleSpec(v.n_points, tuple(v.t_range), v.radius, v.n_trajectories, v.horizon,
                      cfg.seed, v.composition_budget, v.mapping_budget, cfg.tolerances.slack)
    rep = verify_conjugacy(problem, spec)
    result["verification"] = rep.to_json()
    return (EXIT_OK if rep.passed else EXIT_VIOLATION), result, {"map_samples.csv": rep.samples_csv()}


def _regularity_target(cfg: RunConfig, opts: RegularityOptions):
    """(map, domain, problem or None, default expectations)."""
    if opts.target in ("H1", "G1"):
        if cfg.system is not None and cfg.system.example not in (None, "unit_ball"):
            raise ConfigError("targets H1 and G1 belong to the unit_ball example")
        eps = cfg.system.params["eps"] if cfg.system is not None and cfg.system.example else 0.25
        ex._check_eps(eps)
        if opts.target == "H1":
            half = 1.0
            expect = {"lipschitz_max": 1.0 + 1e-3, "exponent": 1.0}
            fn = lambda x: ex.h1(x, eps)
        else:
            half = 1.0 - eps
            expect = {"exponent": 1.0 - eps}
            fn = lambda x: ex.g1(x, eps)
        lo = opts.lo or [-half]
        hi = opts.hi or [half]
        return (lambda x: np.atleast_1d(fn(np.asarray(x, float)))), Box(lo, hi), None, expect
    if opts.target == "constant":
        lo, hi = opts.lo or [-1.0], opts.hi or [1.0]
        return (lambda x: np.zeros(1)), Box(lo, hi), None, {}
    problem, _ = build_problem(cfg)
    n = problem.n
    lo, hi = opts.lo or [-1.0] * n, opts.hi or [1.0] * n
    ev = H_eval if opts.target == "H" else G_eval
    return (lambda x: ev(problem, opts.t, x)), Box(lo, hi), problem, {}


def cmd_regularity(cfg: RunConfig):
    opts = cfg.regularity
    F, box, problem, expect = _regularity_target(cfg, opts)
    if opts.expect_lipschitz_max is not None:
        expect["lipschitz_max"] = opts.expect_lipschitz_max
    if opts.expect_exponent is not None:
        expect["exponent"] = opts.expect_exponent
    anchor = np.zeros(box.n) if opts.mode == "origin" else None
    lip = lipschitz_estimate(F, box, opts.scales, opts.pairs_per_scale, opts.mode, cfg.seed, anchor)
    hol = holder_estimate(F, box, opts.scales, opts.pairs_per_scale, opts.mode, cfg.seed, anchor)
    result = {"target": opts.target, "domain": {"lo": list(box.lo), "hi": list(box.hi)},
              "lipschitz": lip.to_json(), "holder": hol.to_json(), "expectations": expect,
              "warnings": []}
    if hol.flat or lip.flat:
        result["warnings"].append("flat map: increments vanish, no exponent fitted")
    checks = {}
    if "lipschitz_max" in expect and not lip.flat:
        checks["lipschitz"] = lip.constant <= expect["lipschitz_max"]
    if "exponent" in expect and not hol.flat:
        checks["exponent"] = abs(hol.exponent - expect["exponent"]) <= opts.exponent_tol
    result["checks"] = checks
    if problem is not None:
        hyp = problem.hypotheses()
        f = problem.f
        C_mu = f.mu.window_sup if f.mu is not None else math.inf
        if math.isfinite(C_mu):
            tc = theoretical_beta_lambda(problem.D.K, problem.D.alpha, problem.A.bound_M,
                                         C_mu, f.r.window_sup, hyp.theta_tilde)
            result["theoretical"] = tc.to_json()
    csvs = {"lipschitz_scales.csv": lip.to_csv(), "holder_scales.csv": hol.to_csv()}
    code = EXIT_OK if all(checks.values()) else EXIT_VIOLATION
    return code, result, csvs


def _instance(spec: InstanceSpec) -> gw.IneqInstance:
    b = spec.b
    if b.kind == "constant":
        if b.value is None:
            raise ConfigError("constant b needs 'value'")
        mod = ConstantModulus(value=b.value)
    else:
        if b.times is None or b.values is None:
            raise ConfigError("tabulated b needs 'times' and 'values'")
        mod = TabulatedModulus(times=tuple(b.times), values=tuple(b.values))
    return gw.IneqInstance(spec.t0, spec.s, spec.c, spec.c1, spec.c2, spec.alpha, spec.alpha1,
                           mod, n_grid=spec.n_grid)


def _certify_instance(inst, opts: GronwallOptions) -> dict:
    th = gw.theta1(inst)
    row = {"instance": inst.to_json(), "theta1": th}
    if th >= 1.0:
        row["status"] = "contraction-violated"
        return row
    certs = {}
    for which in (gw.FIRST, gw.SECOND):
        one = replace(inst, which=which)
        wc = gw.worst_case_u(one, opts.tol, theta=th)
        check = gw.check_first_inequality if which == gw.FIRST else gw.check_second_inequality
        cert = check(one.with_u(wc.times, wc.values), opts.slack, th)
        certs[which] = {**cert.to_json(), "iterations": wc.iterations}
        if which == gw.FIRST:
            scaled = replace(one, c=one.c * opts.scaling_factor)
            ws = gw.worst_case_u(scaled, opts.tol, theta=th)
            denom = max(float(np.max(np.abs(wc.values))), 1e-300)
            row["scaling_error"] = float(np.max(np.abs(ws.values - opts.scaling_factor * wc.values))) / (
                opts.scaling_factor * denom)
    row["certificates"] = certs
    row["status"] = "pass" if all(c["status"] == gw.PASS for c in certs.values()) else "lemma-violated"
    return row


def cmd_gronwall(cfg: RunConfig):
    opts = cfg.gronwall
    if opts.suite == "random":
        insts = gw.random_instances(cfg.seed, opts.count, opts.theta_max, opts.n_grid)
    else:
        if not opts.instances:
            raise ConfigError("custom suite needs at least one instance")
        insts = [_instance(s) for s in opts.instances]
    rows = _backend.parallel_map(lambda inst: _certify_instance(inst, opts), insts)
    statuses = [r["status"] for r in rows]
    scaling = [r["scaling_error"] for r in rows if "scaling_error" in r]
    result = {"suite": opts.suite, "count": len(rows), "instances": rows,
              "summary": {s: statuses.count(s) for s in sorted(set(statuses))},
              "max_scaling_error": max(scaling, default=0.0)}
    if "contraction-violated" in statuses:
        code = EXIT_HYPOTHESIS
    elif "lemma-violated" in statuses or result["max_scaling_error"] > 1e-10:
        code = EXIT_VIOLATION
    else:
        code = EXIT_OK
    return code, result, {}


def cmd_example(cfg: RunConfig):
    if cfg.system is None or cfg.system.example is None:
        raise ConfigError("the example command needs system.example")
    name, p = cfg.system.example, cfg.system.params
    if name == "unit_ball":
        checks = ex.unit_ball_selftest(p["eps"])
    elif name == "scalar_time":
        checks = ex.scalar_time_selftest(p["eps"], p["delta"], cfg.seed)
    elif name == "sawtooth":
        checks = ex.sawtooth_selftest(p["c"])
    else:
        A, f, D = _example_system("planar", p, tuple(cfg.grids.window))
        rng = np.random.default_rng(cfg.seed)
        x, y = rng.normal(size=(2, 500, 2)) * 3.0
        ratio = np.linalg.norm(f.many(np.zeros(500), x) - f.many(np.zeros(500), y), axis=1) \
            / np.linalg.norm(x - y, axis=1)
        bound = float(np.max(np.linalg.norm(f.many(np.zeros(500), x), axis=1)))
        checks = {"lipschitz_ratio": float(ratio.max()), "sigma": p["sigma"],
                  "max_norm": bound, "mu": f.mu.sup_value, "theta_shortcut": 2.0 * p["sigma"]}
        checks["passed"] = bool(checks["lipschitz_ratio"] <= p["sigma"] * (1 + 1e-12)
                                and bound <= f.mu.sup_value)
    return (EXIT_OK if checks["passed"] else EXIT_VIOLATION), {"example": name, "checks": checks}, {}


HANDLERS = {"hypotheses": cmd_hypotheses, "verify": cmd_verify, "regularity": cmd_regularity,
            "gronwall": cmd_gronwall, "example": cmd_example}


# ---------------------------------------------------------------- output

def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays unwrapped, non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run(command: str, config_path: str, out: Optional[str] = None, seed: Optional[int] = None):
    """Execute one subcommand; returns (exit code, report dict)."""
    report = {"command": command, "version": __version__, "backend": _backend.BACKEND}
    csvs = {}
    cfg = None
    try:
        cfg = load_config(config_path, seed)
        report["config"] = cfg.model_dump(mode="json")
        report["seed"] = cfg.seed
        code, result, csvs = HANDLERS[command](cfg)
        report["result"] = result
    except ConfigError as exc:
        code, report["error"] = EXIT_CONFIG, {"type": "config", "message": str(exc)}
    except InvalidArgument as exc:
        code, report["error"] = EXIT_CONFIG, {"type": "invalid-argument", "message": str(exc)}
    except (HypothesisViolated, ContractionViolated) as exc:
        code, report["error"] = EXIT_HYPOTHESIS, {"type": "hypothesis", "message": str(exc)}
    except ConjlabError as exc:
        code, report["error"] = EXIT_VIOLATION, {"type": type(exc).__name__, "message": str(exc)}
    report["exit_code"] = code
    report["status"] = {0: "pass", 1: "violation", 2: "config-error", 3: "hypothesis-failure"}[code]
    report = _clean(report)
    if out is not None:
        atomic_write(os.path.join(out, "report.json"), json.dumps(report, indent=2, sort_keys=True) + "\n")
        if cfg is not None and cfg.output.csv:
            for name, text in csvs.items():
                if text:
                    atomic_write(os.path.join(out, name), text)
    return code, report


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}")
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def main(argv=None) -> int:
    ap = _Parser(prog="conjlab", description="Numerical conjugacy checks for dichotomic systems.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True)
    ap.add_argument("--out", default=None, help="directory for report.json and CSV files")
    ap.add_argument("--seed", type=_seed, default=None, help="overrides the config seed")
    args = ap.parse_args(argv)
    code, report = run(args.command, args.config, args.out, args.seed)
    if "error" in report:
        print(f"conjlab {args.command}: {report['error']['message']}", file=sys.stderr)
    print(f"conjlab {args.command}: {report['status']} (exit {code})")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
