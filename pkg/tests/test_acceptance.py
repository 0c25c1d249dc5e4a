"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""
import math
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from conjlab import gronwall as gw
from conjlab import regularity as rg
from conjlab.conjugacy import ConjugacyProblem, SampleSpec, decay_check, solve_g, verify_conjugacy
from conjlab.dichotomy import coppel_bound, l_alpha, sup_l_alpha
from conjlab.examples import (g1, h1, one_sided_derivatives, planar_example, sawtooth_modulus,
                              scalar_time_example, scalar_time_field, trajectory_oracles)
from conjlab.moduli import ConstantModulus, TabulatedModulus

EPS = 0.25
SCALES = np.geomspace(1e-6, 1e-1, 11)


@pytest.fixture
def verdict(capsys, request):
    def emit(checks):
        ok = all(v for _, v, _ in checks)
        detail = "; ".join(f"{name}={val}" for name, _, val in checks)
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {request.node.name}: {detail}")
        failed = [name for name, v, _ in checks if not v]
        assert not failed, failed
    return emit


def fmt(x):
    return f"{x:.3g}"


def test_criterion_1_closed_form_oracles(verdict):
    xs = np.linspace(-1.0, 1.0, 2001)
    inv = float(np.max(np.abs(g1(h1(xs, EPS), EPS) - xs)))
    right, left = one_sided_derivatives(EPS)
    ts = np.linspace(0.0, 10.0, 1001)
    orc = trajectory_oracles(EPS)
    pushed = float(np.max(np.abs(h1(orc.positive(ts), EPS) - 0.75 * np.exp(-ts))))
    verdict([
        ("G1(H1(x))-x", inv <= 1e-10, fmt(inv)),
        ("H1(1)", h1(1.0, EPS) == 0.75, h1(1.0, EPS)),
        ("right_derivative", abs(right) <= 1e-3, fmt(right)),
        ("left_derivative", abs(left - 0.75 ** 1.5) <= 1e-3, fmt(left)),
        ("pushed_trajectory", pushed <= 1e-10, fmt(pushed)),
    ])


def test_criterion_2_regularity_anchors(verdict):
    H = lambda x: np.atleast_1d(h1(x, EPS))
    G = lambda y: np.atleast_1d(g1(y, EPS))
    box = rg.Box((-1.0,), (1.0,))
    lip = rg.lipschitz_estimate(H, box, SCALES, 200, mode="mixed", seed=0)
    lip0 = rg.lipschitz_estimate(H, box, SCALES, 200, mode="origin", seed=0)
    Lmax = max(lip.constant, lip0.constant)
    gh = rg.holder_estimate(G, rg.Box((-0.75,), (0.75,)), SCALES, 200, mode="origin", seed=0)
    hh = rg.holder_estimate(H, box, SCALES, 200, mode="origin", seed=0)
    verdict([
        ("lipschitz_H1", Lmax <= 1 + 1e-3, fmt(Lmax)),
        ("exponent_G1", abs(gh.exponent - 0.75) <= 0.02, fmt(gh.exponent)),
        ("exponent_H1", abs(hh.exponent - 1.0) <= 0.02, fmt(hh.exponent)),
    ])


def test_criterion_3_scalar_time_anchors(verdict):
    delta = 0.5
    *_, orc = scalar_time_example(0.1, delta)
    ts = np.linspace(-5.0, 5.0, 2001)
    resid = orc.pushed_residual(ts)
    rng = np.random.default_rng(3)
    k = 20000
    x1 = rng.choice((-1.0, 1.0), k) * (delta + rng.exponential(0.5, k))
    x2 = rng.choice((-1.0, 1.0), k) * (delta + rng.exponential(0.5, k))
    x1[:100], x2[:100] = delta, -delta  # the extremal pair
    t = rng.uniform(-5.0, 5.0, k)
    keep = x1 != x2
    ratio = float(np.max(np.abs(orc.H(t, x1) - orc.H(t, x2))[keep] / np.abs(x1 - x2)[keep]))
    verdict([
        ("H(0,1)", orc.H(0.0, 1.0) == 0.5, orc.H(0.0, 1.0)),
        ("pushed_residual", resid <= 1e-10, fmt(resid)),
        ("lipschitz_ratio", ratio <= 1 / delta ** 2 + 1e-6, repr(ratio)),
    ])


@pytest.fixture(scope="module")
def planar_problem():
    return ConjugacyProblem(*planar_example(0.1, alpha1=0.5))


def test_criterion_4_planar_pipeline(verdict, planar_problem):
    p = planar_problem
    spec = SampleSpec(n_points=100, t_range=(-2.0, 2.0), radius=2.0, n_trajectories=20, horizon=3.0,
                      seed=2024, composition_budget=5e-3, mapping_budget=5e-3)
    rep = verify_conjugacy(p, spec)
    bound = 0.2 * math.sqrt(2.0) + 1e-3
    rng = np.random.default_rng(7)
    ratios = []
    for _ in range(20):
        t = float(rng.uniform(-2, 2))
        y = rng.uniform(-1.4, 1.4, 2)
        ratios.append(solve_g(p, t, t, y).max_ratio_after_first)
    rmax = max(ratios)
    verdict([
        ("theta", abs(p.hypotheses().theta - 0.2) < 1e-6, fmt(p.hypotheses().theta)),
        ("max|H-id|", rep.max_offset_H <= bound, fmt(rep.max_offset_H)),
        ("max|G-id|", rep.max_offset_G <= bound, fmt(rep.max_offset_G)),
        ("H(G(y))-y", rep.composition_HG <= 5e-3, fmt(rep.composition_HG)),
        ("G(H(x))-x", rep.composition_GH <= 5e-3, fmt(rep.composition_GH)),
        ("mapping_H", rep.mapping_H <= 5e-3, fmt(rep.mapping_H)),
        ("mapping_G", rep.mapping_G <= 5e-3, fmt(rep.mapping_G)),
        ("picard_ratio", rmax <= 0.25, fmt(rmax)),
    ])


def test_criterion_5_decay_estimates(verdict, planar_problem):
    p = planar_problem
    rng = np.random.default_rng(5)
    fwd, bwd = [], []
    for _ in range(20):
        t0 = float(rng.uniform(-2, 2))
        a, b = rng.uniform(-2, 2, 2)
        fwd.append(decay_check(p, t0, [a, 0.0], [b, 0.0], horizon=6.0, slack=1e-3).margin)
        bwd.append(decay_check(p, t0, [0.0, a], [0.0, b], horizon=6.0, slack=1e-3,
                               direction="backward").margin)
    verdict([
        ("theta_tilde", p.hypotheses().K_theta_tilde < 1, fmt(p.hypotheses().theta_tilde)),
        ("forward_min_margin", min(fwd) >= 0, fmt(min(fwd))),
        ("backward_min_margin", min(bwd) >= 0, fmt(min(bwd))),
    ])


def test_criterion_6_dichotomic_inequalities(verdict):
    worst = math.inf
    failures = 0
    scaling = 0.0
    fam = gw.random_instances(2024, count=50, theta_max=0.9)
    for inst in fam:
        th = gw.theta1(inst)
        for which, check in ((gw.FIRST, gw.check_first_inequality), (gw.SECOND, gw.check_second_inequality)):
            one = replace(inst, which=which)
            wc = gw.worst_case_u(one, theta=th)
            cert = check(one.with_u(wc.times, wc.values), slack=1e-6, theta=th)
            failures += cert.status != gw.PASS
            worst = min(worst, cert.bound_margin)
            big = gw.worst_case_u(replace(one, c=one.c * 3.0), theta=th)
            scaling = max(scaling, float(np.max(np.abs(big.values - 3.0 * wc.values))
                                         / np.max(np.abs(3.0 * wc.values))))
    thetas = [gw.theta1(i) for i in fam]
    verdict([
        ("count", len(fam) == 50, len(fam)),
        ("max_theta1", max(thetas) <= 0.9, fmt(max(thetas))),
        ("failed_certificates", failures == 0, failures),
        ("min_margin", worst >= 0, fmt(worst)),
        ("scaling_error", scaling <= 1e-10, fmt(scaling)),
    ])


def test_criterion_7_kernel_anchors(verdict):
    errs = []
    for b, alpha in ((0.3, 1.0), (1.7, 0.4), (0.05, 2.5)):
        T = 40.0 / alpha
        exact = 2 * b / alpha
        errs.append(abs(l_alpha(ConstantModulus(value=b), alpha, 0.7, T).value - exact))
        # same constant through the quadrature path
        tab = TabulatedModulus(times=(-100.0, 100.0), values=(b, b))
        errs.append(abs(l_alpha(tab, alpha, 0.7, T).value - exact))
    const_err = max(errs)

    moduli = {
        "constant": ConstantModulus(value=0.4),
        "tabulated": TabulatedModulus(times=(-5.0, 0.0, 2.0, 6.0), values=(0.0, 1.0, 0.2, 0.7)),
        "sawtooth": sawtooth_modulus(1.0),
        "scaled": sawtooth_modulus(0.5).scaled(3.0),
        "function": scalar_time_field(0.1, 0.5).r,
    }
    gaps = {}
    for name, b in moduli.items():
        for alpha in (0.5, 1.0, 2.0):
            gaps[f"{name}@{alpha}"] = coppel_bound(b, alpha) - sup_l_alpha(b, alpha).value
    worst_gap = min(gaps.values())

    saw = sawtooth_modulus(1.0, window=(-51.0, 51.0))
    _, windows = saw.window_integrals()
    peak = max(saw.peak(m) for m in range(1, 51))
    verdict([
        ("constant_L_alpha", const_err <= 1e-9, fmt(const_err)),
        ("coppel_min_gap", worst_gap >= 0, fmt(worst_gap)),
        ("sawtooth_window_max", float(windows.max()) <= 1.0, fmt(float(windows.max()))),
        ("sawtooth_peak", peak > 10.0, fmt(peak)),
    ])


def test_criterion_8_theoretical_constants(verdict):
    p = rg.theoretical_p(1.0, 0.25)
    p_exact = rg.theoretical_p(Fraction(1), Fraction(1, 4))
    infeasible = all(not rg.theoretical_beta_lambda(1.0, a, M, 1.0, 0.01).lambda_ok
                     for a, M in ((1.0, 1.0), (2.0, 1.0), (3.0, 0.5), (1.0, 0.99)))
    c = rg.theoretical_beta_lambda(1.0, 1.0, 2.0, 1.0, 0.01)
    lam_cond = c.lam > rg.lambda_lower_bound(1.0, 2.0)
    beta_cond = 0 < c.beta < 1.0 / (2.0 + 1.0)
    cval = rg.contraction_value(1.0, 1.0, 2.0, 0.01, c.beta)
    verdict([
        ("p(1,1/4)", p == 5 / 3 and p_exact == Fraction(5, 3), repr(p)),
        ("alpha>=M_flagged", infeasible, infeasible),
        ("lambda_condition", lam_cond and c.lambda_ok, fmt(c.lam)),
        ("beta_condition", beta_cond and c.beta_ok, fmt(c.beta)),
        ("contraction_condition", 0 < cval < 1 / 3 and c.contraction_ok, fmt(cval)),
    ])
