import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conjlab.errors import IntegrationFailure, InvalidArgument, NumericOverflow
from conjlab.flows import (MatrixField, evolution_operator, integrate, linear_field, opnorm,
                           planar_sine_field, radial_extend, sawtooth_sine_field, scalar_time_field,
                           unit_ball_field, zero_field)

DIAG = MatrixField.constant(np.diag([-1.0, 1.0]))


def tab_field():
    # linear interpolation error of the table is O(step^2); 1e-4 keeps it below 1e-9
    ts = np.linspace(-25.0, 25.0, 500001)
    return MatrixField.tabulated_diagonal(ts, np.column_stack([-1.0 - 0.1 * np.sin(ts), np.ones_like(ts)]))


def test_zero_system_is_constant():
    A = MatrixField.constant(np.zeros((2, 2)))
    tr = integrate(A, zero_field(2), 0.0, [1.5, -2.0], (-3.0, 4.0))
    assert np.allclose(tr.states, [1.5, -2.0], atol=0, rtol=0)
    assert np.allclose(tr(np.linspace(-3, 4, 17)), [1.5, -2.0])


def test_scalar_exponential_matches_closed_form():
    eps = 0.25
    A = MatrixField.constant([[-1.0 + eps]])
    tr = integrate(A, zero_field(1), 0.0, [1.0], (0.0, 5.0), tol=(1e-12, 1e-12))
    for t in (1.0, 2.0, 5.0):
        assert abs(tr(t)[0] - math.exp((-1.0 + eps) * t)) < 1e-9


def test_planar_stable_data_stays_bounded():
    tr = integrate(DIAG, planar_sine_field(0.1), 0.0, [0.5, 0.0], (0.0, 8.0))
    # a small unstable kick from f is expected; the growth must stay moderate over [0, 8]
    assert np.all(np.isfinite(tr.states))
    assert abs(tr(2.0)[0]) < 0.5


def test_trajectory_times_increase_and_nodes_reproduce():
    tr = integrate(DIAG, planar_sine_field(0.2), 0.3, [0.4, -0.1], (-2.0, 3.0))
    assert np.all(np.diff(tr.times) > 0)
    assert np.array_equal(tr(tr.times), tr.states)
    assert tr.span == (-2.0, 3.0)


def test_span_must_contain_t0():
    with pytest.raises(InvalidArgument):
        integrate(DIAG, zero_field(2), 5.0, [1.0, 0.0], (0.0, 1.0))
    with pytest.raises(InvalidArgument):
        integrate(DIAG, zero_field(2), 0.0, [1.0, 0.0], (0.0, 1.0), tol=(0.0, 1e-9))


def test_overflow_and_budget_errors():
    A = MatrixField.constant([[60.0]])
    with pytest.raises(NumericOverflow) as exc:
        integrate(A, zero_field(1), 0.0, [1.0], (0.0, 20.0))
    assert exc.value.time is not None
    with pytest.raises(IntegrationFailure):
        integrate(DIAG, zero_field(2), 0.0, [1.0, 1.0], (0.0, 10.0), max_steps=3)


def test_group_property():
    f = planar_sine_field(0.1)
    tol = (1e-9, 1e-9)
    x0 = np.array([0.7, -0.3])
    direct = integrate(DIAG, f, 0.0, x0, (0.0, 2.0), tol)(2.0)
    mid = integrate(DIAG, f, 0.0, x0, (0.0, 1.0), tol)(1.0)
    two = integrate(DIAG, f, 1.0, mid, (1.0, 2.0), tol)(2.0)
    assert np.linalg.norm(two - direct) <= 10 * 1e-9 * max(1.0, np.linalg.norm(direct))


def test_integrator_order_fixed_step():
    f = planar_sine_field(0.1)
    x0 = np.array([0.5, 0.2])
    ref = integrate(DIAG, f, 0.0, x0, (0.0, 2.0), (1e-13, 1e-13))(2.0)
    errs = []
    for h in (0.1, 0.05, 0.025):
        end = integrate(DIAG, f, 0.0, x0, (0.0, 2.0), h_init=h, adaptive=False)(2.0)
        errs.append(np.linalg.norm(end - ref))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 4.5)


def test_adaptive_error_shrinks_with_tolerance():
    f = planar_sine_field(0.1)
    x0 = np.array([0.5, 0.2])
    ref = integrate(DIAG, f, 0.0, x0, (0.0, 2.0), (1e-13, 1e-13))(2.0)
    e6 = np.linalg.norm(integrate(DIAG, f, 0.0, x0, (0.0, 2.0), (1e-6, 1e-6))(2.0) - ref)
    e9 = np.linalg.norm(integrate(DIAG, f, 0.0, x0, (0.0, 2.0), (1e-9, 1e-9))(2.0) - ref)
    assert e9 < e6 / 50


def test_evolution_diagonal_closed_form():
    for t, s in ((1.0, 0.0), (-0.5, 2.0), (3.0, 3.0)):
        U = evolution_operator(DIAG, t, s)
        assert np.allclose(U, np.diag([math.exp(-(t - s)), math.exp(t - s)]), rtol=1e-13)


def test_evolution_identity_and_cocycle(rng):
    A = MatrixField.constant([[-1.0, 0.3], [0.2, 0.5]])
    assert np.array_equal(evolution_operator(A, 1.2, 1.2), np.eye(2))
    for _ in range(5):
        t, s, r = rng.uniform(-3, 3, 3)
        lhs = evolution_operator(A, t, s) @ evolution_operator(A, s, r)
        assert np.allclose(lhs, evolution_operator(A, t, r), atol=1e-9, rtol=1e-9)


def test_evolution_tabulated_against_antiderivative():
    A = tab_field()
    for t, s in ((1.0, -1.0), (2.5, 0.3), (-2.0, 1.0)):
        exact = math.exp(-(t - s) + 0.1 * (math.cos(t) - math.cos(s)))
        assert abs(evolution_operator(A, t, s)[0, 0] - exact) < 1e-8


def test_evolution_nondiagonal_time_dependent_cocycle():
    A = MatrixField(a_const=np.array([[-1.0, 0.4], [0.0, 1.0]]), sin_amp=np.array([0.2, 0.1]),
                    sin_freq=1.3, kind="sin_diagonal")
    lhs = evolution_operator(A, 1.0, 0.2) @ evolution_operator(A, 0.2, -0.7)
    assert np.allclose(lhs, evolution_operator(A, 1.0, -0.7), atol=1e-9)


def test_tabulated_is_piecewise_linear_and_clamped():
    A = MatrixField.tabulated_diagonal([0.0, 1.0, 3.0], [[0.0], [2.0], [-2.0]])
    assert A(0.5)[0, 0] == pytest.approx(1.0)
    assert A(2.0)[0, 0] == pytest.approx(0.0)
    assert A(-5.0)[0, 0] == 0.0 and A(9.0)[0, 0] == -2.0


def test_bound_M_dominates_samples(rng):
    A = tab_field()
    for t in rng.uniform(-20, 20, 50):
        assert opnorm(A(t)) <= A.bound_M + 1e-12
    assert DIAG.bound_M == pytest.approx(1.0)


def test_opnorm_matches_svd(rng):
    m = rng.normal(size=(3, 3))
    assert opnorm(m) == pytest.approx(np.linalg.svd(m, compute_uv=False)[0])


BUILTINS = [planar_sine_field(0.3), radial_extend(unit_ball_field(0.25), 1.0),
            sawtooth_sine_field(1.0, 2, window=(-12.0, 12.0)), zero_field(2)]


@pytest.mark.parametrize("f", BUILTINS, ids=lambda f: f.kind)
def test_builtin_moduli_bound_f(f, rng):
    ts = rng.uniform(-10, 10, 300)
    xs = rng.normal(size=(300, f.n)) * 3
    ys = xs + rng.normal(size=(300, f.n)) * rng.uniform(1e-3, 2, (300, 1))
    fx, fy = f.many(ts, xs), f.many(ts, ys)
    if f.mu is not None:
        assert np.all(np.linalg.norm(fx, axis=1) <= f.mu(ts) + 1e-12)
    lip = np.linalg.norm(fx - fy, axis=1)
    assert np.all(lip <= f.r(ts) * np.linalg.norm(xs - ys, axis=1) + 1e-12)


def test_scalar_time_field_lipschitz(rng):
    f = scalar_time_field(0.1, 0.5)
    ts = rng.uniform(-3, 3, 500)
    x = rng.uniform(-2, 2, (500, 1))
    y = rng.uniform(-2, 2, (500, 1))
    lhs = np.abs(f.many(ts, x) - f.many(ts, y))[:, 0]
    assert np.all(lhs <= f.r(ts) * np.abs(x - y)[:, 0] + 1e-12)


def test_radial_extension_freezes_on_rays():
    f = radial_extend(linear_field(0.25, 1), 1.0)
    for x in (1.5, 3.0, -2.0, -7.0):
        assert f(0.0, np.array([x]))[0] == pytest.approx(0.25 * np.sign(x))
    assert f(0.0, np.array([0.4]))[0] == pytest.approx(0.1)
    assert radial_extend(zero_field(2), 1.0).is_zero


def test_radial_extension_errors():
    with pytest.raises(InvalidArgument):
        radial_extend(unit_ball_field(0.25), 0.0)
    with pytest.raises(InvalidArgument):
        radial_extend(radial_extend(unit_ball_field(0.25), 1.0), 1.0)


def test_radial_extension_doubles_lipschitz_across_boundary(rng):
    inner = unit_ball_field(0.25)
    f = radial_extend(inner, 1.0)
    assert f.r.value == pytest.approx(2 * inner.r.value)
    d = rng.normal(size=(1000, 2))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    x = d * rng.uniform(0.5, 1.0, (1000, 1))
    y = d * rng.uniform(1.0, 2.0, (1000, 1)) + rng.normal(size=(1000, 2)) * 0.05
    lhs = np.linalg.norm(f.many(np.zeros(1000), x) - f.many(np.zeros(1000), y), axis=1)
    assert np.all(lhs <= 2 * inner.r.value * np.linalg.norm(x - y, axis=1) + 1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 0.49), st.lists(st.floats(-50, 50), min_size=4, max_size=4))
def test_planar_field_property(sigma, xs):
    f = planar_sine_field(sigma)
    x, y = np.array(xs[:2]), np.array(xs[2:])
    assert np.linalg.norm(f(0.0, x)) <= sigma * math.sqrt(2) + 1e-15
    assert np.linalg.norm(f(0.0, x) - f(0.0, y)) <= sigma * np.linalg.norm(x - y) + 1e-12


def test_stack_matches_pointwise(rng):
    A = MatrixField(a_const=np.array([[-1.0, 0.4], [0.0, 1.0]]), tab_t=np.array([-1.0, 0.0, 2.0]),
                    tab_d=np.array([[0.1, 0.0], [0.3, -0.2], [0.0, 0.5]]), sin_amp=np.array([0.2, 0.1]),
                    sin_freq=1.3)
    ts = rng.uniform(-4, 4, 30)
    assert np.allclose(A.stack(ts), np.stack([A(t) for t in ts]), rtol=0, atol=1e-15)
