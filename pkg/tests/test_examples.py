import math

import numpy as np
import pytest

from conjlab import examples as ex
from conjlab.errors import HypothesisViolated, InvalidArgument
from conjlab.flows import MatrixField, integrate

EPS = 0.25


def test_h1_g1_values():
    assert ex.h1(1.0, EPS) == pytest.approx(0.75, abs=1e-15)
    assert ex.g1(0.75, EPS) == pytest.approx(1.0, abs=1e-15)
    assert ex.h1(0.0, EPS) == 0.0 and ex.g1(0.0, EPS) == 0.0
    # negative branch at -1: -(1-e)^{3/2} (1-e)^{-1/2} = -(1-e)
    assert ex.h1(-1.0, EPS) == pytest.approx(-0.75, abs=1e-15)


@pytest.mark.parametrize("eps", [0.1, 0.25, 0.5, 0.9])
def test_closed_form_inverse_on_dense_grid(eps):
    _, _, _, cf = ex.unit_ball_example(eps)
    xs = np.linspace(*cf.domain, 20001)
    ys = np.linspace(*cf.image, 20001)
    assert np.max(np.abs(cf.G(cf.H(xs)) - xs)) <= 1e-10
    assert np.max(np.abs(cf.H(cf.G(ys)) - ys)) <= 1e-10
    assert np.all(np.diff(cf.H(xs)) > 0)


def test_one_sided_derivatives():
    right, left = ex.one_sided_derivatives(EPS)
    assert abs(right) < 1e-3
    assert left == pytest.approx((1 - EPS) ** 1.5, abs=1e-3)
    # left quotient converges while the right one keeps shrinking
    r2, l2 = ex.one_sided_derivatives(EPS, h=1e-9)
    assert r2 > right and abs(l2 - left) < 1e-3


def test_trajectory_oracles_initial_and_limit():
    orc = ex.trajectory_oracles(EPS)
    assert orc.positive(0.0) == 1.0 and orc.negative(0.0) == -1.0
    assert abs(orc.positive(60.0)) < 1e-12 and abs(orc.negative(60.0)) < 1e-12
    ts = np.linspace(0, 10, 1001)
    assert np.max(np.abs(ex.h1(orc.positive(ts), EPS) - orc.pushed_positive(ts))) <= 1e-10
    assert np.max(np.abs(ex.h1(orc.negative(ts), EPS) - orc.pushed_negative(ts))) <= 1e-10


@pytest.mark.parametrize("sign", [1.0, -1.0])
def test_trajectory_oracles_match_integrator(sign):
    A, f, _, _ = ex.unit_ball_example(EPS)
    orc = ex.trajectory_oracles(EPS)
    tr = integrate(A, f, 0.0, [sign, 0.0], (0.0, 6.0), (1e-12, 1e-12))
    ts = np.linspace(0.0, 6.0, 61)
    want = orc.positive(ts) if sign > 0 else orc.negative(ts)
    # dense output between steps is good to about 1e-8
    assert np.max(np.abs(tr(ts)[:, 0] - want)) < 1e-7
    # the conjugacy carries the in-ball trajectory to a linear solution
    pushed = ex.h1(tr(ts)[:, 0], EPS)
    lin = (1 - EPS) * sign * np.exp(-ts)
    assert np.max(np.abs(pushed - lin)) < 1e-7


def test_unit_ball_system_shape():
    A, f, D, cf = ex.unit_ball_example(EPS)
    assert np.array_equal(A(0.0), np.diag([-1.0, 1.0]))
    assert np.array_equal(D.P0, np.diag([1.0, 0.0])) and D.K == 1.0 and D.alpha == 1.0
    assert f.radius == 1.0
    x = np.array([0.5, 0.0])
    assert f(0.0, x)[0] == pytest.approx(EPS * 0.5)
    assert f(0.0, -x)[0] == pytest.approx(-EPS * 0.125)
    assert cf.to_json()["params"] == {"eps": EPS}
    for bad in (0.0, 1.0, -0.2):
        with pytest.raises(InvalidArgument):
            ex.unit_ball_example(bad)


def test_unit_ball_selftest():
    assert ex.unit_ball_selftest(EPS)["passed"]


def test_scalar_time_oracle():
    A, f, D, orc = ex.scalar_time_example(0.05, 0.2)
    assert orc.H(0.0, 1.0) == 0.5
    ts = np.linspace(-4, 4, 81)
    assert np.max(np.abs(orc.pushed(ts) - 0.5 * np.exp(-ts))) < 1e-12
    assert orc.pushed_residual(ts) <= 1e-10
    assert np.max(np.abs(orc.G(ts, orc.H(ts, 0.7)) - 0.7)) < 1e-12
    tr = integrate(A, f, 0.0, [1.0], (-2.0, 2.0), (1e-12, 1e-12))
    tt = np.linspace(-2, 2, 41)
    assert np.max(np.abs(tr(tt)[:, 0] - orc.reference(tt))) < 1e-7
    with pytest.raises(InvalidArgument):
        ex.scalar_time_example(0.3, 0.2)


def test_scalar_time_field_regions():
    _, f, _, _ = ex.scalar_time_example(0.1, 0.3)
    assert f(0.7, np.array([0.05]))[0] == 0.0
    t, x = 0.7, 0.5
    assert f(t, np.array([x]))[0] == pytest.approx(2 * math.exp(-t) / (math.exp(t) + math.exp(-t)) * x)


def test_scalar_time_selftest():
    out = ex.scalar_time_selftest(0.05, 0.2)
    assert out["passed"] and out["lipschitz_ratio"] <= 25.0 + 1e-6


def test_sawtooth_values():
    mu = ex.sawtooth_modulus(1.0)
    assert np.all(mu(np.linspace(0.0, 0.999, 50)) == 0.0)
    assert mu.peak(4) == pytest.approx(2.0)
    assert mu(4 + 1 / 8) == pytest.approx(2.0)
    assert mu(-(4 + 1 / 8)) == pytest.approx(2.0)
    out = ex.sawtooth_selftest(0.3)
    assert out["passed"] and out["max_window_integral"] <= 0.3 and out["max_peak"] > 3.0


def test_sawtooth_system():
    A, f, D = ex.sawtooth_example(0.5)
    x = np.array([0.3, -1.2])
    t = 3 + 1 / 6
    assert np.allclose(f(t, x), ex.sawtooth_modulus(0.5)(t) * np.sin(x))


def test_planar_example(rng):
    A, f, D = ex.planar_example(0.1)
    assert D.K == 1.0 and D.alpha == 1.0
    assert f.mu.value == pytest.approx(0.1 * math.sqrt(2)) and f.r.value == 0.1
    x, y = rng.normal(size=(2, 500, 2))
    num = np.linalg.norm(f.many(np.zeros(500), x) - f.many(np.zeros(500), y), axis=1)
    assert np.all(num <= 0.1 * np.linalg.norm(x - y, axis=1) + 1e-15)
    small = ex.planar_example(1e-9)[1]
    assert np.max(np.abs(small(0.0, np.array([1.0, 2.0])))) < 1e-9
    with pytest.raises(HypothesisViolated):
        ex.planar_example(0.5)
    with pytest.raises(InvalidArgument):
        ex.planar_example(0.0)
