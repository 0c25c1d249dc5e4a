import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from conjlab.errors import InvalidArgument
from conjlab.moduli import ConstantModulus, SawtoothModulus, TabulatedModulus


def quad_integral(b, a, c):
    pts = list(b.breakpoints(a, c))
    return quad(b, a, c, points=pts or None, limit=500, epsabs=1e-13, epsrel=1e-12)[0]


def test_constant_modulus():
    b = ConstantModulus(value=0.4)
    assert b(3.0) == 0.4 and b.window_sup == 0.4 and b.sup_value == 0.4
    assert b.integral(-1.0, 2.0) == pytest.approx(1.2)
    with pytest.raises(InvalidArgument):
        ConstantModulus(value=-1.0)


def test_tabulated_interpolates_and_clamps():
    b = TabulatedModulus(times=(0.0, 1.0, 2.0), values=(0.0, 2.0, 1.0))
    assert b(0.5) == pytest.approx(1.0)
    assert b(-3.0) == 0.0 and b(10.0) == 1.0
    assert b.integral(0.0, 2.0) == pytest.approx(2.5)
    with pytest.raises(InvalidArgument):
        TabulatedModulus(times=(0.0, 1.0), values=(1.0, -1.0))
    with pytest.raises(InvalidArgument):
        TabulatedModulus(times=(1.0, 0.0), values=(1.0, 1.0))


def test_sawtooth_shape():
    b = SawtoothModulus(c=1.0)
    assert np.all(b(np.linspace(0.0, 0.999, 50)) == 0.0)
    # peak of c m^2 t - c m^3 branch at m + 1/(2m)
    assert b(4.0 + 1.0 / 8.0) == pytest.approx(2.0)
    assert b.peak(4) == 2.0
    assert b(-4.125) == b(4.125)
    assert b(3.5) == 0.0
    assert b(np.array([4.125]))[0] == pytest.approx(b(4.125))


@pytest.mark.parametrize("m", [1, 2, 5, 17])
def test_sawtooth_bump_mass_against_quadrature(m):
    b = SawtoothModulus(c=1.3)
    assert b.integral(m, m + 1.0) == pytest.approx(quad_integral(b, m, m + 1.0), abs=1e-12)
    # triangle of base 1/m and height c m/2
    assert b.integral(m, m + 1.0) == pytest.approx(1.3 / 4.0, rel=1e-12)


def test_sawtooth_window_sup_and_unbounded():
    b = SawtoothModulus(c=1.0, window=(-51.0, 51.0))
    starts, vals = b.window_integrals()
    assert vals.max() <= 1.0
    assert b.window_sup == pytest.approx(vals.max())
    assert max(b.peak(m) for m in range(1, 51)) > 10.0


@settings(max_examples=40, deadline=None)
@given(st.floats(-30, 30), st.floats(0.01, 5.0))
def test_sawtooth_antiderivative_property(a, width):
    b = SawtoothModulus(c=0.7)
    assert b.integral(a, a + width) == pytest.approx(quad_integral(b, a, a + width), abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.0, 5.0), min_size=2, max_size=10))
def test_window_sup_bounds_all_unit_windows(values):
    times = tuple(np.linspace(-5, 5, len(values)))
    b = TabulatedModulus(times=times, values=tuple(values), window=(-8.0, 8.0))
    for t in np.linspace(-8.0, 7.0, 31):
        assert b.integral(t, t + 1.0) <= b.window_sup + 1e-12
    assert np.all(b(np.linspace(-8, 8, 101)) >= 0)


def test_scaled_modulus():
    b = SawtoothModulus(c=1.0).scaled(3.0)
    assert b(4.125) == pytest.approx(6.0)
    assert b.integral(2.0, 3.0) == pytest.approx(0.75)
