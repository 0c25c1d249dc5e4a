"""Hot numeric kernels.

Every kernel is written in the numba-compatible subset of Python/numpy and
decorated with :func:`conjlab._backend.jit`, so the same source runs compiled
(default) or interpreted (``CONJLAB_BACKEND=numpy``).  The scalar exponential
convolutions additionally have a vectorized numpy path (``scipy.signal.lfilter``)
used by the numpy backend on uniform grids.

Field encoding
--------------
A matrix field is ``A(t) = a_const + diag(interp(tab_t, tab_d)(t)) +
diag(sin_amp * sin(sin_freq * t))``; unused parts are zero-length or zero.
A nonlinear field is an integer ``kind`` plus a float parameter vector and an
optional radial-extension radius (``radius <= 0`` disables it).
"""
import math

import numpy as np
from scipy.signal import lfilter

from ._backend import USE_NUMBA, jit

FIELD_ZERO = 0
FIELD_PLANAR_SINE = 1
FIELD_UNIT_BALL = 2
FIELD_SCALAR_TIME = 3
FIELD_SAWTOOTH_SINE = 4
FIELD_LINEAR = 5

STATUS_OK = 0
STATUS_UNDERFLOW = 1
STATUS_NONFINITE = 2
STATUS_MAX_STEPS = 3


# ---------------------------------------------------------------- fields

@jit
def sawtooth_value(c, t):
    tau = abs(t)
    if tau < 1.0:
        return 0.0
    m = math.floor(tau)
    u = tau - m
    if u < 0.5 / m:
        return c * m * m * u
    if u < 1.0 / m:
        return c * m - c * m * m * u
    return 0.0


@jit
def matrix_eval(t, a_const, tab_t, tab_d, sin_amp, sin_freq, out):
    n = a_const.shape[0]
    for i in range(n):
        for j in range(n):
            out[i, j] = a_const[i, j]
    m = tab_t.shape[0]
    if m > 0:
        if t <= tab_t[0]:
            for i in range(n):
                out[i, i] += tab_d[0, i]
        elif t >= tab_t[m - 1]:
            for i in range(n):
                out[i, i] += tab_d[m - 1, i]
        else:
            k = np.searchsorted(tab_t, t) - 1
            w = (t - tab_t[k]) / (tab_t[k + 1] - tab_t[k])
            for i in range(n):
                out[i, i] += (1.0 - w) * tab_d[k, i] + w * tab_d[k + 1, i]
    if sin_freq != 0.0:
        s = math.sin(sin_freq * t)
        for i in range(n):
            out[i, i] += sin_amp[i] * s


@jit
def field_eval(t, x, kind, params, radius, out):
    n = x.shape[0]
    if kind == FIELD_ZERO:
        for i in range(n):
            out[i] = 0.0
        return
    scale = 1.0
    if radius > 0.0:
        nrm = 0.0
        for i in range(n):
            nrm += x[i] * x[i]
        nrm = math.sqrt(nrm)
        if nrm > radius:
            scale = radius / nrm
    if kind == FIELD_PLANAR_SINE:
        sig = params[0]
        for i in range(n):
            out[i] = sig * math.sin(scale * x[n - 1 - i])
    elif kind == FIELD_UNIT_BALL:
        eps = params[0]
        for i in range(n):
            xi = scale * x[i]
            sgn = 1.0 if i % 2 == 0 else -1.0
            if xi >= 0.0:
                out[i] = sgn * eps * xi
            else:
                out[i] = sgn * eps * xi * xi * xi
    elif kind == FIELD_SCALAR_TIME:
        e_in = params[0]
        d_out = params[1]
        nrm = 0.0
        for i in range(n):
            nrm += (scale * x[i]) ** 2
        nrm = math.sqrt(nrm)
        if nrm <= e_in:
            w = 0.0
        elif nrm >= d_out:
            w = 1.0
        else:
            s = (nrm - e_in) / (d_out - e_in)
            w = s * s * (3.0 - 2.0 * s)
        g = 2.0 / (math.exp(2.0 * t) + 1.0) if t < 350.0 else 0.0
        for i in range(n):
            out[i] = w * g * scale * x[i]
    elif kind == FIELD_SAWTOOTH_SINE:
        mu = sawtooth_value(params[0], t)
        for i in range(n):
            out[i] = mu * math.sin(scale * x[i])
    elif kind == FIELD_LINEAR:
        kap = params[0]
        for i in range(n):
            out[i] = kap * scale * x[i]
    else:
        for i in range(n):
            out[i] = math.nan


@jit
def field_eval_many(ts, xs, kind, params, radius):
    out = np.empty_like(xs)
    buf = np.empty(xs.shape[1])
    for k in range(xs.shape[0]):
        field_eval(ts[k], xs[k], kind, params, radius, buf)
        for i in range(xs.shape[1]):
            out[k, i] = buf[i]
    return out


@jit
def rhs_eval(t, x, a_const, tab_t, tab_d, sin_amp, sin_freq, kind, params, radius,
             amat, fbuf, out):
    matrix_eval(t, a_const, tab_t, tab_d, sin_amp, sin_freq, amat)
    field_eval(t, x, kind, params, radius, fbuf)
    n = x.shape[0]
    for i in range(n):
        acc = fbuf[i]
        for j in range(n):
            acc += amat[i, j] * x[j]
        out[i] = acc


# ---------------------------------------------------------------- Dormand-Prince 5(4)

_C2, _C3, _C4, _C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
_A21 = 1.0 / 5.0
_A31, _A32 = 3.0 / 40.0, 9.0 / 40.0
_A41, _A42, _A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
_A51, _A52, _A53, _A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
_A61, _A62, _A63, _A64, _A65 = (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0,
                                49.0 / 176.0, -5103.0 / 18656.0)
_B1, _B3, _B4, _B5, _B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
_E1, _E3, _E4, _E5, _E6, _E7 = (71.0 / 57600.0, -71.0 / 16695.0, 71.0 / 1920.0,
                                -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0)


@jit
def dopri5(t0, x0, t_end, rtol, atol, h_init, max_steps, adaptive,
           a_const, tab_t, tab_d, sin_amp, sin_freq, kind, params, radius):
    """Integrate x' = A(t)x + f(t,x) from t0 to t_end (either direction).

    Returns (ts, xs, fs, status, t_fail, n_rejected).  ``fs`` holds the
    right-hand side at each accepted node for Hermite dense output.  With
    ``adaptive`` false the step is fixed at ``h_init`` (last step clipped).
    """
    n = x0.shape[0]
    direction = 1.0 if t_end >= t0 else -1.0
    span = abs(t_end - t0)
    cap = 256
    ts = np.empty(cap)
    xs = np.empty((cap, n))
    fs = np.empty((cap, n))
    amat = np.empty((n, n))
    fbuf = np.empty(n)
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    k5 = np.empty(n)
    k6 = np.empty(n)
    k7 = np.empty(n)
    xt = np.empty(n)
    xnew = np.empty(n)
    x = x0.copy()
    t = t0
    rhs_eval(t, x, a_const, tab_t, tab_d, sin_amp, sin_freq, kind, params, radius, amat, fbuf, k1)
    ts[0] = t
    for i in range(n):
        xs[0, i] = x[i]
        fs[0, i] = k1[i]
    count = 1
    status = STATUS_OK
    t_fail = t0
    rejected = 0
    if span == 0.0:
        return ts[:1].copy(), xs[:1].copy(), fs[:1].copy(), status, t_fail, rejected

    h = abs(h_init)
    if h <= 0.0:
        # initial step from the size of the derivative
        d0 = 0.0
        d1 = 0.0
        for i in range(n):
            sc = atol + rtol * abs(x[i])
            d0 += (x[i] / sc) ** 2
            d1 += (k1[i] / sc) ** 2
        d0 = math.sqrt(d0 / n)
        d1 = math.sqrt(d1 / n)
        if d0 < 1e-5 or d1 < 1e-5:
            h = 1e-6
        else:
            h = 0.01 * d0 / d1
        h = min(h, span)
    steps = 0
    while direction * (t_end - t) > 0.0:
        if steps >= max_steps:
            status = STATUS_MAX_STEPS
            t_fail = t
            break
        remaining = abs(t_end - t)
        last = False
        if h >= remaining:
            h = remaining
            last = True
        hs = direction * h
        for i in range(n):
            xt[i] = x[i] + hs * _A21 * k1[i]
        rhs_eval(t + _C2 * hs, xt, a_const, tab_t, tab_d, sin_amp, sin_freq, kind, params, radius, amat, fbuf, k2)
        for i in range(n):
            xt[i] = x[i] + hs * (_A31 * k1[i] + _A32 * k2[i])
        rhs_eval(t + _C3 * hs, xt, a_const, tab_t, tab_d, sin_amp, sin_freq, kind, params, radius, amat, fbuf, k3)
        for i in range(n):
            xt[i] = x[i] + hs * (_A41 * k1[i] + _A42 * k2[i] + _A43 * k3[i])
        rhs_eval(t + _C4 * hs, xt, a_const, tab_t, tab_d, sin_amp, sin_freq, kind, params, radius, amat, fbuf, k4)
        for i in range(n):
            xt[i] = x[i] + hs * (_A51 * k1[i] + _A52 * k2[i] + _A53 * k3[i] + _A54 * k4[i])
        rhs_eval(t + _C5 * hs, xt, a_const, tab_t, tab_d, sin_amp, sin_freq, kind, params, radius, amat, fbuf, k5)
        for i in range(n):
            xt[i] = x[i] + hs * (_A61 * k1[i] + _A62 * k2[i] + _A63 * k3[i] + _A64 * k4[i] + _A65 * k5[i])
        rhs_eval(t + hs, xt, a_const, tab_t, tab_d, sin_amp, sin_freq, kind, params, radius, amat, fbuf, k6)
        for i in range(n):
            xnew[i] = x[i] + hs * (_B1 * k1[i] + _B3 * k3[i] + _B4 * k4[i] + _B5 * k5[i] + _B6 * k6[i])
        t_new = t_end if last else t + hs
        rhs_eval(t_new, xnew, a_const, tab_t, tab_d, sin_amp, sin_freq, kind, params, radius, amat, fbuf, k7)
        steps += 1

        finite = True
        for i in range(n):
            if not math.isfinite(xnew[i]):
                finite = False
        if adaptive:
            err = 0.0
            for i in range(n):
                e = hs * (_E1 * k1[i] + _E3 * k3[i] + _E4 * k4[i] + _E5 * k5[i] + _E6 * k6[i] + _E7 * k7[i])
                sc = atol + rtol * max(abs(x[i]), abs(xnew[i]))
                err += (e / sc) ** 2
            err = math.sqrt(err / n)
            if not finite or not math.isfinite(err):
                err = 1e10
        else:
            err = 0.0
            if not finite:
                status = STATUS_NONFINITE
                t_fail = t
                break

        if err <= 1.0:
            t = t_new
            for i in range(n):
                x[i] = xnew[i]
                k1[i] = k7[i]
            if count == cap:
                cap *= 2
                ts2 = np.empty(cap)
                xs2 = np.empty((cap, n))
                fs2 = np.empty((cap, n))
                ts2[:count] = ts[:count]
                xs2[:count] = xs[:count]
                fs2[:count] = fs[:count]
                ts = ts2
                xs = xs2
                fs = fs2
            ts[count] = t
            for i in range(n):
                xs[count, i] = x[i]
                fs[count, i] = k1[i]
            count += 1
            if adaptive:
                fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
                h = h * fac
            else:
                h = abs(h_init)
        else:
            rejected += 1
            if err >= 1e10:
                h = h * 0.1
            else:
                h = h * max(0.2, 0.9 * err ** -0.2)
            if h < 1e-14 * max(1.0, abs(t)):
                status = STATUS_NONFINITE if not finite else STATUS_UNDERFLOW
                t_fail = t
                break
    return ts[:count].copy(), xs[:count].copy(), fs[:count].copy(), status, t_fail, rejected


@jit
def hermite_sample(ts, xs, fs, query):
    """Cubic Hermite dense output of a monotone increasing node set."""
    m = query.shape[0]
    n = xs.shape[1]
    out = np.empty((m, n))
    last = ts.shape[0] - 1
    for q in range(m):
        t = query[q]
        if t <= ts[0]:
            k = 0
        elif t >= ts[last]:
            k = last - 1
        else:
            k = np.searchsorted(ts, t, side="right") - 1
        if last == 0:
            for i in range(n):
                out[q, i] = xs[0, i]
            continue
        h = ts[k + 1] - ts[k]
        s = (t - ts[k]) / h
        h00 = (1.0 + 2.0 * s) * (1.0 - s) ** 2
        h10 = s * (1.0 - s) ** 2
        h01 = s * s * (3.0 - 2.0 * s)
        h11 = s * s * (s - 1.0)
        for i in range(n):
            out[q, i] = (h00 * xs[k, i] + h10 * h * fs[k, i]
                         + h01 * xs[k + 1, i] + h11 * h * fs[k + 1, i])
    return out


# ---------------------------------------------------------------- propagators

@jit
def rk4_propagators(nodes, nsub, a_const, tab_t, tab_d, sin_amp, sin_freq):
    """Step propagators U(s_{k+1}, s_k) by classical RK4 with ``nsub`` substeps."""
    N = nodes.shape[0]
    n = a_const.shape[0]
    phis = np.empty((N - 1, n, n))
    a1 = np.empty((n, n))
    a2 = np.empty((n, n))
    a3 = np.empty((n, n))
    for k in range(N - 1):
        h = (nodes[k + 1] - nodes[k]) / nsub
        U = np.eye(n)
        t = nodes[k]
        for _ in range(nsub):
            matrix_eval(t, a_const, tab_t, tab_d, sin_amp, sin_freq, a1)
            matrix_eval(t + 0.5 * h, a_const, tab_t, tab_d, sin_amp, sin_freq, a2)
            matrix_eval(t + h, a_const, tab_t, tab_d, sin_amp, sin_freq, a3)
            K1 = a1 @ U
            K2 = a2 @ (U + 0.5 * h * K1)
            K3 = a2 @ (U + 0.5 * h * K2)
            K4 = a3 @ (U + h * K3)
            U = U + (h / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4)
            t += h
        phis[k] = U
    return phis


# ---------------------------------------------------------------- Green recursions

@jit
def _matvec(m, v, out):
    n = v.shape[0]
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += m[i, j] * v[j]
        out[i] = acc


@jit
def green_recursion(h, phis, phinvs, projs, phi):
    """Split Green integrals on a node set by trapezoidal recursion.

    Returns (S, Q) with S_k ~ int_{s_0}^{s_k} U(s_k,s)P(s)phi(s)ds and
    Q_k ~ int_{s_k}^{s_N} U(s_k,s)(I-P(s))phi(s)ds.  Each step re-projects so
    rounding errors cannot feed the growing complementary modes.
    """
    N, n = phi.shape
    S = np.zeros((N, n))
    Q = np.zeros((N, n))
    a = np.empty(n)
    b = np.empty(n)
    pa = np.empty(n)
    for k in range(N - 1):
        hk = 0.5 * h[k]
        _matvec(projs[k], phi[k], pa)
        for i in range(n):
            a[i] = S[k, i] + hk * pa[i]
        _matvec(phis[k], a, b)
        _matvec(projs[k + 1], phi[k + 1], pa)
        for i in range(n):
            b[i] += hk * pa[i]
        _matvec(projs[k + 1], b, a)
        for i in range(n):
            S[k + 1, i] = a[i]
    for k in range(N - 2, -1, -1):
        hk = 0.5 * h[k]
        # (I - P) v = v - P v
        _matvec(projs[k + 1], phi[k + 1], pa)
        for i in range(n):
            a[i] = Q[k + 1, i] + hk * (phi[k + 1, i] - pa[i])
        _matvec(phinvs[k], a, b)
        _matvec(projs[k], phi[k], pa)
        for i in range(n):
            b[i] += hk * (phi[k, i] - pa[i])
        _matvec(projs[k], b, a)
        for i in range(n):
            Q[k, i] = b[i] - a[i]
    return S, Q


@jit
def _exp_conv_loop(t, g, rate):
    N = t.shape[0]
    F = np.zeros(N)
    B = np.zeros(N)
    for k in range(N - 1):
        h = t[k + 1] - t[k]
        e = math.exp(-rate * h)
        F[k + 1] = e * (F[k] + 0.5 * h * g[k]) + 0.5 * h * g[k + 1]
    for k in range(N - 2, -1, -1):
        h = t[k + 1] - t[k]
        e = math.exp(-rate * h)
        B[k] = e * (B[k + 1] + 0.5 * h * g[k + 1]) + 0.5 * h * g[k]
    return F, B


def _exp_conv_lfilter(t, g, rate):
    h = t[1] - t[0]
    e = math.exp(-rate * h)
    drive = 0.5 * h * (e * g[:-1] + g[1:])
    F = np.concatenate(([0.0], lfilter([1.0], [1.0, -e], drive)))
    drive_b = 0.5 * h * (g[:-1] + e * g[1:])
    B = np.concatenate((lfilter([1.0], [1.0, -e], drive_b[::-1])[::-1], [0.0]))
    return F, B


def exp_conv(t, g, rate):
    """One-sided exponential-kernel integrals on nodes ``t`` (trapezoid).

    F_k = int_{t_0}^{t_k} exp(-rate (t_k - s)) g(s) ds,
    B_k = int_{t_k}^{t_N} exp(-rate (s - t_k)) g(s) ds.
    """
    t = np.ascontiguousarray(t, dtype=float)
    g = np.ascontiguousarray(g, dtype=float)
    if t.shape[0] < 2:
        return np.zeros_like(t), np.zeros_like(t)
    if not USE_NUMBA:
        d = np.diff(t)
        if np.allclose(d, d[0], rtol=1e-12, atol=0.0):
            return _exp_conv_lfilter(t, g, rate)
    return _exp_conv_loop(t, g, rate)


@jit
def propagate_from(phis, phinvs, center, y):
    """Linear states on the nodes given the state ``y`` at node ``center``."""
    N = phis.shape[0] + 1
    n = y.shape[0]
    out = np.empty((N, n))
    buf = np.empty(n)
    for i in range(n):
        out[center, i] = y[i]
    for k in range(center, N - 1):
        _matvec(phis[k], out[k], buf)
        for i in range(n):
            out[k + 1, i] = buf[i]
    for k in range(center - 1, -1, -1):
        _matvec(phinvs[k], out[k + 1], buf)
        for i in range(n):
            out[k, i] = buf[i]
    return out
