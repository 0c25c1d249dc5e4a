"""Compiled kernels against their uncompiled fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N] [--quick]

Each kernel runs on identical inputs through the numba entry point and through
``py_func`` (the same source as plain Python/numpy, which is what
CONJLAB_BACKEND=numpy selects).  Outputs are compared before timing.
Helpers called from inside a ``py_func`` body stay compiled, so the python
column is a lower bound on a fully uncompiled run.
"""
import argparse
import time

import numpy as np

from conjlab import _kernels as K
from conjlab._backend import USE_NUMBA, py_func
from conjlab.dichotomy import DichotomyData, build_green_grid
from conjlab.flows import MatrixField, planar_sine_field


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def cases(quick):
    A = MatrixField.constant(np.diag([-1.0, 1.0]))
    f = planar_sine_field(0.1)
    span = 5.0 if quick else 20.0
    args = (0.0, np.array([1.0, 0.5]), span, 1e-10, 1e-10, 0.0, 2_000_000, True,
            *A.kernel_args, *f.kernel_args)
    yield "dopri5", K.dopri5, args

    D = DichotomyData(0.0, np.diag([1.0, 0.0]), 1.0, 1.0)
    half = 2.0 if quick else 8.0
    g = build_green_grid(D, A, 0.0, half, half, 1e-3)
    phi = np.sin(g.nodes)[:, None] * np.ones((1, 2))
    h = np.diff(g.nodes)
    yield "green_recursion", K.green_recursion, (h, g.phis, g.phinvs, g.projs, phi)
    yield "propagate_from", K.propagate_from, (g.phis, g.phinvs, g.center, np.array([0.3, -0.2]))

    t = np.linspace(0.0, 10.0, 20_001 if quick else 200_001)
    yield "exp_conv", K._exp_conv_loop, (t, np.cos(t) ** 2, 0.7)

    xs = np.random.default_rng(0).normal(size=(t.size, 2))
    yield "field_eval_many", K.field_eval_many, (t, xs, *f.kernel_args)


def _same(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    for x, y in zip(a, b):
        if isinstance(x, np.ndarray) and not np.allclose(x, y, rtol=1e-12, atol=1e-14):
            return False
    return True


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()
    if not USE_NUMBA:
        print("numba backend disabled (CONJLAB_BACKEND=numpy); nothing to compare")
        return
    print(f"{'kernel':<18}{'numba [s]':>12}{'python [s]':>12}{'speedup':>10}  match")
    for name, fn, a in cases(args.quick):
        fn(*a)  # compile
        ok = _same(fn(*a), py_func(fn)(*a))
        tj = best_of(lambda: fn(*a), args.repeat)
        tp = best_of(lambda: py_func(fn)(*a), 1)
        print(f"{name:<18}{tj:>12.4g}{tp:>12.4g}{tp / tj:>10.1f}  {'yes' if ok else 'NO'}")


if __name__ == "__main__":
    main()
