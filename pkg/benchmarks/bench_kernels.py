"""Compare the numba loop kernels with the numpy einsum kernels.

Usage::

    python3 benchmarks/bench_kernels.py --sizes 8 16 32 --p 3 --repeat 5

Each kernel is checked against the other before timing. Kernel rows use a
block-diagonal ``M`` like the ones a fit produces, plus one dense ``M`` row for
reference. The end-to-end rows time a full-model fit on a replicated
RRMS-shaped network of ``n`` contrasts.
"""

from __future__ import annotations

import argparse
import time
from unittest import mock

import numpy as np

from netmeta import kernels
from netmeta._accel import NUMBA_AVAILABLE
from netmeta.estimator import estimate_covariances
from netmeta.fixtures import RRMS_STUDIES
from netmeta.simulation import network_template
from netmeta.structure import build_structure


def best_of(fn, repeat):
    fn()  # untimed: keeps JIT compilation and cache loading out of the numbers
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def design_pattern(n, rng):
    """Block-diagonal ``M2``-like pattern: designs of 1 to 4 studies with 1 or 2 contrasts."""
    M = np.zeros((n, n))
    pos = 0
    while pos < n:
        c_d = int(rng.integers(1, 3))
        size = min(n - pos, c_d * int(rng.integers(1, 5)))
        M[pos:pos + size, pos:pos + size] = rng.uniform(0.5, 1.0, size=(size, size))
        pos += size
    return M


def kernel_rows(n, p, repeat, rng, dense=False):
    A = rng.normal(size=(n * p, n * p))
    B = rng.normal(size=(n * p, n * p))
    M = rng.normal(size=(n, n)) if dense else design_pattern(n, rng)
    S = rng.normal(size=(p, p))
    pairs = {
        "btr_sandwich": (lambda: kernels._btr_sandwich_sparse(A, M, S, B, p),
                         lambda: kernels._btr_sandwich_numpy(A, M, S, B, p)),
        "coefficient_matrix": (lambda: kernels._coefficient_sparse(A, B, M, p),
                               lambda: kernels._coefficient_numpy(A, B, M, p)),
    }
    rows = []
    for name, (fast, slow) in pairs.items():
        np.testing.assert_allclose(fast(), slow(), rtol=1e-9, atol=1e-9)
        rows.append((name + (" (dense M)" if dense else ""), n, p, best_of(fast, repeat), best_of(slow, repeat)))
    return rows


def fit_row(copies, repeat, rng):
    designs = {}
    for _, d in RRMS_STUDIES:
        designs[d] = designs.get(d, 0) + copies
    template = network_template("ABCDEF", ["MRI", "relapse", "disability"], list(designs.items()), rng)
    effects = [rng.normal(size=s.effects.shape) for s in template.studies]
    sm = build_structure(template.with_effects(effects))

    def fit():
        estimate_covariances(sm, "full")

    t_numba = best_of(fit, repeat)
    with mock.patch.object(kernels, "use_numba", lambda: False):
        t_numpy = best_of(fit, repeat)
    return ("full fit", sm.n, sm.p, t_numba, t_numpy)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[8, 16, 32, 48])
    parser.add_argument("--p", type=int, default=3)
    parser.add_argument("--copies", type=int, nargs="+", default=[1, 2, 4])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    if not NUMBA_AVAILABLE:
        parser.error("numba is not installed")

    rng = np.random.default_rng(args.seed)
    kernel_rows(2, args.p, 1, rng)  # compile outside the timings
    rows = []
    for n in args.sizes:
        rows.extend(kernel_rows(n, args.p, args.repeat, rng))
    rows.extend(kernel_rows(max(args.sizes), args.p, args.repeat, rng, dense=True))
    for k in args.copies:
        rows.append(fit_row(k, max(1, args.repeat // 2), rng))

    print(f"{'kernel':<30}{'n':>6}{'p':>4}{'numba ms':>12}{'numpy ms':>12}{'speed-up':>10}")
    for name, n, p, tf, ts in rows:
        print(f"{name:<30}{n:>6}{p:>4}{tf * 1e3:>12.3f}{ts * 1e3:>12.3f}{ts / tf:>10.1f}")


if __name__ == "__main__":
    main()
