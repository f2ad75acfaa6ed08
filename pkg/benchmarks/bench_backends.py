"""Timing comparison: compiled kernels vs the NumPy fallback.

Runs the two hot paths (variance fit, bootstrap pass) on synthetic
problems and prints best-of-k wall times for each backend. Invoke as

    python3 benchmarks/bench_backends.py [--repeats N] [--best-of K]
"""

import argparse
import time

import numpy as np

from fhsae import _pykernels
from fhsae.backends import get_backend
from fhsae.rng import DOMAIN_BOOT, derive_key, gauss_pairs

ADJUSTED = _pykernels.ADJUSTED


def _problem(m, p, rng):
    X = np.column_stack([np.ones(m)] + [rng.normal(size=m) for _ in range(p - 1)])
    d = np.geomspace(0.5, 8.0, m)
    y = X @ rng.normal(size=p) + rng.normal(scale=2.0, size=m)
    return y, X, d


def _best_of(fn, repeats, best_of):
    times = []
    for _ in range(best_of):
        t0 = time.perf_counter()
        for _ in range(repeats):
            fn()
        times.append((time.perf_counter() - t0) / repeats)
    return min(times)


def bench_fit(repeats, best_of):
    print("fit_variance (area-adjusted objective, 200-point grid + refine)")
    rng = np.random.default_rng(0)
    compiled = get_backend("compiled")
    for m, p in ((15, 2), (50, 3), (200, 4)):
        y, X, d = _problem(m, p, rng)
        a_max = 1e3 * max(float(d.max()), float(y.var(ddof=1)))

        def run(be):
            return lambda: be.fit_variance(y, X, d, ADJUSTED, 0, 200, 1e-8, 200, a_max)

        t_py = _best_of(run(_pykernels), repeats, best_of)
        t_c = _best_of(run(compiled), repeats, best_of)
        print(f"  m={m:<4d} p={p}   python {t_py * 1e3:8.3f} ms   "
              f"compiled {t_c * 1e3:8.3f} ms   {t_py / t_c:6.1f}x")


def bench_bootstrap(repeats, best_of):
    n_boot = 200
    m, p = 15, 2
    print(f"bootstrap_pass ({n_boot} parametric worlds, m={m}, "
          "one fit per distinct sampling variance)")
    rng = np.random.default_rng(1)
    y, X, d = _problem(m, p, rng)
    xbeta = X @ np.linalg.lstsq(X, y, rcond=None)[0]
    a_gen = np.full(m, 1.5)
    zv, ze = gauss_pairs(
        derive_key(7, DOMAIN_BOOT),
        np.arange(n_boot)[:, None],
        np.arange(m)[None, :],
    )
    uniq, first = np.unique(d, return_index=True)
    grep = np.asarray(first, dtype=np.int32)
    gof = np.searchsorted(uniq, d).astype(np.int32)

    def run(be):
        def _inner():
            sq = np.zeros((n_boot, m))
            g12 = np.zeros((n_boot, m))
            pred = np.zeros((n_boot, m))
            flags = np.zeros(n_boot, dtype=np.int8)
            be.bootstrap_pass(
                X, d, xbeta, a_gen, zv, ze, ADJUSTED, grep, gof, 150, 1e-8,
                200, 60.0, True, y, y, sq, g12, pred, flags, 0, n_boot,
            )
        return _inner

    compiled = get_backend("compiled")
    t_py = _best_of(run(_pykernels), repeats, best_of)
    t_c = _best_of(run(compiled), repeats, best_of)
    print(f"  m={m:<4d} p={p}   python {t_py * 1e3:8.1f} ms   "
          f"compiled {t_c * 1e3:8.1f} ms   {t_py / t_c:6.1f}x")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20,
                    help="calls per timing sample (default 20)")
    ap.add_argument("--best-of", type=int, default=3,
                    help="timing samples per case; the best is reported")
    args = ap.parse_args()
    if args.repeats < 1 or args.best_of < 1:
        ap.error("--repeats and --best-of must be positive")
    bench_fit(args.repeats, args.best_of)
    bench_bootstrap(max(1, args.repeats // 10), args.best_of)


if __name__ == "__main__":
    main()
