"""Time the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from kvnsim.kernels import _fallback

try:
    from kvnsim.kernels import _core
except ImportError:
    _core = None


def cases(rng):
    v = rng.normal(size=(128, 128))
    pts = rng.uniform(-6, 6, size=(2, 20000))
    yield "periodic_interp 128^2 x 2e4", "periodic_interp", (v, [-4.0, -4.0], [8 / 128, 8 / 128], pts)
    m = np.array([0, 1, 2, 4, 8, 16, 32, 50])
    shots = np.full(m.size, 100)
    hits = rng.integers(0, 101, size=m.size)
    theta = np.linspace(0, np.pi / 2, 20001)
    yield "ae_loglik 8 levels x 2e4 angles", "ae_loglik", (theta, m, hits, shots)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':34s} {'numpy [ms]':>11s} {'cython [ms]':>12s} {'speedup':>8s}")
    for label, fn, a in cases(rng):
        t_py = min(timeit.repeat(lambda: getattr(_fallback, fn)(*a), number=1, repeat=args.repeat))
        if _core is None:
            print(f"{label:34s} {1e3 * t_py:11.2f} {'n/a':>12s} {'':>8s}")
            continue
        t_c = min(timeit.repeat(lambda: getattr(_core, fn)(*a), number=1, repeat=args.repeat))
        assert np.allclose(getattr(_core, fn)(*a), getattr(_fallback, fn)(*a))
        print(f"{label:34s} {1e3 * t_py:11.2f} {1e3 * t_c:12.2f} {t_py / t_c:7.1f}x")


if __name__ == "__main__":
    main()
