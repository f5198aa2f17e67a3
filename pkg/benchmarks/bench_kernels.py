"""Timing of the compiled kernels against the numpy fallback.

Run from the repository root after building the extension::

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel is timed on the compiled and the fallback implementation with
identical inputs, and the outputs are checked to agree before timing.
"""
import argparse
import timeit

import numpy as np

from proplab import _pykernels

try:
    from proplab import kernels as _selected
    from proplab import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def bispectrum_case(nseg, n, rng):
    shape = (nseg, n)
    F, G, H = (rng.normal(size=shape) + 1j * rng.normal(size=shape) for _ in range(3))
    nb = n // 2 + 1

    def py():
        return _pykernels.accumulate_bispectrum(F, G, H, np.zeros((n, nb), complex))

    def cy():
        return _selected.accumulate_bispectrum(F, G, H, np.zeros((n, nb), complex))

    return f"accumulate_bispectrum nseg={nseg} n={n}", py, cy


def convolve_case(T, K, rng, density=1.0):
    x = rng.choice([-1.0, 1.0], T) * (rng.random(T) < density)
    k = rng.normal(size=K)

    def py():
        return _pykernels.causal_convolve(x, k)

    def cy():
        return _selected.causal_convolve(x, k)

    return f"causal_convolve T={T} K={K} nonzero={density:.0%}", py, cy


def best_of(fn, repeat):
    number = 1
    while timeit.timeit(fn, number=number) < 0.2 and number < 1000:
        number *= 2
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not available; nothing to compare")
        return 1
    rng = np.random.default_rng(0)
    cases = [
        bispectrum_case(20, 64, rng),
        bispectrum_case(40, 128, rng),
        bispectrum_case(20, 256, rng),
        convolve_case(50_000, 64, rng),
        convolve_case(50_000, 500, rng),
        convolve_case(50_000, 500, rng, 0.4),
        convolve_case(50_000, 500, rng, 0.1),
        convolve_case(200_000, 1000, rng),
        convolve_case(200_000, 1000, rng, 0.4),
    ]
    print(f"{'case':44s} {'numpy [ms]':>11s} {'cython [ms]':>12s} {'speedup':>8s}")
    for name, py, cy in cases:
        np.testing.assert_allclose(cy(), py(), rtol=1e-9, atol=1e-9)
        tp, tc = best_of(py, args.repeat), best_of(cy, args.repeat)
        print(f"{name:44s} {1e3 * tp:11.3f} {1e3 * tc:12.3f} {tp / tc:8.2f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
