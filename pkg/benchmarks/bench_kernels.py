"""Compare the compiled and pure-numpy kernel backends.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Prints one CSV row per (kernel, shape, backend) with the median wall time and
the speedup of the compiled backend. Both backends must agree to 1e-12
(FFT butterflies may differ in the last ulp); the script checks that before timing.
"""
from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from stsg import kernels


def _median_time(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return statistics.median(times)


def cases(rng):
    for rows, n in ((64, 64), (512, 32), (32, 256)):
        z = rng.standard_normal((rows, n)) + 1j * rng.standard_normal((rows, n))
        yield f"fft {rows}x{n}", lambda b, z=z: kernels.fft_last_axis(z, backend=b)
    for n, c, s in ((4, 16, 64), (4, 64, 16), (8, 32, 32)):
        x = rng.standard_normal((n, c, s, s)).astype(np.float32)
        yield f"im2col {n}x{c}x{s}x{s} k3", lambda b, x=x: kernels.im2col(x, 3, 3, 1, 1, backend=b)[0]
        cols, (ho, wo) = kernels.im2col(x, 3, 3, 2, 1)
        yield (f"col2im {n}x{c}x{s}x{s} k3 s2",
               lambda b, x=x, cols=cols, ho=ho, wo=wo: kernels.col2im(cols, x.shape, 3, 3, 2, 1, ho, wo, backend=b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if "compiled" not in kernels.BACKENDS:
        print("compiled backend unavailable; build it with `python setup.py build_ext --inplace`")
        return 1
    rng = np.random.default_rng(0)
    print("kernel,backend,median_ms,speedup")
    for name, fn in cases(rng):
        np.testing.assert_allclose(fn("compiled"), fn("python"), rtol=0, atol=1e-12)
        t_c = _median_time(lambda: fn("compiled"), args.repeat)
        t_p = _median_time(lambda: fn("python"), args.repeat)
        print(f"{name},python,{t_p * 1e3:.3f},1.00")
        print(f"{name},compiled,{t_c * 1e3:.3f},{t_p / t_c:.2f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
