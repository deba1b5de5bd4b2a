"""Time the numba and numpy versions of the pointwise kernels and one solver step.

    python3 benchmarks/bench_kernels.py [--n 64] [--repeat 20]

The step timing uses whichever backend ``VORTASYM_BACKEND`` selects; run the
script twice (once with ``VORTASYM_BACKEND=numpy``) to compare end to end.
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from vortasym import _backend
from vortasym import evolution as ev
from vortasym import field_core as fc
from vortasym import generators


def _time(fn, repeat):
    fn()  # warm-up (numba compiles here)
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--repeat", type=int, default=20)
    args = p.parse_args(argv)

    grid = fc.Grid3(args.n, 12.0)
    w = generators.random_solenoidal(grid, 0)
    a = w.data
    b = np.roll(a, 3, axis=1)
    w_hat = fc.forward(a)
    out_r = np.empty_like(a)
    out_c = np.empty_like(w_hat)
    weight = grid.weight_sq(4.0)

    results = {}
    for name in _backend.available_backends():
        cross, bs_hat, curl_hat, wsum = _backend.kernels(name)
        results[name] = {
            "cross": _time(lambda: cross(a, b, out_r), args.repeat),
            "biot_savart_hat": _time(lambda: bs_hat(w_hat, grid.kx, grid.kx, grid.kz, grid.inv_k2, out_c), args.repeat),
            "curl_hat_masked": _time(lambda: curl_hat(w_hat, grid.kx, grid.kx, grid.kz, grid.dealias_mask, out_c), args.repeat),
            "weighted_sq_sum": _time(lambda: wsum(a, weight), args.repeat),
        }

    names = list(results)
    print(f"N = {args.n}, median of {args.repeat} calls, milliseconds")
    print(f"{'kernel':18}" + "".join(f"{n:>10}" for n in names) + ("   numpy/numba" if len(names) == 2 else ""))
    for kernel in results[names[0]]:
        row = [results[n][kernel] * 1e3 for n in names]
        line = f"{kernel:18}" + "".join(f"{x:10.3f}" for x in row)
        if len(names) == 2:
            line += f"   {results['numpy'][kernel] / results['numba'][kernel]:10.2f}"
        print(line)

    stepper = ev.StrangStepper(grid, 1e-3)
    state = (w * (0.05 / fc.weighted_norm(w, 4.0))).data
    step = _time(lambda: stepper.advance(state, 1), max(3, args.repeat // 4))
    print(f"one Strang step ({_backend.BACKEND} backend): {step * 1e3:.1f} ms")


if __name__ == "__main__":
    main()
