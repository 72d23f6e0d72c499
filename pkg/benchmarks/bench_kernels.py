"""Compare the compiled kernels against the pure-Python fallback.

Runs both backends on identical inputs, checks the outputs are
bit-identical, and prints a timing table.  The fallback exists as a
correctness reference and import-time safety net, not as a fast path,
so expect large ratios.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from nestedsurf._kernels import pyfallback

try:
    from nestedsurf._kernels import _compiled
except ImportError:
    raise SystemExit("compiled extension not built; run pip install -e .")


def best_of(repeat, fn, *args):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - start)
    return min(times), out


def bench_edt(repeat):
    rng = np.random.Generator(np.random.Philox(90001))
    mask = rng.random((128, 128, 128)) < 0.5
    spacing = (1.0, 0.75, 1.25)
    seed = np.where(mask, 0.0, np.inf)

    def run(impl):
        work = seed.copy()
        impl.edt_squared(work, spacing)
        return work

    t_c, out_c = best_of(repeat, run, _compiled)
    t_p, out_p = best_of(repeat, run, pyfallback)
    assert np.array_equal(out_c, out_p)
    return "edt_squared 128^3", t_c, t_p


def bench_marching(repeat):
    axes = [np.arange(128, dtype=np.float64) - 63.5] * 3
    x, y, z = np.meshgrid(*axes, indexing="ij")
    w = np.sqrt(x * x + y * y + z * z) - 40.0
    spacing = (1.0, 1.0, 1.0)
    t_c, out_c = best_of(repeat, _compiled.marching_cells, w, spacing)
    t_p, out_p = best_of(repeat, pyfallback.marching_cells, w, spacing)
    assert np.array_equal(out_c, out_p)
    return f"marching_cells 128^3 ({len(out_c)} tris)", t_c, t_p


def bench_sweep(repeat):
    dims = (64, 64, 64)
    axes = [np.arange(d, dtype=np.float64) for d in dims]
    x, y, z = np.meshgrid(*axes, indexing="ij")
    radius = 400.0
    exact = np.sqrt((x - 31.5) ** 2 + (y - 31.5) ** 2
                    + (z - (5.0 - radius)) ** 2) - radius
    frozen = (np.abs(exact) <= 1.5).astype(np.uint8)
    spacing = (1.0, 1.0, 1.0)

    def run(impl):
        u = np.where(frozen == 1, np.abs(exact), np.inf)
        impl.fast_sweep(u, frozen, spacing)
        return u

    t_c, out_c = best_of(repeat, run, _compiled)
    t_p, out_p = best_of(repeat, run, pyfallback)
    assert np.array_equal(out_c, out_p)
    return "fast_sweep 64^3", t_c, t_p


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=3,
                        help="timing repetitions, best is reported")
    args = parser.parse_args()

    rows = [bench(args.repeat)
            for bench in (bench_edt, bench_marching, bench_sweep)]
    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'compiled':>10}  {'python':>10}  "
          f"{'speedup':>8}")
    for name, t_c, t_p in rows:
        print(f"{name:<{width}}  {t_c * 1e3:>8.1f}ms  {t_p * 1e3:>8.1f}ms  "
              f"{t_p / t_c:>7.1f}x")
    print("outputs bit-identical across backends")


if __name__ == "__main__":
    main()
