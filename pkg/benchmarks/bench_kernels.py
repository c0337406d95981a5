"""Time the compiled kernels against their numpy / pure-Python fallbacks.

    python benchmarks/bench_kernels.py [--n 5000] [--z 10] [--repeat 5]
"""

import argparse
import time

import numpy as np

from cascadenet import _kernels
from cascadenet.cascade_mc import realize_network
from cascadenet.harness.experiments import exp1_ensemble
from cascadenet.netgen import poisson_skeleton


def best_of(fn, repeat):
    fn()  # warm-up (numba compilation, caches)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=5000, help="nodes in the cascade network")
    ap.add_argument("--z", type=float, default=10.0, help="mean degree")
    ap.add_argument("--lam", type=float, default=0.6, help="stress transmission parameter")
    ap.add_argument("--pa-n", type=int, default=1000, help="preferential attachment target size")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    g = poisson_skeleton(args.n, args.z, rng)
    real = realize_network(g, exp1_ensemble(), rng)
    cargs = (real.delta, real.sigma, g.src, g.dst, real.omega, args.lam, 4 * args.n + 4)
    steps = _kernels._cascade_numba(*cargs)[6]

    u = rng.random((20 * args.pa_n, 3))
    pargs = (args.pa_n, 0.169, 0.169, 4.417, 4.417, u, 20 * args.pa_n)

    rows = [
        (f"cascade N={args.n} z={args.z:g} ({steps} steps)", lambda: _kernels._cascade_numba(*cargs),
         lambda: _kernels._cascade_numpy(*cargs)),
        (f"pa growth n={args.pa_n}", lambda: _kernels._pa_numba(*pargs), lambda: _kernels._pa_loop(*pargs)),
    ]
    print(f"{'kernel':<40} {'numba [ms]':>12} {'fallback [ms]':>14} {'ratio':>8}")
    for name, fast, slow in rows:
        a, b = best_of(fast, args.repeat), best_of(slow, args.repeat)
        print(f"{name:<40} {1e3 * a:>12.3f} {1e3 * b:>14.3f} {b / a:>8.1f}")


if __name__ == "__main__":
    main()
