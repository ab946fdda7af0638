"""Compiled versus pure-Python kernel throughput.

    python3 benchmarks/bench_kernels.py [--tags 4000000] [--repeat 3]

Reports tags per second for each kernel and checks that both backends give
identical results.
"""

import argparse
import time

import numpy as np

from nvpath import _pykernels
from nvpath._backend import compiled

try:
    from nvpath import _kernels
except ImportError:  # extension not built
    _kernels = None


def poisson_times(rng, rate, duration_ps):
    n = rng.poisson(rate * duration_ps * 1e-12)
    return np.sort(rng.integers(0, duration_ps, size=n, dtype=np.int64))


def timed(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_g2(mod, a, b, repeat):
    def run():
        hist = np.zeros(400, np.int64)
        mod.g2_hist(a, b, -200_000, 1000, -200_000, 200_000, hist)
        return hist
    return timed(run, repeat)


def bench_windows(mod, a, b, repeat):
    wa, wb = a // 10_000, b // 10_000
    return timed(lambda: mod.classify_windows(wa, wb), repeat)


def bench_dead_time(mod, times, chans, repeat):
    return timed(lambda: np.asarray(mod.dead_time_mask(times, chans, 24_000)), repeat)


def bench_kmc(mod, n_draws, repeat, seed=0):
    """Three-level CW trajectory at the reference rates (per ps)."""
    rng = np.random.default_rng(seed)
    exps = rng.standard_exponential(n_draws)
    unis = rng.random(n_draws)
    rates = (1.8317e-7, 3.1415e-5, 3.4199e-6, 1.0005e-7)

    def run():
        out = np.empty(n_draws, np.int64)
        res = mod.kmc_cw(exps, unis, *rates, 1, 0, 0.0, 10**15, out)
        return out[: res[0]].copy()
    return timed(run, repeat)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tags", type=int, default=4_000_000, help="tags per channel")
    ap.add_argument("--rate", type=float, default=1e5, help="counts/s per channel")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    duration = int(args.tags / args.rate * 1e12)
    a = poisson_times(rng, args.rate, duration)
    b = poisson_times(rng, args.rate, duration)
    n = len(a) + len(b)
    times = np.concatenate([a, b])
    order = np.argsort(times, kind="stable")
    times = times[order]
    chans = np.concatenate([np.zeros(len(a), np.uint8), np.ones(len(b), np.uint8)])[order]

    backends = [("python", _pykernels)]
    if _kernels is not None:
        backends.insert(0, ("cython", _kernels))
    print(f"{n} tags, compiled extension {'available' if compiled else 'missing'}")
    print(f"{'kernel':<18}{'backend':<10}{'seconds':>10}{'Mtags/s':>10}")
    results = {}
    for name, fn, argv in (
        ("g2_hist", bench_g2, (a, b)),
        ("classify_windows", bench_windows, (a, b)),
        ("dead_time_mask", bench_dead_time, (times, chans)),
    ):
        for label, mod in backends:
            sec, out = fn(mod, *argv, args.repeat)
            results[(name, label)] = out
            print(f"{name:<18}{label:<10}{sec:>10.4f}{n / sec / 1e6:>10.2f}")
        if len(backends) == 2:
            x, y = results[(name, "cython")], results[(name, "python")]
            same = x == y if isinstance(x, tuple) else np.array_equal(x, y)
            print(f"{'':<18}identical: {same}")

    draws = max(args.tags // 10, 10_000)
    outs = {}
    for label, mod in backends:
        sec, out = bench_kmc(mod, draws, 1)
        outs[label] = out
        print(f"{'kmc_cw':<18}{label:<10}{sec:>10.4f}{len(out) / sec / 1e6:>10.2f}  (Mphotons/s)")
    if len(outs) == 2:
        print(f"{'':<18}identical: {np.array_equal(outs['cython'], outs['python'])}")


if __name__ == "__main__":
    main()
