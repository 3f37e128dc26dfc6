"""Time the per-trial kernels under both backends.

    python benchmarks/bench_kernels.py --M 128 --K 10 --N 3 --trials 200
"""
import argparse
import time

import numpy as np

from mumimo import SystemConfig, build_scenario, kernels, link_statistics
from mumimo.se import drop_tensors, sample_block


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--M", type=int, default=128)
    ap.add_argument("--K", type=int, default=10)
    ap.add_argument("--N", type=int, default=3)
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    sc = build_scenario(SystemConfig(args.M, args.K, args.N), seed=0)
    st = link_statistics(sc)
    H, Hh = sample_block(drop_tensors(sc, st), np.random.default_rng(0), args.trials)
    q = np.sqrt((st.lam * st.p).ravel())
    base = st.Z() + np.eye(args.M)
    lam = np.sqrt(st.lam).ravel()
    ws = np.full(sc.config.B, 1.0 / np.sqrt(args.M))
    cols = np.real(np.stack([np.diag(c) for c in st.column_covariances()]))
    shift = np.real(np.diag(st.Z())) / args.M

    cases = {
        "uplink_rates": lambda b: kernels.uplink_rates(Hh, q, base, args.N, backend=b),
        "downlink_moments": lambda b: kernels.downlink_moments(H, Hh, lam, ws, args.N, backend=b),
        "fixed_point_diag": lambda b: kernels.fixed_point_diag(cols, shift, 1.0 / args.M, args.M, backend=b),
    }
    backends = ["numpy"] + (["numba"] if kernels.BACKEND == "numba" else [])
    print(f"M={args.M} K={args.K} N={args.N} trials={args.trials}")
    print(f"{'kernel':<18}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, fn in cases.items():
        for b in backends:
            fn(b)  # compile / warm caches
        t = [best_of(lambda: fn(b), args.repeat) for b in backends]
        line = f"{name:<18}" + "".join(f"{x * 1e3:>10.1f}ms" for x in t)
        if len(t) > 1:
            line += f"{t[0] / t[1]:>11.2f}x"
        print(line)


if __name__ == "__main__":
    main()
