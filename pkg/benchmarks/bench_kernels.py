#!/usr/bin/env python3
"""Time the numba and numpy kernel backends on identical workloads.

Run from the repo root after installing the package:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --entries 16384 --repeats 20

The first numba call per kernel includes JIT compilation; it happens during
the untimed warmup, so the numbers below reflect steady-state throughput.
"""

import argparse
import time

import numpy as np

from wqimpute.kernels import get_backend
from wqimpute.model import init_factor_model, init_nlr_model


def time_call(fn, args, repeats):
    fn(*args)  # warmup, also compiles the jitted variant
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        samples.append(time.perf_counter() - t0)
    arr = np.asarray(samples)
    return float(arr.mean()), float(arr.std())


def build_workload(dims, rank, n_entries, seed):
    rng = np.random.default_rng(seed)
    factors = init_factor_model(dims, rank, rng)
    model = init_nlr_model(dims, rank, 3, (16, 8, 4), rng)
    for p in model.params().values():
        p += rng.normal(0.0, 0.2, p.shape)
    ii = rng.integers(0, dims[0], n_entries).astype(np.intp)
    jj = rng.integers(0, dims[1], n_entries).astype(np.intp)
    kk = rng.integers(0, dims[2], n_entries).astype(np.intp)
    x = rng.uniform(0.05, 0.95, n_entries)
    cp_args = (factors.S, factors.U, factors.V, ii, jj, kk)
    nlr_args = model.kernel_args() + (ii, jj, kk)
    return {
        "cp_predict": cp_args,
        "cp_residual_grads": cp_args + (x,),
        "nlr_predict": nlr_args,
        "nlr_residual_grads": nlr_args + (x,),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dims", default="40,12,96",
                        help="stations,parameters,slots (default 40,12,96)")
    parser.add_argument("--rank", type=int, default=10)
    parser.add_argument("--entries", type=int, default=4096,
                        help="batch size per kernel call")
    parser.add_argument("--repeats", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    dims = tuple(int(p) for p in args.dims.split(","))
    workload = build_workload(dims, args.rank, args.entries, args.seed)

    print(f"dims {dims}, rank {args.rank}, batch {args.entries}, "
          f"{args.repeats} timed repeats per kernel")
    print(f"{'kernel':<22}{'backend':<9}{'mean ms':>10}{'std ms':>10}")
    for name, call_args in workload.items():
        means = {}
        for backend in ("numpy", "numba"):
            impl = getattr(get_backend(backend), name)
            mean, std = time_call(impl, call_args, args.repeats)
            means[backend] = mean
            print(f"{name:<22}{backend:<9}{mean * 1e3:>10.3f}{std * 1e3:>10.3f}")
        print(f"{'':<22}numba speedup {means['numpy'] / means['numba']:.2f}x")


if __name__ == "__main__":
    main()
