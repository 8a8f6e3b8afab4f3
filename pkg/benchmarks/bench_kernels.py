"""Compare the compiled and numpy kernel backends.

Usage: python benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from lego_fusion import kernels

CASES = [
    # (label, N, P, Q, feature dim)
    ("bag", 32, 2, 3, 64),
    ("bag, high powers", 32, 4, 7, 64),
    ("large graph", 256, 2, 3, 128),
]


def bench(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    backends = kernels.available_backends()
    print(f"{'case':18s} {'kernel':10s} " + " ".join(f"{b:>12s}" for b in backends))
    for label, n, p, q, d in CASES:
        pa = rng.uniform(0, 1, (p + 1, n, n))
        pb = rng.uniform(0, 1, (q + 1, n, n))
        w = rng.standard_normal((p + 1, q + 1))
        up = rng.standard_normal((n, n))
        x = rng.standard_normal((n, d))
        jobs = {
            "fuse": lambda: kernels.fuse(pa, pb, w),
            "fuse_grad": lambda: kernels.fuse_grad(pa, pb, up),
            "pairwise": lambda: kernels.pairwise(x),
        }
        for name, job in jobs.items():
            times = []
            for b in backends:
                kernels.set_backend(b)
                times.append(bench(job, args.repeat))
            print(f"{label:18s} {name:10s} " + " ".join(f"{t * 1e6:10.1f}us" for t in times))
    kernels.set_backend(backends[0])


if __name__ == "__main__":
    main()
