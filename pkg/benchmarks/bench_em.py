"""Compare the compiled and numpy EM kernels.

    python3 benchmarks/bench_em.py [--n 1024] [--m 16] [--repeat 20]
"""
import argparse
import timeit

import numpy as np

from mmtad import _em_py, em_kernels


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=1024, help="vectors per frame")
    ap.add_argument("--m", type=int, default=16, help="mixture components")
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    pts = np.ascontiguousarray(rng.normal(size=(args.n, 2)) * 3)
    means = np.ascontiguousarray(rng.normal(size=(args.m, 2)) * 3)
    covs = np.ascontiguousarray(np.tile(np.eye(2), (args.m, 1, 1)))
    weights = np.full(args.m, 1.0 / args.m)
    resp, _ = _em_py.estep(pts, means, covs, weights)

    backends = {"python": _em_py}
    if em_kernels.BACKEND == "cython":
        from mmtad import _em_core
        backends["cython"] = _em_core
    else:
        print("compiled kernels unavailable; timing the numpy fallback only")

    print(f"N={args.n} M={args.m}, best of {args.repeat} (ms)")
    print(f"{'backend':<8}{'estep':>10}{'mstep':>10}")
    for name, mod in backends.items():
        e = min(timeit.repeat(lambda: mod.estep(pts, means, covs, weights), number=1, repeat=args.repeat))
        m = min(timeit.repeat(lambda: mod.mstep(pts, resp), number=1, repeat=args.repeat))
        print(f"{name:<8}{e * 1e3:>10.3f}{m * 1e3:>10.3f}")


if __name__ == "__main__":
    main()
