"""Compare the compiled and pure-Python kernels on stable-set blocks and tableau pivots.

    python benchmarks/bench_kernels.py [--nodes 20] [--reps 20]
"""
import argparse
import time

import numpy as np

from decompdual import _kernels
from decompdual.instances import GenConfig, gen_stab


def _time(fn, reps):
    best = np.inf
    for _ in range(reps):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def bench_enum(nodes, reps, backends):
    inst = gen_stab(GenConfig(blocks=1, nodesPerBlock=nodes, sharedVars=0, seed=3))
    blk = inst.blocks[0]
    packed = _kernels.prepare_enum(blk.cvec, blk.Ax, blk.b)
    out = {}
    for name in backends:
        res = _kernels.enum_minimize(packed, 1e-9, name)
        out[name] = (_time(lambda: _kernels.enum_minimize(packed, 1e-9, name), reps), res)
    return out


def bench_pivot(size, reps, backends):
    rng = np.random.default_rng(0)
    base = rng.normal(size=(size, 2 * size)) + 5.0
    out = {}
    for name in backends:
        mod = _kernels.backend_module(name)

        def run():
            T = base.copy()
            for k in range(size - 1):
                mod.pivot(T, k, k)
        out[name] = _time(run, reps)
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--nodes", type=int, default=20)
    ap.add_argument("--size", type=int, default=60)
    ap.add_argument("--reps", type=int, default=10)
    args = ap.parse_args()
    backends = ["python"]
    try:
        _kernels.backend_module("cython")
        backends.insert(0, "cython")
    except ImportError:
        print("compiled kernels not built; timing the fallback only")
    print(f"active backend: {_kernels.BACKEND}")
    enum = bench_enum(args.nodes, args.reps, backends)
    for name, (secs, res) in enum.items():
        print(f"enum  {name:<7} {1e3 * secs:9.3f} ms  value={res[1]:.1f} nodes={res[3]}")
    if len(enum) == 2:
        a, b = (enum[n][1] for n in backends)
        same = a[0] == b[0] and a[1] == b[1] and np.array_equal(a[2], b[2])
        print(f"enum  results identical: {same}")
    piv = bench_pivot(args.size, args.reps, backends)
    for name, secs in piv.items():
        print(f"pivot {name:<7} {1e3 * secs:9.3f} ms  ({args.size - 1} pivots on {args.size}x{2 * args.size})")


if __name__ == "__main__":
    main()
