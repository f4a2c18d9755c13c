"""Compare the compiled slot kernels with the pure-Python fallback.

    python benchmarks/bench_kernels.py [--slots 32768] [--repeat 20]
"""
import argparse
import importlib
import timeit

import numpy as np

Q = 786433


def load(name):
    try:
        return importlib.import_module(f"pcm.{name}")
    except ImportError:
        return None


def cases(n, rng):
    a = rng.integers(0, Q, n, dtype=np.uint64)
    b = rng.integers(0, Q, n, dtype=np.uint64)
    roots = rng.integers(0, Q, 128, dtype=np.uint64)
    return {
        "add": lambda k: k.add(a, b, Q),
        "mul": lambda k: k.mul(a, b, Q),
        "mul_scalar": lambda k: k.mul_scalar(a, 12345, Q),
        "power(q-1)": lambda k: k.power(a[:4096], Q - 1, Q),
        "product": lambda k: k.product(a, Q),
        "poly_from_roots(128)": lambda k: k.poly_from_roots(roots, Q),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--slots", type=int, default=32768)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    impls = {"cython": load("_kernels"), "python": load("_kernels_py")}
    if impls["cython"] is None:
        print("compiled kernels not built; only the fallback is timed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':24s} {'cython us':>12s} {'python us':>12s} {'speedup':>8s}")
    for name, fn in cases(args.slots, rng).items():
        times = {}
        for impl, mod in impls.items():
            if mod is None:
                continue
            times[impl] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)) * 1e6
        if "cython" in times:
            # both implementations must agree before timing means anything
            assert np.array_equal(np.asarray(fn(impls["cython"])), np.asarray(fn(impls["python"])))
        c, p = times.get("cython"), times["python"]
        speed = f"{p / c:8.1f}" if c else "       -"
        print(f"{name:24s} {c or float('nan'):12.1f} {p:12.1f} {speed}")


if __name__ == "__main__":
    main()
