"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--size 640] [--repeat 5]

Prints best-of-N wall time per kernel and backend, and checks that both
backends return identical results on every input they are timed on.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from polypdet import kernels
from polypdet.augmentation import Rotate, Scale, compose_ops


def nms_inputs(n: int, rng: np.random.Generator):
    xy = rng.uniform(0, 600, (n, 2))
    wh = rng.uniform(10, 120, (n, 2))
    boxes = np.ascontiguousarray(np.concatenate([xy, xy + wh], axis=1))
    classes = np.zeros(n, dtype=np.int64)
    order = np.argsort(-rng.uniform(size=n), kind="stable").astype(np.int64)
    return boxes, classes, order, 0.45


def best(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--size", type=int, default=640, help="square image side for the warp")
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    backends = {"python": kernels.python_backend}
    if kernels.compiled_backend is not None:
        backends["cython"] = kernels.compiled_backend
    else:
        print("compiled backend unavailable; timing the numpy fallback only")

    rng = np.random.default_rng(args.seed)
    src = rng.integers(0, 256, (args.size, args.size, 3), dtype=np.uint8)
    inv = np.array(compose_ops([Rotate(23.0), Scale(0.1)], args.size, args.size).inverse().coefficients)
    fill = np.zeros(3, dtype=np.uint8)

    cases = {
        f"warp nearest {args.size}px": lambda m: m.warp_affine(src, inv, False, fill),
        f"warp bilinear {args.size}px": lambda m: m.warp_affine(src, inv, True, fill),
    }
    for n in (1_000, 5_000):
        args_nms = nms_inputs(n, rng)
        cases[f"nms {n} boxes"] = lambda m, a=args_nms: m.greedy_nms(*a)

    print(f"{'kernel':<24}" + "".join(f"{b:>12}" for b in backends) + ("    speedup" if len(backends) > 1 else ""))
    for name, fn in cases.items():
        results = {b: fn(m) for b, m in backends.items()}
        ref = results["python"]
        for b, r in results.items():
            if not np.array_equal(np.asarray(r), np.asarray(ref)):
                raise SystemExit(f"{name}: {b} output differs from the numpy fallback")
        times = {b: best(lambda m=m: fn(m), args.repeat) for b, m in backends.items()}
        row = f"{name:<24}" + "".join(f"{times[b] * 1e3:>10.2f}ms" for b in backends)
        if "cython" in times:
            row += f"  {times['python'] / times['cython']:>8.1f}x"
        print(row)


if __name__ == "__main__":
    main()
