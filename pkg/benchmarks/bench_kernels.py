"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Each kernel runs on the same inputs under both backends; the script checks
the outputs agree before printing timings.
"""

import argparse
import timeit

import numpy as np

from aesplan.geometry import rot_z
from aesplan.kernels import available_backends


def _inputs(rng):
    cloud = rng.uniform(-2, 2, (3000, 3))
    queries = cloud[rng.integers(0, len(cloud), 2000)] + rng.normal(0, 0.01, (2000, 3))
    q = rng.uniform([-1, 0, -2.5, -2.5], [1, 1, -0.5, 0.5], (2000, 4))
    rot = np.stack([rot_z(a) for a in rng.uniform(-np.pi, np.pi, 3)])
    centers = rng.uniform(-3, 3, (3, 3))
    half = rng.uniform(0.2, 1.0, (3, 3))
    pts = rng.uniform(-4, 4, (200, 12, 3))
    elev = rng.uniform(0, 1.0, (40, 40))
    return cloud, queries, q, (pts, rot, centers, half), elev


def cases(mod, data):
    cloud, queries, q, (pts, rot, centers, half), elev = data
    index = mod.NeighborIndex(cloud, 0.1)
    floor = np.zeros_like(elev)
    fixed = np.zeros(elev.shape, dtype=bool)
    return {
        "nearest_neighbour": lambda: index.query(queries),
        "arm_points": lambda: mod.arm_points(q, 1.0, 2.0, 1.5, 0.5),
        "box_penalty": lambda: mod.box_penalty(pts, rot, centers, half, 0.15),
        "settle": lambda: mod.settle(elev.copy(), floor, fixed, 0.25 * np.tan(np.radians(35)), 200),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-9, atol=1e-12)


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = available_backends()
    data = _inputs(np.random.default_rng(0))
    runs = {name: cases(mod, data) for name, mod in backends.items()}
    if "cython" not in runs:
        print("compiled extension not built; timing the fallback only")
    print(f"{'kernel':<20}" + "".join(f"{b + ' ms':>14}" for b in runs) + f"{'speedup':>10}")
    for kernel in runs["python"]:
        outs = {b: c[kernel]() for b, c in runs.items()}
        if "cython" in outs and not _same(outs["python"], outs["cython"]):
            raise SystemExit(f"{kernel}: backends disagree")
        times = {b: min(timeit.repeat(c[kernel], number=1, repeat=args.repeat)) * 1e3 for b, c in runs.items()}
        speed = f"{times['python'] / times['cython']:>9.1f}x" if "cython" in times else ""
        print(f"{kernel:<20}" + "".join(f"{t:>14.3f}" for t in times.values()) + speed)


if __name__ == "__main__":
    main()
