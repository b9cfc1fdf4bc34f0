"""Benchmark the compiled kernel lane against the pure-NumPy fallback.

Runs the hot kernels at training-realistic shapes and prints one table row
per (kernel, shape) with both lanes' best-of-rounds time. Run from the
repository root:

    python benchmarks/bench_kernels.py [--rounds 6] [--reps 8]
"""

import argparse
import time

import numpy as np

from triplethash.kernels import _core as cy
from triplethash.kernels import pure as py


def best_time(fn, reps, rounds):
    best = float("inf")
    for _ in range(rounds):
        t0 = time.perf_counter()
        for _ in range(reps):
            fn()
        best = min(best, (time.perf_counter() - t0) / reps)
    return best


def same_pads(h, w, k, s):
    oh, ow = -(-h // s), -(-w // s)
    pt = max((oh - 1) * s + k - h, 0) // 2
    pl = max((ow - 1) * s + k - w, 0) // 2
    return pt, pl, oh, ow


CONV_SHAPES = [
    ("conv 10x1x64x64 -> 16, s2", (10, 1, 64, 64), 16, 2),
    ("conv 10x16x32x32 -> 16, s1", (10, 16, 32, 32), 16, 1),
    ("conv 10x16x16x16 -> 16, s2", (10, 16, 16, 16), 16, 2),
]

POOL_SHAPES = [
    ("maxpool 10x16x32x32, s2", (10, 16, 32, 32), 2),
    ("maxpool 10x16x16x16, s1", (10, 16, 16, 16), 1),
    ("avgpool 10x16x16x16, s2", (10, 16, 16, 16), 2),
]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--reps", type=int, default=8)
    ap.add_argument("--rounds", type=int, default=6)
    args = ap.parse_args()
    rng = np.random.default_rng(0)

    print(f"{'kernel':34s} {'compiled':>12s} {'pure':>12s} {'speedup':>8s}")
    rows = []

    for name, xshape, f, s in CONV_SHAPES:
        n, c, h, w = xshape
        x = rng.normal(size=xshape)
        wt = rng.normal(size=(f, c, 3, 3))
        pt, pl, oh, ow = same_pads(h, w, 3, s)
        g = rng.normal(size=(n, f, oh, ow))
        for suffix, cy_fn, py_fn in [
            (" fwd",
             lambda: cy.conv2d_forward(x, wt, s, pt, pl, oh, ow),
             lambda: py.conv2d_forward(x, wt, s, pt, pl, oh, ow)),
            (" bwd",
             lambda: cy.conv2d_backward(x, wt, g, s, pt, pl),
             lambda: py.conv2d_backward(x, wt, g, s, pt, pl)),
        ]:
            tc = best_time(cy_fn, args.reps, args.rounds)
            tp = best_time(py_fn, args.reps, args.rounds)
            rows.append((name + suffix, tc, tp))

    for name, xshape, s in POOL_SHAPES:
        n, c, h, w = xshape
        x = rng.normal(size=xshape)
        pt, pl, oh, ow = same_pads(h, w, 3, s)
        if name.startswith("maxpool"):
            tc = best_time(lambda: cy.maxpool2d_forward(x, 3, s, pt, pl, oh, ow),
                           args.reps, args.rounds)
            tp = best_time(lambda: py.maxpool2d_forward(x, 3, s, pt, pl, oh, ow),
                           args.reps, args.rounds)
        else:
            tc = best_time(lambda: cy.avgpool2d_forward(x, 3, s, pt, pl, oh, ow),
                           args.reps, args.rounds)
            tp = best_time(lambda: py.avgpool2d_forward(x, 3, s, pt, pl, oh, ow),
                           args.reps, args.rounds)
        rows.append((name, tc, tp))

    codes = rng.integers(0, 256, size=(100_000, 5), dtype=np.uint8)
    q = rng.integers(0, 256, size=5, dtype=np.uint8)
    tc = best_time(lambda: cy.hamming_distances(codes, q), args.reps, args.rounds)
    tp = best_time(lambda: py.hamming_distances(codes, q), args.reps, args.rounds)
    rows.append(("hamming scan 100k x 36-bit", tc, tp))

    for name, tc, tp in rows:
        print(f"{name:34s} {tc * 1e3:9.2f} ms {tp * 1e3:9.2f} ms {tp / tc:7.2f}x")


if __name__ == "__main__":
    main()
