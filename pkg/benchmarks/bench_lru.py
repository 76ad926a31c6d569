"""Compiled vs pure-Python LRU replay kernel.

Each case replays ``rows`` traces of ``cols`` accesses (the shape the
residency check produces: one row per input model, one column per memory
event) and probes one block per row.

    python benchmarks/bench_lru.py [--repeat 5] [--quick]
"""
from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

from specleak.cache import KERNEL, lru_batch

CASES = [
    # name, rows, cols, sets, ways
    ("litmus-like", 256, 8, 256, 2),
    ("sweep N=260, 2-way", 256, 262, 256, 2),
    ("sweep N=512, 8-way", 256, 514, 64, 8),
    ("wide input, 16 bits", 65536, 24, 256, 4),
]


def make_case(rows, cols, sets, ways, seed=0):
    rng = np.random.default_rng(seed)
    blocks = rng.integers(0, 4 * sets * ways, size=(rows, cols), dtype=np.int64)
    active = (rng.random((rows, cols)) < 0.9).astype(np.uint8)
    probe = blocks[:, :1].copy()
    return blocks, active, probe


def run(repeat: int, quick: bool) -> int:
    if KERNEL != "cython":
        print("compiled kernel not available (SPECLEAK_PURE set or extension not built)")
        return 1
    print(f"{'case':<22} {'rows x cols':>13} {'cython ms':>10} {'python ms':>10} {'speedup':>8}")
    for name, rows, cols, sets, ways in CASES:
        if quick:
            rows = min(rows, 512)
        b, a, p = make_case(rows, cols, sets, ways)
        fast = lru_batch(b, a, sets, ways, p)
        slow = lru_batch(b, a, sets, ways, p, pure=True)
        if not np.array_equal(fast, slow):
            print(f"{name}: kernels disagree", file=sys.stderr)
            return 1
        n_slow = 1 if rows * cols > 1_000_000 else 3
        t_fast = min(timeit.repeat(lambda: lru_batch(b, a, sets, ways, p), number=5,
                                   repeat=repeat)) / 5
        t_slow = min(timeit.repeat(lambda: lru_batch(b, a, sets, ways, p, pure=True),
                                   number=n_slow, repeat=max(1, repeat // 2))) / n_slow
        print(f"{name:<22} {f'{rows} x {cols}':>13} {t_fast * 1e3:>10.3f} {t_slow * 1e3:>10.2f} "
              f"{t_slow / t_fast:>7.0f}x")
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--quick", action="store_true", help="cap rows at 512")
    ns = ap.parse_args(argv)
    return run(ns.repeat, ns.quick)


if __name__ == "__main__":
    sys.exit(main())
