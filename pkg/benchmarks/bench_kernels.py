"""Time the compiled greedy-rounding kernel against the numpy fallback.

    python benchmarks/bench_kernels.py [--agents 100] [--width 30] [--rows 50]
"""

import argparse
import importlib
import time

import numpy as np

from mra import _kernels_py


def _problem(rng, agents, width, rows):
    offsets = np.arange(agents + 1, dtype=np.int64) * width
    M = rng.uniform(0.0, 1.0, (rows, agents * width))
    b = 0.45 * M.sum(axis=1) / width
    sel = rng.integers(0, width, agents).astype(np.int64)
    return M, offsets, sel, b


def _time(fn, args, reps):
    best = np.inf
    for _ in range(reps):
        t = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--agents", type=int, default=100)
    ap.add_argument("--width", type=int, default=30)
    ap.add_argument("--rows", type=int, default=50)
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    prob = _problem(rng, args.agents, args.width, args.rows)
    t_py, out_py = _time(_kernels_py.greedy_round, prob, args.reps)
    print(f"python  greedy_round: {1e3 * t_py:8.2f} ms  r_p={out_py[1]:.6g} moves={out_py[2]}")
    try:
        ext = importlib.import_module("mra._kernels")
    except ImportError:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`")
        return
    t_cy, out_cy = _time(ext.greedy_round, prob, args.reps)
    print(f"cython  greedy_round: {1e3 * t_cy:8.2f} ms  r_p={out_cy[1]:.6g} moves={out_cy[2]}")
    print(f"speedup {t_py / t_cy:.1f}x; same selection: {np.array_equal(out_py[0], out_cy[0])}")


if __name__ == "__main__":
    main()
