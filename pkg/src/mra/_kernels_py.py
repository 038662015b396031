"""Pure-Python (numpy) kernels; reference implementation of ``_kernels.pyx``."""

import numpy as np


def positive_sum(r):
    return float(np.maximum(r, 0.0).sum())


def selection_violation(M, offsets, selection, b):
    """``A xbar - b`` for a one-hot selection, with ``M = [A_1 Z_1, ..., A_K Z_K]``."""
    cols = np.asarray(offsets[:-1]) + np.asarray(selection)
    return M[:, cols].sum(axis=1) - b


def greedy_round(M, offsets, selection, b, tol=1e-12):
    """Coordinate descent over per-agent column choices minimizing ``1'(A xbar - b)_+``.

    An agent moves to its best column only if that strictly lowers r_p;
    passes repeat until one makes no move.

    Returns ``(selection, r_p, moves, passes)``.
    """
    M = np.asarray(M, dtype=float)
    sel = np.array(selection, dtype=np.int64)
    r = selection_violation(M, offsets, sel, b)
    cur = positive_sum(r)
    moves = passes = 0
    K = len(offsets) - 1
    changed = True
    while changed:
        changed = False
        passes += 1
        for i in range(K):
            lo, hi = offsets[i], offsets[i + 1]
            if hi - lo < 2:
                continue
            base = r - M[:, lo + sel[i]]
            vals = np.maximum(base[:, None] + M[:, lo:hi], 0.0).sum(axis=0)
            j = int(np.argmin(vals))
            if vals[j] < cur - tol:
                sel[i] = j
                r = base + M[:, lo + j]
                cur = float(vals[j])
                moves += 1
                changed = True
    return sel, positive_sum(r), moves, passes
