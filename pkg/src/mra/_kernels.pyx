# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; semantics match ``_kernels_py``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline double _pos_sum(const double[::1] r) nogil:
    cdef Py_ssize_t k
    cdef double acc = 0.0
    for k in range(r.shape[0]):
        if r[k] > 0.0:
            acc += r[k]
    return acc


def positive_sum(r):
    cdef double[::1] rv = np.ascontiguousarray(r, dtype=np.float64)
    return _pos_sum(rv)


def selection_violation(M, offsets, selection, b):
    cols = np.asarray(offsets[:-1]) + np.asarray(selection)
    return np.asarray(M, dtype=np.float64)[:, cols].sum(axis=1) - b


def greedy_round(M, offsets, selection, b, double tol=1e-12):
    # column-major copy so each candidate column is contiguous
    cdef double[::1, :] Mv = np.asfortranarray(M, dtype=np.float64)
    cdef cnp.int64_t[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    sel_arr = np.array(selection, dtype=np.int64)
    cdef cnp.int64_t[::1] sel = sel_arr
    r_arr = np.ascontiguousarray(selection_violation(M, offsets, sel_arr, b), dtype=np.float64)
    cdef double[::1] r = r_arr
    cdef double[::1] base = np.empty_like(r_arr)
    cdef Py_ssize_t m = Mv.shape[0]
    cdef Py_ssize_t K = off.shape[0] - 1
    cdef Py_ssize_t i, j, k, lo, hi, best_j
    cdef double cur = _pos_sum(r), val, best_val, t
    cdef long moves = 0, passes = 0
    cdef bint changed = True
    with nogil:
        while changed:
            changed = False
            passes += 1
            for i in range(K):
                lo = off[i]
                hi = off[i + 1]
                if hi - lo < 2:
                    continue
                for k in range(m):
                    base[k] = r[k] - Mv[k, lo + sel[i]]
                best_j = -1
                best_val = 0.0
                for j in range(hi - lo):
                    val = 0.0
                    for k in range(m):
                        t = base[k] + Mv[k, lo + j]
                        if t > 0.0:
                            val += t
                    if best_j < 0 or val < best_val:
                        best_val = val
                        best_j = j
                if best_val < cur - tol:
                    sel[i] = best_j
                    for k in range(m):
                        r[k] = base[k] + Mv[k, lo + best_j]
                    cur = best_val
                    moves += 1
                    changed = True
    return sel_arr, _pos_sum(r), moves, passes
