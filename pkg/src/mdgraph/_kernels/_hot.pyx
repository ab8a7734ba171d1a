# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: CSR spmm, per-row top-k selection, Jacobi sweeps.

Semantic twins of the numpy versions in ``_fallback.py``; keep the two
in lock-step when changing either.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def spmm(cnp.int64_t[::1] indptr, cnp.int64_t[::1] indices, double[::1] data,
         Py_ssize_t n_rows, Py_ssize_t n_cols, double[:, ::1] x):
    """CSR (n_rows x n_cols) times dense x; sequential accumulation per row."""
    cdef Py_ssize_t m = x.shape[1]
    out_arr = np.zeros((n_rows, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, jj, c, j
    cdef double v
    for i in range(n_rows):
        for jj in range(indptr[i], indptr[i + 1]):
            j = indices[jj]
            v = data[jj]
            for c in range(m):
                out[i, c] += v * x[j, c]
    return out_arr


def topk_rows(double[:, ::1] s, Py_ssize_t k):
    """Top-k off-diagonal entries per row: value desc, ties to lower column.

    Returns (cols, vals) with each row's survivors in ascending column
    order. k is clamped to n-1.
    """
    cdef Py_ssize_t n = s.shape[0]
    cdef Py_ssize_t kp = k if k < n - 1 else n - 1
    if kp <= 0:
        return (np.zeros((n, 0), dtype=np.int64), np.zeros((n, 0)))
    cols_arr = np.empty((n, kp), dtype=np.int64)
    vals_arr = np.empty((n, kp), dtype=np.float64)
    cdef cnp.int64_t[:, ::1] cols = cols_arr
    cdef double[:, ::1] vals = vals_arr
    # per-row selection buffer ordered by (value desc, col asc)
    buf_c_arr = np.empty(kp, dtype=np.int64)
    buf_v_arr = np.empty(kp, dtype=np.float64)
    cdef cnp.int64_t[::1] buf_c = buf_c_arr
    cdef double[::1] buf_v = buf_v_arr
    cdef Py_ssize_t i, j, size, pos, t
    cdef double v
    for i in range(n):
        size = 0
        for j in range(n):
            if j == i:
                continue
            v = s[i, j]
            if size == kp and v <= buf_v[size - 1]:
                # scanning j ascending means an equal value never displaces
                continue
            pos = size
            while pos > 0 and buf_v[pos - 1] < v:
                pos -= 1
            if size < kp:
                size += 1
            for t in range(size - 1, pos, -1):
                buf_v[t] = buf_v[t - 1]
                buf_c[t] = buf_c[t - 1]
            buf_v[pos] = v
            buf_c[pos] = j
        # emit in ascending column order (insertion sort over kp entries)
        for t in range(1, size):
            j = buf_c[t]
            v = buf_v[t]
            pos = t
            while pos > 0 and buf_c[pos - 1] > j:
                buf_c[pos] = buf_c[pos - 1]
                buf_v[pos] = buf_v[pos - 1]
                pos -= 1
            buf_c[pos] = j
            buf_v[pos] = v
        for t in range(size):
            cols[i, t] = buf_c[t]
            vals[i, t] = buf_v[t]
    return cols_arr, vals_arr


def jacobi_sweeps(double[:, ::1] a, double[:, ::1] v, double tol, int max_sweeps):
    """Cyclic Jacobi rotations on symmetric a (in place), accumulating v."""
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t p, q, r
    cdef double apq, tau, t, c, s_, xp, xq, fro, off, diag
    cdef int sweeps = 0, sweep
    fro = 0.0
    for p in range(n):
        for q in range(n):
            fro += a[p, q] * a[p, q]
    fro = sqrt(fro)
    if fro < 2.2250738585072014e-308:
        fro = 2.2250738585072014e-308
    for sweep in range(max_sweeps):
        off = 0.0
        for p in range(n):
            for q in range(n):
                if p != q:
                    off += a[p, q] * a[p, q]
        off = sqrt(off)
        if off <= tol * fro:
            break
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + sqrt(1.0 + tau * tau))
                else:
                    t = 1.0 / (tau - sqrt(1.0 + tau * tau))
                c = 1.0 / sqrt(1.0 + t * t)
                s_ = t * c
                for r in range(n):
                    xp = a[p, r]
                    xq = a[q, r]
                    a[p, r] = c * xp - s_ * xq
                    a[q, r] = s_ * xp + c * xq
                for r in range(n):
                    xp = a[r, p]
                    xq = a[r, q]
                    a[r, p] = c * xp - s_ * xq
                    a[r, q] = s_ * xp + c * xq
                for r in range(n):
                    xp = v[r, p]
                    xq = v[r, q]
                    v[r, p] = c * xp - s_ * xq
                    v[r, q] = s_ * xp + c * xq
    return sweeps
