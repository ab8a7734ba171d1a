"""Numpy/scipy implementations of the hot kernels.

Used when the compiled extension is unavailable (or disabled through
MDGRAPH_PURE_PYTHON=1). Each function is the semantic twin of its
counterpart in ``_hot.pyx``: same accumulation order for spmm, same
(value desc, column asc) tie-break for top-k, same rotation schedule
for Jacobi, so the two backends agree on every test oracle.
"""

import numpy as np
import scipy.sparse as sp


def spmm(indptr, indices, data, n_rows, n_cols, x):
    """CSR (n_rows x n_cols) times dense x -> dense (n_rows, x.shape[1])."""
    mat = sp.csr_matrix((data, indices, indptr), shape=(n_rows, n_cols))
    out = mat.dot(x)
    return np.ascontiguousarray(out, dtype=np.float64)


def topk_rows(s, k):
    """Top-k off-diagonal entries per row of a square matrix.

    Ordered by value descending with ties broken by the lower column
    index; the returned (cols, vals) pair lists each row's survivors in
    ascending column order. k is clamped to n-1.
    """
    n = s.shape[0]
    kp = min(int(k), n - 1)
    if kp <= 0:
        return (np.zeros((n, 0), dtype=np.int64), np.zeros((n, 0)))
    masked = np.array(s, dtype=np.float64, copy=True)
    np.fill_diagonal(masked, -np.inf)
    # stable sort on -value keeps ascending column order among ties
    order = np.argsort(-masked, axis=1, kind="stable")[:, :kp]
    cols = np.sort(order, axis=1).astype(np.int64)
    vals = np.take_along_axis(np.asarray(s, dtype=np.float64), cols, axis=1)
    return cols, np.ascontiguousarray(vals)


def jacobi_sweeps(a, v, tol, max_sweeps):
    """Cyclic Jacobi rotations on symmetric a (in place), accumulating v.

    Stops when the off-diagonal Frobenius norm drops below tol times the
    full Frobenius norm. Returns the number of sweeps executed.
    """
    n = a.shape[0]
    fro = max(float(np.linalg.norm(a)), np.finfo(float).tiny)
    sweeps = 0
    for _ in range(max_sweeps):
        off = float(np.sqrt(max(np.sum(a * a) - np.sum(np.diag(a) ** 2), 0.0)))
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
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = 1.0 / (tau - np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s_ = t * c
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s_ * rq
                a[q, :] = s_ * rp + c * rq
                cp = a[:, p].copy()
                cq = a[:, q].copy()
                a[:, p] = c * cp - s_ * cq
                a[:, q] = s_ * cp + c * cq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s_ * vq
                v[:, q] = s_ * vp + c * vq
    return sweeps
