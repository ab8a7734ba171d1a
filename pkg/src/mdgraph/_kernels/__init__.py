"""Kernel backend selection.

Imports the compiled extension when present; otherwise (or when
MDGRAPH_PURE_PYTHON=1 is set) uses the numpy/scipy fallback. Both
backends implement identical semantics; ``benchmarks/bench_kernels.py``
compares their speed.
"""

import os

import numpy as np

from . import _fallback

if os.environ.get("MDGRAPH_PURE_PYTHON", "") == "1":
    _hot = None
else:
    try:
        from . import _hot
    except ImportError:
        _hot = None

HAVE_COMPILED = _hot is not None

# the compiled insertion buffer degrades past this k; numpy argsort wins there
_TOPK_COMPILED_MAX_K = 64


def backend_name():
    return "compiled" if HAVE_COMPILED else "fallback"


def spmm(indptr, indices, data, n_rows, n_cols, x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if HAVE_COMPILED:
        return _hot.spmm(indptr, indices, data, n_rows, n_cols, x)
    return _fallback.spmm(indptr, indices, data, n_rows, n_cols, x)


def topk_rows(s, k):
    s = np.ascontiguousarray(s, dtype=np.float64)
    kp = min(int(k), s.shape[0] - 1)
    if HAVE_COMPILED and 0 < kp <= _TOPK_COMPILED_MAX_K:
        return _hot.topk_rows(s, kp)
    return _fallback.topk_rows(s, kp)


def jacobi_eigh(a, tol=1e-12, max_sweeps=60):
    """Full eigendecomposition of a symmetric matrix via cyclic Jacobi.

    Returns (w, v) with eigenvalues descending and v's columns the
    matching eigenvectors.
    """
    work = np.array(a, dtype=np.float64, copy=True, order="C")
    n = work.shape[0]
    vecs = np.eye(n, dtype=np.float64, order="C")
    if HAVE_COMPILED:
        _hot.jacobi_sweeps(work, vecs, tol, max_sweeps)
    else:
        _fallback.jacobi_sweeps(work, vecs, tol, max_sweeps)
    w = np.diag(work).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], np.ascontiguousarray(vecs[:, order])
