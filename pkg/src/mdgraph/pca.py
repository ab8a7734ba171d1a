"""Truncated PCA used to project every graph's raw features to one width.

Fitted once per graph and frozen. The eigensolver is self-contained:
cyclic Jacobi for covariance sizes up to 512, deflated power iteration
on the implicit covariance operator above that.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConfigError, ShapeError

JACOBI_MAX_DIM = 512


@dataclass
class ProjectionBasis:
    mean: np.ndarray                # (d',)
    basis: np.ndarray               # (d', k) orthonormal columns, k = min(d, d')
    explained_variance: np.ndarray  # (d,) non-increasing, zero-padded past k
    target_dim: int

    def __post_init__(self):
        self.mean = np.ascontiguousarray(self.mean, dtype=np.float64)
        self.basis = np.ascontiguousarray(self.basis, dtype=np.float64)
        self.explained_variance = np.ascontiguousarray(
            self.explained_variance, dtype=np.float64)


def _fix_signs(basis):
    """Make each column's largest-magnitude entry positive (in place)."""
    for j in range(basis.shape[1]):
        i = int(np.argmax(np.abs(basis[:, j])))
        if basis[i, j] < 0:
            basis[:, j] = -basis[:, j]
    return basis


def _power_deflation(matvec, dim, k, rng, tol=1e-12, max_iter=2000):
    """Top-k eigenpairs of a PSD operator by power iteration with deflation."""
    vecs = np.zeros((dim, k))
    vals = np.zeros(k)
    for i in range(k):
        v = rng.standard_normal(dim)
        if i:
            v -= vecs[:, :i] @ (vecs[:, :i].T @ v)
        nv = np.linalg.norm(v)
        v = v / nv if nv > 0 else np.eye(dim)[:, i % dim]
        prev = np.inf
        for _ in range(max_iter):
            w = matvec(v)
            if i:
                w -= vecs[:, :i] @ (vecs[:, :i].T @ w)
            lam = float(v @ w)
            nw = np.linalg.norm(w)
            if nw < 1e-300:
                lam = 0.0
                break
            v = w / nw
            if abs(lam - prev) <= tol * max(1.0, abs(lam)):
                break
            prev = lam
        w = matvec(v)
        if i:
            w -= vecs[:, :i] @ (vecs[:, :i].T @ w)
        vecs[:, i] = v
        vals[i] = max(float(v @ w), 0.0)
    return vals, vecs


def fit_pca(x, d, center=True, method="auto"):
    """Fit a rank-min(d, d') basis on x (n x d').

    method: "auto" picks Jacobi for d' <= 512, else power iteration;
    "jacobi" / "power" force one path. Zero-variance input yields an
    arbitrary orthonormal basis with all-zero explained variance.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ShapeError("fit_pca needs a non-empty 2-D matrix")
    if d <= 0:
        raise ConfigError(f"target dimension must be positive, got {d}")
    n, d_raw = x.shape
    mean = x.mean(axis=0) if center else np.zeros(d_raw)
    xc = x - mean
    denom = max(n - 1, 1)
    k = min(d, d_raw)
    if method == "auto":
        method = "jacobi" if d_raw <= JACOBI_MAX_DIM else "power"
    if method == "jacobi":
        cov = (xc.T @ xc) / denom
        w, v = _kernels.jacobi_eigh(cov)
        vals = np.maximum(w[:k], 0.0)
        vecs = v[:, :k].copy()
    elif method == "power":
        rng = np.random.default_rng(0)
        vals, vecs = _power_deflation(
            lambda u: xc.T @ (xc @ u) / denom, d_raw, k, rng)
    else:
        raise ConfigError(f"unknown PCA method {method!r}")
    order = np.argsort(-vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    _fix_signs(vecs)
    variance = np.zeros(d)
    variance[:k] = vals
    return ProjectionBasis(mean=mean, basis=vecs,
                           explained_variance=variance, target_dim=d)


def project(x, basis):
    """(x - mean) @ basis, zero-padded on the right up to the target width."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != basis.mean.shape[0]:
        raise ShapeError(
            f"project expects width {basis.mean.shape[0]}, got {x.shape}")
    low = (x - basis.mean) @ basis.basis
    d = basis.target_dim
    if low.shape[1] == d:
        return low
    out = np.zeros((x.shape[0], d))
    out[:, :low.shape[1]] = low
    return out
