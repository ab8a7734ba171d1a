"""Structure learning: token modulation, view fusion, kNN sparsification
(exact and LSH-approximate), and the sparsify/symmetrize/normalize
post-processing that produces the refined adjacency.

Gradients flow through the retained similarity values into the tokens;
the top-k selection itself (which entries survive) is frozen per step.
"""

import math
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from . import _kernels
from .errors import ConfigError, ShapeError
from .graphcore import (DEGREE_EPS, CsrMatrix, csr_from_coo,
                        degree_normalize_selfloops, spmm,
                        symmetrize_activate)
from .autodiff import Tape


@dataclass
class TokenSet:
    """Learnable domain/shared/balance tokens keyed by domain id."""

    domain_tokens: Dict[str, np.ndarray]
    shared_token: np.ndarray
    balance_tokens: Dict[str, np.ndarray]

    @classmethod
    def init_ones(cls, domain_ids, d, fused_width=None):
        w = 2 * d if fused_width is None else fused_width
        return cls(domain_tokens={g: np.ones(d) for g in domain_ids},
                   shared_token=np.ones(d),
                   balance_tokens={g: np.ones(w) for g in domain_ids})


@dataclass
class RefineConfig:
    k: int = 30
    r: int = 1
    lsh_batch: int = 0   # 0 = exact kNN
    eps: float = DEGREE_EPS

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"gsl.k must be >= 1, got {self.k}")
        if self.r < 1:
            raise ConfigError(f"gsl.r must be >= 1, got {self.r}")


def _row_vec(v):
    return np.asarray(v, dtype=np.float64).reshape(1, -1)


def unify_features_t(tape, x, t_d, t_s, activation="elu"):
    """Shared-token gated modulation: t_s * act(t_d * x), row-broadcast."""
    return tape.row_broadcast_mul(
        tape.activation(tape.row_broadcast_mul(x, t_d), activation), t_s)


def unify_features(x, t_d, t_s, activation="elu"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or len(np.ravel(t_d)) != x.shape[1] \
            or len(np.ravel(t_s)) != x.shape[1]:
        raise ShapeError("token width must match the feature width")
    tape = Tape(checked=False)
    out = unify_features_t(tape, tape.constant(x),
                           tape.constant(_row_vec(t_d)),
                           tape.constant(_row_vec(t_s)), activation)
    return out.value


def fuse_views_t(tape, x_u, a, r, t_b):
    """t_b * [x_u, A^r x_u]; A enters raw and carries no gradient."""
    agg = x_u
    for _ in range(r):
        agg = tape.spmm_const_sparse(a, agg)
    return tape.row_broadcast_mul(tape.concat_cols(x_u, agg), t_b)


def fuse_views(x_u, a, r, t_b):
    x_u = np.asarray(x_u, dtype=np.float64)
    t_b = _row_vec(t_b)
    if a.n_rows != a.n_cols or a.n_rows != x_u.shape[0]:
        raise ShapeError("adjacency must be square and match the node count")
    if t_b.shape[1] != 2 * x_u.shape[1]:
        raise ShapeError("balance token must have twice the feature width")
    tape = Tape(checked=False)
    out = fuse_views_t(tape, tape.constant(x_u), a, r, tape.constant(t_b))
    return out.value


def _normalize_rows(h):
    norms = np.sqrt((h * h).sum(axis=1, keepdims=True))
    alive = norms > 1e-12
    return np.where(alive, h / np.where(alive, norms, 1.0), 0.0)


def _assemble_knn(n, cols, vals):
    kp = cols.shape[1]
    row_ptr = np.arange(0, (n + 1) * kp, kp, dtype=np.int64)
    return CsrMatrix(n, n, row_ptr, cols.reshape(-1), vals.reshape(-1),
                     allow_negative=True)


def knn_exact(h, k):
    """Per-row top-k cosine neighbours (diagonal excluded, ties to the
    lower column); stored values are the raw similarities."""
    h = np.asarray(h, dtype=np.float64)
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    n = h.shape[0]
    hn = _normalize_rows(h)
    s = hn @ hn.T
    cols, vals = _kernels.topk_rows(s, k)
    return _assemble_knn(n, cols, vals)


def knn_lsh(h, k, batch, seed=0, counters=None):
    """Bucketed approximate kNN with random-hyperplane sign hashing.

    Buckets below the batch size merge with their smaller adjacent
    neighbour until every bucket holds >= batch rows; top-k is exact
    within each bucket. batch >= n degenerates to knn_exact and is
    bit-identical to it.
    """
    h = np.asarray(h, dtype=np.float64)
    n = h.shape[0]
    if batch < k + 1:
        raise ConfigError(f"lsh batch {batch} must be >= k+1 = {k + 1}")
    if counters is not None:
        counters["rows"] = counters.get("rows", 0) + n
    if batch >= n:
        if counters is not None:
            counters["pairs"] = counters.get("pairs", 0) + n * (n - 1)
        return knn_exact(h, k)
    n_planes = max(1, math.ceil(math.log2(n / batch)))
    rng = np.random.default_rng(seed)
    planes = rng.standard_normal((n_planes, h.shape[1]))
    hn = _normalize_rows(h)
    bits = (hn @ planes.T) >= 0.0
    codes = bits @ (1 << np.arange(n_planes, dtype=np.int64))
    order = np.argsort(codes, kind="stable")
    sorted_codes = codes[order]
    # consecutive runs of one code form the initial buckets
    starts = np.flatnonzero(np.concatenate(
        ([True], sorted_codes[1:] != sorted_codes[:-1])))
    buckets = [order[s:e].tolist() for s, e in
               zip(starts, np.append(starts[1:], n))]
    while len(buckets) > 1:
        sizes = [len(b) for b in buckets]
        smallest = int(np.argmin(sizes))
        if sizes[smallest] >= batch:
            break
        if smallest == 0:
            other = 1
        elif smallest == len(buckets) - 1:
            other = smallest - 1
        else:
            other = (smallest - 1
                     if sizes[smallest - 1] <= sizes[smallest + 1]
                     else smallest + 1)
        lo, hi = min(smallest, other), max(smallest, other)
        buckets[lo] = buckets[lo] + buckets[hi]
        del buckets[hi]
    all_rows, all_cols, all_vals = [], [], []
    for bucket in buckets:
        members = np.sort(np.asarray(bucket, dtype=np.int64))
        sub = hn[members]
        s = sub @ sub.T
        m = len(members)
        if counters is not None:
            counters["pairs"] = counters.get("pairs", 0) + m * (m - 1)
        cols, vals = _kernels.topk_rows(s, k)
        kp = cols.shape[1]
        all_rows.append(np.repeat(members, kp))
        all_cols.append(members[cols.reshape(-1)])
        all_vals.append(vals.reshape(-1))
    return csr_from_coo(n, n, np.concatenate(all_rows),
                        np.concatenate(all_cols), np.concatenate(all_vals),
                        allow_negative=True)


def sparsify(h, cfg, seed=0, counters=None):
    """Dispatch exact vs LSH kNN per the config."""
    if cfg.lsh_batch and cfg.lsh_batch > 0:
        return knn_lsh(h, cfg.k, cfg.lsh_batch, seed=seed, counters=counters)
    return knn_exact(h, cfg.k)


def postprocess(a_sp, eps=DEGREE_EPS):
    """Symmetrize + ReLU + degree-normalize with self-loops, sparsely."""
    if a_sp.n_rows != a_sp.n_cols:
        raise ShapeError("postprocess requires a square matrix")
    return degree_normalize_selfloops(symmetrize_activate(a_sp), eps=eps)


def refine(g, tokens, cfg, seed=0):
    """Full structure-refinement composition on token-unified features."""
    t_b = tokens.balance_tokens[g.domain_id]
    if len(t_b) == g.features.shape[1]:
        # topology-free ablation: balance token gates the features directly
        h = np.asarray(g.features) * _row_vec(t_b)
    else:
        h = fuse_views(g.features, g.adjacency, cfg.r, t_b)
    return postprocess(sparsify(h, cfg, seed=seed), eps=cfg.eps)


@dataclass
class SparsePostprocessPlan:
    """Frozen kNN pattern plus the constant maps that make the
    symmetrize/normalize pipeline differentiable in the kept values.

    Built once per pattern recomputation; `values_node` then yields the
    refined adjacency values (over the union pattern incl. diagonal) as
    a tape node, and `propagate` applies that adjacency to node features.
    """

    n: int
    p_rows: np.ndarray
    p_cols: np.ndarray
    eps: float = DEGREE_EPS
    u_rows: np.ndarray = field(init=False)
    u_cols: np.ndarray = field(init=False)

    def __post_init__(self):
        n = self.n
        p_nnz = len(self.p_rows)
        all_r = np.concatenate([self.p_rows, self.p_cols,
                                np.arange(n, dtype=np.int64)])
        all_c = np.concatenate([self.p_cols, self.p_rows,
                                np.arange(n, dtype=np.int64)])
        keys = all_r * n + all_c
        uniq, inverse = np.unique(keys, return_inverse=True)
        self.u_rows = (uniq // n).astype(np.int64)
        self.u_cols = (uniq % n).astype(np.int64)
        u_nnz = len(uniq)
        # 0.5-weighted map kept-values -> symmetrized union values
        self._msym = csr_from_coo(
            u_nnz, p_nnz,
            np.concatenate([inverse[:p_nnz], inverse[p_nnz:2 * p_nnz]]),
            np.concatenate([np.arange(p_nnz, dtype=np.int64)] * 2),
            np.full(2 * p_nnz, 0.5))
        self._diag = (self.u_rows == self.u_cols).astype(
            np.float64).reshape(-1, 1)
        self._mrow = csr_from_coo(
            n, u_nnz, self.u_rows, np.arange(u_nnz, dtype=np.int64),
            np.ones(u_nnz))

    def values_node(self, tape, h):
        """Differentiable refined-adjacency values (union pattern order)."""
        z = tape.l2_row_normalize(h)
        zi = tape.gather_rows(z, self.p_rows)
        zj = tape.gather_rows(z, self.p_cols)
        ones_d = tape.constant(np.ones((h.shape[1], 1)))
        sims = tape.matmul(tape.hadamard(zi, zj), ones_d)
        w = tape.spmm_const_sparse(self._msym, tape.relu(sims))
        w_tilde = tape.add(w, tape.constant(self._diag))
        deg = tape.spmm_const_sparse(self._mrow, w_tilde)
        u = tape.rsqrt(deg, eps=self.eps)
        ui = tape.gather_rows(u, self.u_rows)
        uj = tape.gather_rows(u, self.u_cols)
        return tape.hadamard(tape.hadamard(w_tilde, ui), uj)

    def propagate(self, tape, vals, x):
        """A' @ x with differentiable adjacency values and features."""
        xe = tape.gather_rows(x, self.u_cols)
        tiled = tape.matmul(vals, tape.constant(np.ones((1, x.shape[1]))))
        return tape.spmm_const_sparse(self._mrow, tape.hadamard(tiled, xe))

    def to_csr(self, vals, drop_zeros=True):
        vals = np.asarray(vals, dtype=np.float64).reshape(-1)
        keep = vals > 0.0 if drop_zeros else slice(None)
        return csr_from_coo(self.n, self.n, self.u_rows[keep],
                            self.u_cols[keep], vals[keep])
