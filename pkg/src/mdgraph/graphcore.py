"""Sparse graph data model, file ingestion, and adjacency primitives.

Everything here is immutable after construction and free of global
state; the matrix primitives (spmm, symmetrize, normalize) accept both
dense arrays and CsrMatrix inputs so the structure-refinement pipeline
can stay sparse end to end.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels, serialize
from .errors import (BoundsError, DataError, ParseError, PreconditionError,
                     ShapeError)

CSR_MAGIC = b"MDGC"
CSR_VERSION = 1

# degree clamp: keeps isolated rows finite after an all-zero ReLU row
DEGREE_EPS = 1e-12


class CsrMatrix:
    """Canonical CSR: sorted unique columns per row, non-negative values.

    allow_negative=True relaxes the value-sign invariant; the kNN
    sparsifier stores raw cosine similarities and defers non-negativity
    to the ReLU inside post-processing.
    """

    __slots__ = ("n_rows", "n_cols", "row_ptr", "col_idx", "values",
                 "allow_negative", "_t_cache")

    def __init__(self, n_rows, n_cols, row_ptr, col_idx, values,
                 validate=True, allow_negative=False):
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        self.row_ptr = np.ascontiguousarray(row_ptr, dtype=np.int64)
        self.col_idx = np.ascontiguousarray(col_idx, dtype=np.int64)
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.allow_negative = bool(allow_negative)
        self._t_cache = None
        if validate:
            self._validate()

    def _validate(self):
        if self.row_ptr.shape != (self.n_rows + 1,):
            raise ShapeError("row_ptr length must be n_rows + 1")
        if self.row_ptr[0] != 0 or self.row_ptr[-1] != len(self.col_idx):
            raise ShapeError("row_ptr must start at 0 and end at nnz")
        if np.any(np.diff(self.row_ptr) < 0):
            raise ShapeError("row_ptr must be non-decreasing")
        if len(self.col_idx) != len(self.values):
            raise ShapeError("col_idx and values length mismatch")
        if len(self.col_idx):
            if self.col_idx.min() < 0 or self.col_idx.max() >= self.n_cols:
                raise ShapeError("column index out of range")
            starts = self.row_ptr[:-1]
            ends = self.row_ptr[1:]
            diffs = np.diff(self.col_idx)
            # strict increase inside rows; breaks allowed only at row starts
            bad = np.where(diffs <= 0)[0] + 1
            if len(bad) and not np.all(np.isin(bad, starts[starts > 0])):
                raise ShapeError("columns must be strictly increasing per row")
            del ends
        if (not self.allow_negative and len(self.values)
                and self.values.min() < 0):
            raise ShapeError("values must be non-negative")

    @property
    def nnz(self):
        return int(len(self.values))

    def row(self, i):
        lo, hi = self.row_ptr[i], self.row_ptr[i + 1]
        return self.col_idx[lo:hi], self.values[lo:hi]

    def to_dense(self):
        out = np.zeros((self.n_rows, self.n_cols))
        rows = np.repeat(np.arange(self.n_rows), np.diff(self.row_ptr))
        out[rows, self.col_idx] = self.values
        return out

    def to_coo(self):
        rows = np.repeat(np.arange(self.n_rows, dtype=np.int64),
                         np.diff(self.row_ptr))
        return rows, self.col_idx.copy(), self.values.copy()

    def transpose(self):
        if self._t_cache is None:
            rows, cols, vals = self.to_coo()
            self._t_cache = csr_from_coo(self.n_cols, self.n_rows,
                                         cols, rows, vals,
                                         allow_negative=self.allow_negative)
        return self._t_cache

    def diagonal(self):
        out = np.zeros(min(self.n_rows, self.n_cols))
        for i in range(len(out)):
            cols, vals = self.row(i)
            j = np.searchsorted(cols, i)
            if j < len(cols) and cols[j] == i:
                out[i] = vals[j]
        return out

    def row_sums(self):
        out = np.zeros(self.n_rows)
        rows = np.repeat(np.arange(self.n_rows), np.diff(self.row_ptr))
        np.add.at(out, rows, self.values)
        return out

    def __eq__(self, other):
        if not isinstance(other, CsrMatrix):
            return NotImplemented
        return (self.n_rows == other.n_rows and self.n_cols == other.n_cols
                and np.array_equal(self.row_ptr, other.row_ptr)
                and np.array_equal(self.col_idx, other.col_idx)
                and np.array_equal(self.values, other.values))

    def __repr__(self):
        return f"CsrMatrix({self.n_rows}x{self.n_cols}, nnz={self.nnz})"


def csr_from_coo(n_rows, n_cols, rows, cols, vals, combine=None,
                 allow_negative=False):
    """Canonicalize COO triplets into a CsrMatrix.

    combine=None rejects duplicate coordinates; "sum" merges them.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    if len(rows):
        dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
        if dup.any():
            if combine != "sum":
                raise ShapeError("duplicate coordinates in COO input")
            keep = np.concatenate(([True], ~dup))
            group = np.cumsum(keep) - 1
            summed = np.zeros(group[-1] + 1)
            np.add.at(summed, group, vals)
            rows, cols, vals = rows[keep], cols[keep], summed
    row_ptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.add.at(row_ptr, rows + 1, 1)
    np.cumsum(row_ptr, out=row_ptr)
    return CsrMatrix(n_rows, n_cols, row_ptr, cols, vals,
                     allow_negative=allow_negative)


def csr_identity(n):
    idx = np.arange(n, dtype=np.int64)
    return CsrMatrix(n, n, np.arange(n + 1, dtype=np.int64), idx, np.ones(n))


def csr_permute(a, perm):
    """Relabel nodes: returns P A P^T for the permutation new_id = perm[old_id]."""
    perm = np.asarray(perm, dtype=np.int64)
    rows, cols, vals = a.to_coo()
    return csr_from_coo(a.n_rows, a.n_cols, perm[rows], perm[cols], vals,
                        allow_negative=a.allow_negative)


def save_csr(a, path):
    with open(path, "wb") as fh:
        serialize.write_sections(fh, CSR_MAGIC, CSR_VERSION, [
            ("shape", serialize.pack_array(
                np.array([a.n_rows, a.n_cols], dtype=np.int64))),
            ("row_ptr", serialize.pack_array(a.row_ptr)),
            ("col_idx", serialize.pack_array(a.col_idx)),
            ("values", serialize.pack_array(a.values)),
        ])


def load_csr(path):
    with open(path, "rb") as fh:
        sections = serialize.read_sections(fh, CSR_MAGIC, CSR_VERSION)
    shape = serialize.unpack_array(sections["shape"])
    return CsrMatrix(shape[0], shape[1],
                     serialize.unpack_array(sections["row_ptr"]),
                     serialize.unpack_array(sections["col_idx"]),
                     serialize.unpack_array(sections["values"]))


@dataclass
class Graph:
    """Square sparse adjacency + dense node features (+ optional labels)."""

    adjacency: CsrMatrix
    features: np.ndarray
    labels: Optional[np.ndarray]
    domain_id: str
    name: str = ""

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ShapeError("features must be a 2-D matrix")
        n = self.features.shape[0]
        if self.adjacency.n_rows != n or self.adjacency.n_cols != n:
            raise ShapeError(
                f"adjacency is {self.adjacency.n_rows}x{self.adjacency.n_cols} "
                f"but there are {n} feature rows")
        if self.labels is not None:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise ShapeError(f"expected {n} labels, got {self.labels.shape}")
            if len(self.labels) and self.labels.min() < 0:
                raise DataError("negative class label")

    @property
    def n_nodes(self):
        return self.features.shape[0]

    @property
    def n_classes(self):
        return 0 if self.labels is None else int(self.labels.max()) + 1

    def with_adjacency(self, adjacency):
        return Graph(adjacency, self.features, self.labels,
                     self.domain_id, self.name)

    def with_features(self, features):
        return Graph(self.adjacency, features, self.labels,
                     self.domain_id, self.name)


@dataclass
class DatasetStats:
    name: str
    n_nodes: int
    directed_entries: int
    undirected_edges: int
    feature_dim: int
    n_classes: int
    homophily_ratio: float

    CSV_HEADER = ("name,n_nodes,directed_entries,undirected_edges,"
                  "feature_dim,n_classes,homophily_ratio")

    def csv_row(self):
        return (f"{self.name},{self.n_nodes},{self.directed_entries},"
                f"{self.undirected_edges},{self.feature_dim},"
                f"{self.n_classes},{self.homophily_ratio:.6f}")


def _parse_edge_file(path, n_nodes):
    pairs = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            fields = text.split("\t")
            if len(fields) != 2:
                raise ParseError(path, lineno,
                                 f"expected 'u<TAB>v', got {text!r}")
            try:
                u, v = int(fields[0]), int(fields[1])
            except ValueError:
                raise ParseError(path, lineno,
                                 f"non-integer node id in {text!r}") from None
            if u < 0 or v < 0:
                raise ParseError(path, lineno, "negative node id")
            if u >= n_nodes or v >= n_nodes:
                raise BoundsError(
                    f"{path}:{lineno}: edge ({u},{v}) references a node id "
                    f">= {n_nodes}")
            if u == v:
                continue  # self-loops re-enter only during normalization
            pairs.add((min(u, v), max(u, v)))
    return pairs


def _load_float_csv(path):
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                for field in line.strip().split(","):
                    try:
                        float(field)
                    except ValueError:
                        raise ParseError(path, lineno,
                                         f"non-numeric field {field!r}") from None
        raise DataError(f"{path}: malformed CSV")


def _load_labels(path, n_nodes):
    labels = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                labels.append(int(text))
            except ValueError:
                raise ParseError(path, lineno,
                                 f"non-integer label {text!r}") from None
    if len(labels) != n_nodes:
        raise ShapeError(f"{path}: {len(labels)} labels for {n_nodes} nodes")
    arr = np.asarray(labels, dtype=np.int64)
    if len(arr) and arr.min() < 0:
        raise DataError(f"{path}: negative class label")
    return arr


def load_graph(edge_path, feature_path, label_path=None, domain_id="", name=""):
    """Load the three-file text format into a canonical undirected Graph.

    Duplicate edges collapse to weight 1, input self-loops are dropped,
    and the edge list is symmetrized by union of both directions.
    """
    features = _load_float_csv(feature_path)
    n = features.shape[0]
    pairs = _parse_edge_file(edge_path, n)
    if pairs:
        und = np.array(sorted(pairs), dtype=np.int64)
        rows = np.concatenate([und[:, 0], und[:, 1]])
        cols = np.concatenate([und[:, 1], und[:, 0]])
        adj = csr_from_coo(n, n, rows, cols, np.ones(len(rows)))
    else:
        adj = CsrMatrix(n, n, np.zeros(n + 1, dtype=np.int64),
                        np.zeros(0, dtype=np.int64), np.zeros(0))
    labels = _load_labels(label_path, n) if label_path is not None else None
    return Graph(adj, features, labels, domain_id=str(domain_id),
                 name=name or str(domain_id))


def homophily_ratio(g):
    """Fraction of undirected edges whose endpoints share a label.

    An edgeless graph returns 1.0 by convention.
    """
    if g.labels is None:
        raise PreconditionError("homophily_ratio requires labels")
    rows, cols, _ = g.adjacency.to_coo()
    upper = rows < cols
    if not upper.any():
        return 1.0
    same = g.labels[rows[upper]] == g.labels[cols[upper]]
    return float(np.count_nonzero(same)) / float(np.count_nonzero(upper))


def compute_stats(g):
    rows, cols, _ = g.adjacency.to_coo()
    und = int(np.count_nonzero(rows < cols))
    return DatasetStats(
        name=g.name,
        n_nodes=g.n_nodes,
        directed_entries=g.adjacency.nnz,
        undirected_edges=und,
        feature_dim=g.features.shape[1],
        n_classes=g.n_classes,
        homophily_ratio=homophily_ratio(g),
    )


def spmm(a, x):
    """Exact sparse-dense product a @ x."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or a.n_cols != x.shape[0]:
        raise ShapeError(f"spmm shapes {a.n_rows}x{a.n_cols} @ {x.shape}")
    return _kernels.spmm(a.row_ptr, a.col_idx, a.values,
                         a.n_rows, a.n_cols, x)


def symmetrize_activate(a_sp):
    """(relu(A) + relu(A)^T) / 2; accepts a dense array or CsrMatrix."""
    if isinstance(a_sp, CsrMatrix):
        if a_sp.n_rows != a_sp.n_cols:
            raise ShapeError("symmetrize_activate requires a square matrix")
        rows, cols, vals = a_sp.to_coo()
        vals = np.maximum(vals, 0.0)
        out = csr_from_coo(a_sp.n_rows, a_sp.n_cols,
                           np.concatenate([rows, cols]),
                           np.concatenate([cols, rows]),
                           np.concatenate([vals, vals]) * 0.5,
                           combine="sum")
        return _drop_zeros(out)
    a = np.asarray(a_sp, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError("symmetrize_activate requires a square matrix")
    r = np.maximum(a, 0.0)
    return (r + r.T) * 0.5


def _drop_zeros(a):
    keep = a.values > 0.0
    if keep.all():
        return a
    rows, cols, vals = a.to_coo()
    return csr_from_coo(a.n_rows, a.n_cols, rows[keep], cols[keep], vals[keep])


def degree_normalize_selfloops(a_sym, eps=DEGREE_EPS):
    """Add unit self-loops, then scale entry (i,j) by 1/sqrt(d_i * d_j).

    Degrees are row sums of the self-looped matrix, clamped below by eps
    before the inverse square root.
    """
    if isinstance(a_sym, CsrMatrix):
        if a_sym.n_rows != a_sym.n_cols:
            raise ShapeError("degree_normalize_selfloops requires square input")
        _check_csr_symmetric(a_sym)
        n = a_sym.n_rows
        rows, cols, vals = a_sym.to_coo()
        rows = np.concatenate([rows, np.arange(n, dtype=np.int64)])
        cols = np.concatenate([cols, np.arange(n, dtype=np.int64)])
        vals = np.concatenate([vals, np.ones(n)])
        tilde = csr_from_coo(n, n, rows, cols, vals, combine="sum")
        deg = np.zeros(n)
        trow = np.repeat(np.arange(n), np.diff(tilde.row_ptr))
        np.add.at(deg, trow, tilde.values)
        dinv = 1.0 / np.sqrt(np.maximum(deg, eps))
        scaled = tilde.values * dinv[trow] * dinv[tilde.col_idx]
        return CsrMatrix(n, n, tilde.row_ptr, tilde.col_idx, scaled)
    a = np.asarray(a_sym, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError("degree_normalize_selfloops requires square input")
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-9:
        raise PreconditionError("input must be symmetric within 1e-9")
    tilde = a + np.eye(a.shape[0])
    deg = tilde.sum(axis=1)
    dinv = 1.0 / np.sqrt(np.maximum(deg, eps))
    return tilde * dinv[:, None] * dinv[None, :]


def _check_csr_symmetric(a, tol=1e-9):
    t = a.transpose()
    if (not np.array_equal(a.row_ptr, t.row_ptr)
            or not np.array_equal(a.col_idx, t.col_idx)
            or np.max(np.abs(a.values - t.values), initial=0.0) > tol):
        raise PreconditionError("input must be symmetric within 1e-9")
