"""Minimal dense-matrix reverse-mode autodiff on an eager tape.

Every value is a 2-D float64 array (scalars are 1x1). Forward values are
computed eagerly as ops are recorded; backward replays the tape in strict
reverse order exactly once, accumulating gradients by summation over all
uses. Sparse adjacency operands are constants: no gradient flows into a
CsrMatrix argument.
"""

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .graphcore import CsrMatrix, spmm as csr_spmm

_ZERO_ROW_TOL = 1e-12


def as_matrix(value, checked=True):
    """Coerce to a 2-D float64 array; rejects NaN/Inf in checked mode."""
    arr = np.ascontiguousarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"expected a matrix, got ndim={arr.ndim}")
    if checked and not np.isfinite(arr).all():
        raise ShapeError("non-finite values in matrix")
    return arr


class Node:
    __slots__ = ("id", "value", "op", "parents", "backward_fn",
                 "requires", "trainable", "name")

    def __init__(self, nid, value, op, parents, backward_fn,
                 requires, trainable=False, name=None):
        self.id = nid
        self.value = value
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires = requires
        self.trainable = trainable
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = self.name or self.op
        return f"Node#{self.id}<{tag} {self.value.shape}>"


class Tape:
    """Append-only operation record; single-threaded per construction."""

    def __init__(self, rng=None, checked=True):
        self.nodes = []
        self.parameters = []
        self.rng = rng
        self.checked = checked

    # -- leaves ------------------------------------------------------------

    def leaf(self, value, trainable=False, name=None):
        arr = as_matrix(value, checked=self.checked)
        node = Node(len(self.nodes), arr, "leaf", (), None,
                    requires=trainable, trainable=trainable, name=name)
        self.nodes.append(node)
        if trainable:
            self.parameters.append(node)
        return node

    def constant(self, value):
        return self.leaf(value, trainable=False)

    def _record(self, op, value, parents, backward_fn):
        requires = any(p.requires for p in parents)
        node = Node(len(self.nodes), value, op, parents,
                    backward_fn if requires else None, requires)
        self.nodes.append(node)
        return node

    # -- primitive ops -----------------------------------------------------

    def matmul(self, a, b):
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul {a.shape} @ {b.shape}")
        val = a.value @ b.value

        def bwd(g, acc):
            acc(a, g @ b.value.T)
            acc(b, a.value.T @ g)
        return self._record("matmul", val, (a, b), bwd)

    def spmm_const_sparse(self, s, x):
        """Constant CSR times node; no gradient flows into the sparse side."""
        if not isinstance(s, CsrMatrix):
            raise ShapeError("spmm_const_sparse needs a CsrMatrix constant")
        val = csr_spmm(s, x.value)

        def bwd(g, acc):
            acc(x, csr_spmm(s.transpose(), g))
        return self._record("spmm_const_sparse", val, (x,), bwd)

    def hadamard(self, a, b):
        if a.shape != b.shape:
            raise ShapeError(f"hadamard {a.shape} vs {b.shape}")
        val = a.value * b.value

        def bwd(g, acc):
            acc(a, g * b.value)
            acc(b, g * a.value)
        return self._record("hadamard", val, (a, b), bwd)

    def row_broadcast_mul(self, x, v):
        """Multiply every row of x by the 1 x d row vector v."""
        if v.shape != (1, x.shape[1]):
            raise ShapeError(f"row_broadcast_mul {x.shape} * {v.shape}")
        val = x.value * v.value

        def bwd(g, acc):
            acc(x, g * v.value)
            acc(v, (g * x.value).sum(axis=0, keepdims=True))
        return self._record("row_broadcast_mul", val, (x, v), bwd)

    def add(self, a, b):
        if a.shape != b.shape:
            raise ShapeError(f"add {a.shape} vs {b.shape}")
        val = a.value + b.value

        def bwd(g, acc):
            acc(a, g)
            acc(b, g)
        return self._record("add", val, (a, b), bwd)

    def scale(self, x, c):
        c = float(c)
        val = x.value * c

        def bwd(g, acc):
            acc(x, g * c)
        return self._record("scale", val, (x,), bwd)

    def concat_cols(self, a, b):
        if a.shape[0] != b.shape[0]:
            raise ShapeError(f"concat_cols {a.shape} vs {b.shape}")
        val = np.concatenate([a.value, b.value], axis=1)
        da = a.shape[1]

        def bwd(g, acc):
            acc(a, g[:, :da])
            acc(b, g[:, da:])
        return self._record("concat_cols", val, (a, b), bwd)

    def relu(self, x):
        val = np.maximum(x.value, 0.0)
        gate = x.value > 0.0

        def bwd(g, acc):
            acc(x, g * gate)
        return self._record("relu", val, (x,), bwd)

    def elu(self, x):
        pos = x.value > 0.0
        expm1 = np.expm1(np.minimum(x.value, 0.0))
        val = np.where(pos, x.value, expm1)

        def bwd(g, acc):
            acc(x, g * np.where(pos, 1.0, expm1 + 1.0))
        return self._record("elu", val, (x,), bwd)

    def tanh(self, x):
        val = np.tanh(x.value)

        def bwd(g, acc):
            acc(x, g * (1.0 - val * val))
        return self._record("tanh", val, (x,), bwd)

    def dropout(self, x, p, training, mask=None):
        """Inverted-scaling dropout; evaluation mode is the identity.

        mask overrides the random draw (boolean keep matrix), used when
        two forward passes must share one mask.
        """
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"dropout p must be in [0,1), got {p}")
        if not training or p == 0.0:
            val = x.value

            def bwd(g, acc):
                acc(x, g)
            return self._record("dropout", val, (x,), bwd)
        if mask is None:
            if self.rng is None:
                raise ConfigError("training dropout needs a seeded tape rng")
            mask = self.rng.random(x.shape) >= p
        scaled = mask.astype(np.float64) / (1.0 - p)
        val = x.value * scaled

        def bwd(g, acc):
            acc(x, g * scaled)
        return self._record("dropout", val, (x,), bwd)

    def l2_row_normalize(self, x):
        """Rows scaled to unit L2 norm; rows with norm < 1e-12 map to zero."""
        norms = np.sqrt((x.value * x.value).sum(axis=1, keepdims=True))
        alive = norms > _ZERO_ROW_TOL
        safe = np.where(alive, norms, 1.0)
        val = np.where(alive, x.value / safe, 0.0)

        def bwd(g, acc):
            dot = (g * x.value).sum(axis=1, keepdims=True)
            grad = np.where(alive, g / safe - x.value * dot / safe**3, 0.0)
            acc(x, grad)
        return self._record("l2_row_normalize", val, (x,), bwd)

    def log_softmax_rows(self, x):
        shifted = x.value - x.value.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        val = shifted - lse
        soft = np.exp(val)

        def bwd(g, acc):
            acc(x, g - soft * g.sum(axis=1, keepdims=True))
        return self._record("log_softmax_rows", val, (x,), bwd)

    def gather_rows(self, x, idx):
        idx = np.asarray(idx, dtype=np.int64)
        if idx.ndim != 1:
            raise ShapeError("gather_rows index must be 1-D")
        val = x.value[idx]
        n = x.shape[0]

        def bwd(g, acc):
            out = np.zeros((n, g.shape[1]))
            np.add.at(out, idx, g)
            acc(x, out)
        return self._record("gather_rows", val, (x,), bwd)

    def mean_scalar(self, x):
        size = x.value.size
        val = np.array([[x.value.mean()]])

        def bwd(g, acc):
            acc(x, np.full(x.shape, g[0, 0] / size))
        return self._record("mean_scalar", val, (x,), bwd)

    def neg(self, x):
        def bwd(g, acc):
            acc(x, -g)
        return self._record("neg", -x.value, (x,), bwd)

    def transpose(self, x):
        val = np.ascontiguousarray(x.value.T)

        def bwd(g, acc):
            acc(x, g.T)
        return self._record("transpose", val, (x,), bwd)

    def rsqrt(self, x, eps=1e-12):
        """1/sqrt(max(x, eps)); zero gradient where the clamp binds."""
        clamped = np.maximum(x.value, eps)
        val = 1.0 / np.sqrt(clamped)
        free = x.value > eps

        def bwd(g, acc):
            acc(x, np.where(free, -0.5 * g * val / clamped, 0.0))
        return self._record("rsqrt", val, (x,), bwd)

    def exp(self, x):
        val = np.exp(x.value)

        def bwd(g, acc):
            acc(x, g * val)
        return self._record("exp", val, (x,), bwd)

    def log(self, x):
        if self.checked and np.any(x.value <= 0.0):
            raise ShapeError("log requires strictly positive input")
        val = np.log(x.value)

        def bwd(g, acc):
            acc(x, g / x.value)
        return self._record("log", val, (x,), bwd)

    def sigmoid(self, x):
        val = np.where(x.value >= 0,
                       1.0 / (1.0 + np.exp(-np.abs(x.value))),
                       np.exp(-np.abs(x.value))
                       / (1.0 + np.exp(-np.abs(x.value))))

        def bwd(g, acc):
            acc(x, g * val * (1.0 - val))
        return self._record("sigmoid", val, (x,), bwd)

    def scalar_mul(self, s, x):
        """Broadcast a 1x1 node over a matrix node."""
        if s.shape != (1, 1):
            raise ShapeError(f"scalar_mul scalar must be 1x1, got {s.shape}")
        c = s.value[0, 0]
        val = x.value * c

        def bwd(g, acc):
            acc(x, g * c)
            acc(s, np.array([[(g * x.value).sum()]]))
        return self._record("scalar_mul", val, (s, x), bwd)

    # -- composites ----------------------------------------------------

    def cosine_similarity_matrix(self, a, b):
        """Pairwise cosine similarities; zero rows score 0 against everything."""
        if a.shape[1] != b.shape[1]:
            raise ShapeError(f"cosine_similarity_matrix {a.shape} vs {b.shape}")
        return self.matmul(self.l2_row_normalize(a),
                           self.transpose(self.l2_row_normalize(b)))

    def activation(self, x, kind):
        if kind == "elu":
            return self.elu(x)
        if kind == "relu":
            return self.relu(x)
        if kind == "tanh":
            return self.tanh(x)
        raise ConfigError(f"unknown activation {kind!r}")

    # -- backward ------------------------------------------------------

    def backward(self, loss):
        """Gradients of a 1x1 loss for every trainable leaf on the tape."""
        if loss.shape != (1, 1):
            raise ContractError(f"loss must be scalar, got shape {loss.shape}")
        grads = {loss.id: np.ones((1, 1))}

        def acc(node, g):
            got = grads.get(node.id)
            if got is None:
                # unconditional copy: backward rules may hand out aliases
                grads[node.id] = np.array(g)
            else:
                got += g

        for node in reversed(self.nodes[:loss.id + 1]):
            g = grads.get(node.id)
            if g is None or node.backward_fn is None:
                continue
            node.backward_fn(g, acc)
        out = {}
        for p in self.parameters:
            out[p] = grads.get(p.id)
            if out[p] is None:
                out[p] = np.zeros(p.shape)
        return out

    def gradients_by_name(self, loss):
        return {p.name: g for p, g in self.backward(loss).items()}


def grad_check(builder, params, h=1e-5, max_coords=200, seed=0,
               skip_masks=None):
    """Max relative error between tape gradients and central differences.

    builder(params) must deterministically return (tape, loss_node,
    leaf_map name->Node). For parameters bigger than max_coords entries a
    uniform coordinate sample is checked. skip_masks maps a parameter
    name to a boolean array marking coordinates to exclude (the kink
    policy: callers mask coordinates sitting on activation kinks, e.g. a
    ReLU input that is exactly zero).
    """
    rng = np.random.default_rng(seed)
    params = {k: as_matrix(v) for k, v in params.items()}
    tape, loss, leaves = builder(params)
    grads = tape.backward(loss)
    ad = {name: grads[node] for name, node in leaves.items()}

    def loss_value(p):
        _, node, _ = builder(p)
        return float(node.value[0, 0])

    worst = 0.0
    for name in sorted(params):
        base = params[name]
        size = base.size
        coords = np.arange(size)
        if size > max_coords:
            coords = rng.choice(size, size=max_coords, replace=False)
            coords.sort()
        mask = None if skip_masks is None else skip_masks.get(name)
        for flat in coords:
            i, j = np.unravel_index(flat, base.shape)
            if mask is not None and mask[i, j]:
                continue
            bumped = {k: (v.copy() if k == name else v)
                      for k, v in params.items()}
            bumped[name][i, j] = base[i, j] + h
            up = loss_value(bumped)
            bumped[name][i, j] = base[i, j] - h
            down = loss_value(bumped)
            fd = (up - down) / (2.0 * h)
            g = ad[name][i, j]
            err = abs(g - fd) / max(1e-8, abs(g) + abs(fd))
            worst = max(worst, err)
    return worst
