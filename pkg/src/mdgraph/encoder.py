"""Shared L-layer graph-convolution encoder.

The propagation operand can be a constant CsrMatrix (the normalized
original adjacency) or a (SparsePostprocessPlan, values-node) pair so
the refined adjacency keeps its gradient path into the tokens.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import ConfigError, ShapeError
from .graphcore import CsrMatrix
from .refine import SparsePostprocessPlan


@dataclass
class EncoderParams:
    weights: List[np.ndarray]
    biases: Optional[List[np.ndarray]] = None
    hidden_dim: int = 256
    n_layers: int = 3
    dropout: float = 0.1

    def __post_init__(self):
        if self.n_layers < 1 or len(self.weights) != self.n_layers:
            raise ConfigError("encoder needs one weight matrix per layer")
        for a, b in zip(self.weights, self.weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise ShapeError("consecutive encoder layers do not compose")

    @property
    def in_dim(self):
        return self.weights[0].shape[0]

    @property
    def out_dim(self):
        return self.weights[-1].shape[1]


def glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_encoder(rng, in_dim, hidden_dim=256, n_layers=3, dropout=0.1,
                 out_dim=None, bias=False):
    out_dim = hidden_dim if out_dim is None else out_dim
    dims = [in_dim] + [hidden_dim] * (n_layers - 1) + [out_dim]
    weights = [glorot(rng, dims[i], dims[i + 1]) for i in range(n_layers)]
    biases = [np.zeros(dims[i + 1]) for i in range(n_layers)] if bias else None
    return EncoderParams(weights=weights, biases=biases,
                         hidden_dim=hidden_dim, n_layers=n_layers,
                         dropout=dropout)


def _propagate(tape, a, h):
    if isinstance(a, CsrMatrix):
        return tape.spmm_const_sparse(a, h)
    if isinstance(a, tuple) and isinstance(a[0], SparsePostprocessPlan):
        plan, vals = a
        return plan.propagate(tape, vals, h)
    return tape.matmul(a, h)  # dense adjacency node


def encode(a, x, params, training, tape, weight_nodes=None, bias_nodes=None,
           dropout_masks=None):
    """Forward pass: H_{l+1} = elu(dropout(a @ H_l @ W_l)); the final
    layer is linear (no dropout, no activation). Returns a tape node.

    weight_nodes (and bias_nodes when biases exist) override the frozen
    constants built from params — the pretrainer passes trainable leaves.
    dropout_masks optionally pins the per-layer keep masks so two views
    can share them.
    """
    h = x if hasattr(x, "value") else tape.constant(np.asarray(x, float))
    if h.shape[1] != params.in_dim:
        raise ShapeError(
            f"encoder expects width {params.in_dim}, got {h.shape[1]}")
    if weight_nodes is None:
        weight_nodes = [tape.constant(w) for w in params.weights]
    if params.biases is not None and bias_nodes is None:
        bias_nodes = [tape.constant(b.reshape(1, -1)) for b in params.biases]
    n = h.shape[0]
    for layer in range(params.n_layers):
        h = _propagate(tape, a, tape.matmul(h, weight_nodes[layer]))
        if bias_nodes is not None:
            ones = tape.constant(np.ones((n, 1)))
            h = tape.add(h, tape.matmul(ones, bias_nodes[layer]))
        if layer < params.n_layers - 1:
            mask = None if dropout_masks is None else dropout_masks[layer]
            h = tape.elu(tape.dropout(h, params.dropout, training, mask=mask))
    return h
