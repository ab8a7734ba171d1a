"""Downstream adaptation: dual prompts over a frozen checkpoint, target
structure refinement, prototype classification, and K-shot task sampling.

Only the PromptState learns; every checkpoint value enters the tape as a
constant.
"""

import warnings
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .autodiff import Tape
from .encoder import encode
from .errors import ConfigError, PreconditionError, ShapeError, TaskError
from .graphcore import degree_normalize_selfloops
from .pretrain import Adam
from .refine import (RefineConfig, SparsePostprocessPlan, fuse_views_t,
                     sparsify)

DEFAULT_RESAMPLES = 50
DEFAULT_PROTO_TAU = 0.2


@dataclass
class PromptState:
    alpha_logits: np.ndarray   # (N,) softmax -> source mixture
    p_s: np.ndarray            # (d,) specific prompt
    beta_logit: float          # sigmoid -> meta/specific gate
    t_target: np.ndarray       # target balance token (2d, or d w/o topology)
    tau: float = DEFAULT_PROTO_TAU

    @classmethod
    def init(cls, cp, tau=DEFAULT_PROTO_TAU):
        """Uniform mixture, all-ones prompts, beta = 0.5."""
        n = len(cp.source_domain_ids)
        return cls(alpha_logits=np.zeros(n),
                   p_s=np.ones(cp.config.unified_dim),
                   beta_logit=0.0,
                   t_target=np.ones(cp.config.fused_width),
                   tau=tau)

    def copy(self):
        return PromptState(self.alpha_logits.copy(), self.p_s.copy(),
                           float(self.beta_logit), self.t_target.copy(),
                           self.tau)

    def as_params(self):
        return {"prompt.alpha": self.alpha_logits.reshape(1, -1).copy(),
                "prompt.ps": self.p_s.reshape(1, -1).copy(),
                "prompt.beta": np.array([[self.beta_logit]]),
                "prompt.balance": self.t_target.reshape(1, -1).copy()}

    @classmethod
    def from_params(cls, params, tau=DEFAULT_PROTO_TAU):
        return cls(alpha_logits=params["prompt.alpha"].reshape(-1).copy(),
                   p_s=params["prompt.ps"].reshape(-1).copy(),
                   beta_logit=float(params["prompt.beta"][0, 0]),
                   t_target=params["prompt.balance"].reshape(-1).copy(),
                   tau=tau)


@dataclass
class FewShotTask:
    K: int
    support: Dict[int, np.ndarray]
    query: np.ndarray
    seed: int

    def __post_init__(self):
        taken = set()
        for c, idx in self.support.items():
            idx = np.asarray(idx, dtype=np.int64)
            self.support[c] = idx
            if len(idx) != self.K:
                raise TaskError(f"class {c} has {len(idx)} support nodes, "
                                f"expected {self.K}")
            if taken & set(idx.tolist()):
                raise TaskError("support sets overlap")
            taken |= set(idx.tolist())
        self.query = np.asarray(self.query, dtype=np.int64)
        if taken & set(self.query.tolist()):
            raise TaskError("query overlaps a support set")

    @property
    def class_ids(self):
        return sorted(self.support)

    def support_concat(self):
        return np.concatenate([self.support[c] for c in self.class_ids])


def sample_kshot(labels, K, seed):
    """Uniform without-replacement K-shot sampling per class.

    Classes with fewer than K+1 labeled nodes are dropped with a
    warning; their nodes join neither support nor query.
    """
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    support, kept = {}, []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) < K + 1:
            warnings.warn(f"class {c} has {len(idx)} nodes; "
                          f"dropped from the {K}-shot task")
            continue
        chosen = rng.choice(idx, size=K, replace=False)
        support[int(c)] = np.sort(chosen)
        kept.append(int(c))
    if not support:
        raise TaskError(f"no class has {K + 1} labeled nodes")
    taken = np.concatenate(list(support.values()))
    in_kept = np.isin(labels, kept)
    query = np.setdiff1d(np.flatnonzero(in_kept), taken)
    return FewShotTask(K=K, support=support, query=query, seed=seed)


# -- prompt composition -------------------------------------------------------


def _token_matrix(cp):
    return np.stack([cp.token_set.domain_tokens[d]
                     for d in cp.source_domain_ids])


def meta_prompt_t(tape, x, prompt_nodes, cp):
    """Shared-token gated mixture of the frozen source-domain tokens."""
    n_src = len(cp.source_domain_ids)
    if prompt_nodes["prompt.alpha"].shape != (1, n_src):
        raise ShapeError(f"alpha logits must have length {n_src}")
    alpha = tape.exp(tape.log_softmax_rows(prompt_nodes["prompt.alpha"]))
    t_mix = tape.matmul(alpha, tape.constant(_token_matrix(cp)))
    gated = tape.activation(tape.row_broadcast_mul(x, t_mix),
                            cp.config.token_activation)
    return tape.row_broadcast_mul(
        gated, tape.constant(cp.token_set.shared_token.reshape(1, -1)))


def meta_prompt(x, ps, cp):
    tape = Tape(checked=False)
    nodes = {k: tape.constant(v) for k, v in ps.as_params().items()}
    return meta_prompt_t(tape, tape.constant(x), nodes, cp).value


def compose_input_t(tape, x, prompt_nodes, cp):
    """beta * meta_prompt(x) + (1 - beta) * (p_s * x)."""
    pm = meta_prompt_t(tape, x, prompt_nodes, cp)
    beta = tape.sigmoid(prompt_nodes["prompt.beta"])
    one_minus = tape.add(tape.neg(beta), tape.constant(np.ones((1, 1))))
    specific = tape.row_broadcast_mul(x, prompt_nodes["prompt.ps"])
    return tape.add(tape.scalar_mul(beta, pm),
                    tape.scalar_mul(one_minus, specific))


def compose_input(x, ps, cp):
    tape = Tape(checked=False)
    nodes = {k: tape.constant(v) for k, v in ps.as_params().items()}
    return compose_input_t(tape, tape.constant(x), nodes, cp).value


# -- target embedding ---------------------------------------------------------


def _fuse_target_t(tape, x_prime, g, prompt_nodes, cp, cfg):
    if cp.config.variant == "wo_topology":
        return tape.row_broadcast_mul(x_prime, prompt_nodes["prompt.balance"])
    a = g.adjacency
    if cp.config.fuse_normalized_adj:
        a = degree_normalize_selfloops(a, eps=cfg.eps)
    return fuse_views_t(tape, x_prime, a, cfg.r,
                        prompt_nodes["prompt.balance"])


def target_pattern(g, cp, ps, cfg, seed=0):
    """kNN pattern of the refined target structure under current prompts."""
    tape = Tape(checked=False)
    nodes = {k: tape.constant(v) for k, v in ps.as_params().items()}
    x_prime = compose_input_t(tape, tape.constant(g.features), nodes, cp)
    h = _fuse_target_t(tape, x_prime, g, nodes, cp, cfg)
    return sparsify(h.value, cfg, seed=seed)


def _embed_t(tape, g, cp, prompt_nodes, cfg, pattern, training=False):
    x_prime = compose_input_t(tape, tape.constant(g.features),
                              prompt_nodes, cp)
    if cp.config.variant == "wo_refinedadj":
        a2 = degree_normalize_selfloops(g.adjacency, eps=cfg.eps)
    else:
        rows, cols, _ = pattern.to_coo()
        plan = SparsePostprocessPlan(g.n_nodes, rows, cols, eps=cfg.eps)
        h = _fuse_target_t(tape, x_prime, g, prompt_nodes, cp, cfg)
        vals = plan.values_node(tape, h)
        a2 = (plan, vals)
    return encode(a2, x_prime, cp.encoder, training, tape)


def embed_target(g, cp, ps, cfg, training=False, pattern=None, seed=0):
    """Prompted, structure-refined embedding of the target graph.

    Features must already be PCA-projected to the unified width. The
    encoder stays frozen; the hidden kNN pattern is recomputed from the
    current prompts unless one is pinned.
    """
    if g.features.shape[1] != cp.config.unified_dim:
        raise ShapeError("target features must be projected to the "
                         f"unified width {cp.config.unified_dim}")
    if pattern is None and cp.config.variant != "wo_refinedadj":
        pattern = target_pattern(g, cp, ps, cfg, seed=seed)
    rng = np.random.default_rng(seed) if training else None
    tape = Tape(rng=rng, checked=False)
    nodes = {k: tape.constant(v) for k, v in ps.as_params().items()}
    return _embed_t(tape, g, cp, nodes, cfg, pattern, training).value


# -- prototype classification -------------------------------------------------


def prototypes(z, task):
    """Per-class mean of the support embeddings, rows ordered by class id."""
    z = np.asarray(z, dtype=np.float64)
    out = []
    for c in task.class_ids:
        idx = task.support[c]
        if len(idx) == 0:
            raise PreconditionError(f"class {c} has no support nodes")
        out.append(z[idx].mean(axis=0))
    return np.stack(out)


def _cosine_rows(a, b):
    def norm(m):
        n = np.sqrt((m * m).sum(axis=1, keepdims=True))
        alive = n > 1e-12
        return np.where(alive, m / np.where(alive, n, 1.0), 0.0)
    return norm(a) @ norm(b).T


def classify(z, protos, tau, labels=None, class_ids=None, literal=False):
    """Temperature-scaled cosine similarity to prototypes.

    Returns (predictions, loss). Predictions are class ids (ties go to
    the lower id). loss is the mean cross-entropy over the given labeled
    rows, or None when labels is None. literal=True swaps the softmax
    numerator for the raw scaled similarity (for comparison only; it can
    produce NaN when the similarity is non-positive).
    """
    if tau <= 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    z = np.asarray(z, dtype=np.float64)
    protos = np.asarray(protos, dtype=np.float64)
    if class_ids is None:
        class_ids = list(range(protos.shape[0]))
    logits = _cosine_rows(z, protos) / tau
    preds = np.asarray(class_ids, dtype=np.int64)[np.argmax(logits, axis=1)]
    loss = None
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        col = {c: i for i, c in enumerate(class_ids)}
        cols = np.array([col[int(y)] for y in labels])
        shifted = logits - logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        if literal:
            num = logits[np.arange(len(labels)), cols]
            lse_full = lse.ravel() + logits.max(axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                loss = float(np.mean(-(np.log(num) - lse_full)))
        else:
            logp = shifted - lse
            loss = float(np.mean(-logp[np.arange(len(labels)), cols]))
    return preds, loss


def _support_loss_t(tape, z, task, tau):
    """Cross-entropy of support nodes against on-tape prototypes."""
    class_ids = task.class_ids
    sup = task.support_concat()
    k = task.K
    c = len(class_ids)
    z_sup = tape.gather_rows(z, sup)
    avg = np.zeros((c, len(sup)))
    for i in range(c):
        avg[i, i * k:(i + 1) * k] = 1.0 / k
    protos = tape.matmul(tape.constant(avg), z_sup)
    logits = tape.scale(tape.cosine_similarity_matrix(z_sup, protos),
                        1.0 / tau)
    onehot = np.zeros((len(sup), c))
    for i in range(c):
        onehot[i * k:(i + 1) * k, i] = 1.0
    picked = tape.hadamard(tape.log_softmax_rows(logits),
                           tape.constant(onehot))
    return tape.neg(tape.scale(tape.mean_scalar(picked), c))


def make_support_loss_builder(g, cp, task, cfg, pattern):
    """grad_check builder for the downstream support loss (pattern pinned)."""

    def builder(param_arrays):
        tape = Tape(checked=False)
        nodes = {name: tape.leaf(value, trainable=True, name=name)
                 for name, value in param_arrays.items()}
        z = _embed_t(tape, g, cp, nodes, cfg, pattern, training=False)
        tau = DEFAULT_PROTO_TAU
        return tape, _support_loss_t(tape, z, task, tau), nodes

    return builder


def tune(g, cp, task, epochs, lr, cfg=None, seed=0, tau=DEFAULT_PROTO_TAU):
    """Prompt-tune on the support set; returns (PromptState, query accuracy).

    The checkpoint is read-only; prototypes are rebuilt from the current
    embeddings every epoch.
    """
    if g.labels is None:
        raise PreconditionError("tune requires a labeled target graph")
    cfg = cfg if cfg is not None else cp.config.gsl
    params = PromptState.init(cp, tau=tau).as_params()
    optim = Adam(lr)
    for _ in range(epochs):
        ps_now = PromptState.from_params(params, tau=tau)
        pattern = None
        if cp.config.variant != "wo_refinedadj":
            pattern = target_pattern(g, cp, ps_now, cfg, seed=seed)
        tape = Tape(checked=False)
        nodes = {name: tape.leaf(value, trainable=True, name=name)
                 for name, value in params.items()}
        z = _embed_t(tape, g, cp, nodes, cfg, pattern, training=False)
        loss = _support_loss_t(tape, z, task, ps_now.tau)
        grads = tape.gradients_by_name(loss)
        optim.step(params, {k: grads[k].reshape(params[k].shape)
                            for k in grads})
    ps = PromptState.from_params(params, tau=tau)
    z = embed_target(g, cp, ps, cfg, training=False, seed=seed)
    protos = prototypes(z, task)
    preds, _ = classify(z[task.query], protos, ps.tau,
                        class_ids=task.class_ids)
    accuracy = float(np.mean(preds == g.labels[task.query])) \
        if len(task.query) else 0.0
    return ps, accuracy
