"""Multi-domain self-supervised pretraining.

Per epoch every source graph is visited in input order; per graph the
refined adjacency pattern is recomputed from the current tokens, then
batches of nodes drive Adam steps on a two-term contrastive objective:
an identity-positive InfoNCE term plus a weighted term whose positives
are the refined-adjacency neighbourhoods. The result is a frozen
Checkpoint carrying the encoder, projection head, tokens, and per-domain
PCA bases.
"""

import io
import hashlib
import warnings
from dataclasses import dataclass, field, fields, replace
from typing import Dict, List, Optional

import numpy as np

from . import serialize
from .autodiff import Tape
from .encoder import EncoderParams, encode, glorot, init_encoder
from .errors import CheckpointError, ConfigError, ContractError
from .graphcore import CsrMatrix, degree_normalize_selfloops
from .pca import ProjectionBasis, fit_pca, project
from .refine import (RefineConfig, SparsePostprocessPlan, TokenSet,
                     fuse_views, sparsify, unify_features, unify_features_t,
                     fuse_views_t)

CHECKPOINT_MAGIC = b"MDGF"
CHECKPOINT_VERSION = 1

VARIANTS = ("full", "wo_refinedadj", "wo_sumtoken", "wo_topology",
            "wo_balance")


@dataclass
class PretrainConfig:
    learning_rate: float = 0.01
    epochs: int = 60
    batch_size: int = 128
    tau_c: float = 0.2
    unified_dim: int = 50
    seed: int = 0
    hidden_dim: int = 256
    n_layers: int = 3
    dropout: float = 0.1
    encoder_bias: bool = False
    token_activation: str = "elu"
    schedule: str = "per_epoch_roundrobin"
    fuse_normalized_adj: bool = False
    shared_dropout_mask: bool = False
    pca_center: bool = True
    variant: str = "full"
    gsl: RefineConfig = field(default_factory=RefineConfig)

    def __post_init__(self):
        if self.tau_c <= 0:
            raise ConfigError(f"tau_c must be positive, got {self.tau_c}")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.schedule not in ("per_epoch_roundrobin", "per_graph_full"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.token_activation not in ("elu", "relu", "tanh"):
            raise ConfigError(
                f"unknown token activation {self.token_activation!r}")

    @property
    def fused_width(self):
        if self.variant == "wo_topology":
            return self.unified_dim
        return 2 * self.unified_dim

    def to_text(self):
        lines = []
        for f in fields(self):
            if f.name == "gsl":
                for sub in fields(self.gsl):
                    lines.append(f"gsl.{sub.name}={getattr(self.gsl, sub.name)!r}")
            else:
                lines.append(f"{f.name}={getattr(self, f.name)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        raw = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, value = line.partition("=")
            raw[key.strip()] = value.strip()
        kwargs, gsl_kwargs = {}, {}
        for f in fields(cls):
            if f.name == "gsl":
                continue
            if f.name in raw:
                kwargs[f.name] = _coerce(raw[f.name], f.type)
        for f in fields(RefineConfig):
            key = f"gsl.{f.name}"
            if key in raw:
                gsl_kwargs[f.name] = _coerce(raw[key], f.type)
        return cls(gsl=RefineConfig(**gsl_kwargs), **kwargs)


def _coerce(text, typ):
    if typ in ("bool", bool):
        return text in ("True", "true", "1")
    if typ in ("int", int):
        return int(text)
    if typ in ("float", float):
        return float(text)
    return text.strip("'\"")


class Adam:
    """Adam with bias correction; per-parameter step counters so tokens
    stepped only during their own graph's batches stay symmetric."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = {}

    def step(self, params, grads):
        for name in sorted(grads):
            g = grads[name]
            p = params[name]
            m, v, t = self.state.get(name, (np.zeros_like(p),
                                            np.zeros_like(p), 0))
            t += 1
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            self.state[name] = (m, v, t)
            m_hat = m / (1 - self.beta1 ** t)
            v_hat = v / (1 - self.beta2 ** t)
            params[name] = p - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# -- projection head and losses ---------------------------------------------


def project_head_t(tape, z, w1, w2):
    """W2 @ elu(W1 @ z) rowwise, then L2 row-normalized."""
    return tape.l2_row_normalize(
        tape.matmul(tape.elu(tape.matmul(z, w1)), w2))


def project_head(z, w1, w2):
    tape = Tape(checked=False)
    return project_head_t(tape, tape.constant(z), tape.constant(w1),
                          tape.constant(w2)).value


def _nce_direction(tape, anchors, candidates, tau_c, eye):
    s = tape.scale(tape.cosine_similarity_matrix(anchors, candidates),
                   1.0 / tau_c)
    lsm = tape.log_softmax_rows(s)
    batch = anchors.shape[0]
    return tape.scale(tape.mean_scalar(tape.hadamard(lsm, eye)), batch)


def loss_identity_t(tape, z1, z2, tau_c):
    batch = z1.shape[0]
    if batch < 2:
        raise ConfigError("loss_identity needs a batch of at least 2")
    if z1.shape != z2.shape:
        raise ConfigError("view embeddings must share a shape")
    eye = tape.constant(np.eye(batch))
    fwd = _nce_direction(tape, z1, z2, tau_c, eye)
    bwd = _nce_direction(tape, z2, z1, tau_c, eye)
    return tape.neg(tape.scale(tape.add(fwd, bwd), 0.5))


def loss_identity(z1t, z2t, tau_c=0.2):
    tape = Tape(checked=False)
    return float(loss_identity_t(tape, tape.constant(z1t),
                                 tape.constant(z2t), tau_c).value[0, 0])


def _weighted_direction(tape, anchors, candidates, w, tau_c):
    keep = np.flatnonzero(w.sum(axis=1) > 0.0)
    if len(keep) == 0:
        raise ContractError(
            "every anchor has an empty positive row; batching bug")
    if len(keep) < w.shape[0]:
        warnings.warn(f"loss_refined skipped {w.shape[0] - len(keep)} "
                      "anchors with empty positive rows")
    s = tape.scale(tape.cosine_similarity_matrix(anchors, candidates),
                   1.0 / tau_c)
    probs = tape.exp(tape.log_softmax_rows(s))
    mass = tape.matmul(tape.hadamard(probs, tape.constant(w)),
                       tape.constant(np.ones((w.shape[1], 1))))
    return tape.mean_scalar(tape.log(tape.gather_rows(mass, keep)))


def loss_refined_t(tape, z1, z2, w, tau_c):
    """Positive mass weighted by the refined adjacency (a constant)."""
    batch = z1.shape[0]
    if batch < 2:
        raise ConfigError("loss_refined needs a batch of at least 2")
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (batch, batch):
        raise ConfigError(f"weight matrix must be {batch}x{batch}")
    fwd = _weighted_direction(tape, z1, z2, w, tau_c)
    bwd = _weighted_direction(tape, z2, z1, w.T.copy(), tau_c)
    return tape.neg(tape.scale(tape.add(fwd, bwd), 0.5))


def loss_refined(z1t, z2t, a_ref, tau_c=0.2):
    w = a_ref.to_dense() if isinstance(a_ref, CsrMatrix) else a_ref
    tape = Tape(checked=False)
    return float(loss_refined_t(tape, tape.constant(z1t),
                                tape.constant(z2t), w, tau_c).value[0, 0])


# -- per-graph training state -----------------------------------------------


class GraphState:
    """Frozen per-graph inputs plus the per-epoch refinement plan."""

    def __init__(self, graph, cfg, basis, lsh_seed):
        self.graph = graph
        self.basis = basis
        self.x_pca = project(graph.features, basis)
        self.a_norm = degree_normalize_selfloops(graph.adjacency,
                                                 eps=cfg.gsl.eps)
        self.a_fuse = (self.a_norm if cfg.fuse_normalized_adj
                       else graph.adjacency)
        self.lsh_seed = lsh_seed
        self.plan = None

    @property
    def n(self):
        return self.graph.n_nodes

    def token_names(self):
        d = self.graph.domain_id
        return f"token.domain.{d}", f"token.balance.{d}"

    def refresh_plan(self, params, cfg):
        if cfg.variant == "wo_refinedadj":
            self.plan = None
            return
        t_d, t_b = self.token_names()
        x_u = unify_features(self.x_pca, params[t_d], params["token.shared"],
                             cfg.token_activation)
        if cfg.variant == "wo_topology":
            h = x_u * params[t_b].reshape(1, -1)
        else:
            h = fuse_views(x_u, self.a_fuse, cfg.gsl.r, params[t_b])
        pattern = sparsify(h, cfg.gsl, seed=self.lsh_seed)
        rows, cols, _ = pattern.to_coo()
        self.plan = SparsePostprocessPlan(self.n, rows, cols, eps=cfg.gsl.eps)

    def batch_weights(self, vals, batch):
        """Refined-adjacency weights among batch nodes (detached)."""
        pos = np.full(self.n, -1, dtype=np.int64)
        pos[batch] = np.arange(len(batch))
        if self.plan is None:
            rows, cols, v = self.a_norm.to_coo()
        else:
            rows, cols = self.plan.u_rows, self.plan.u_cols
            v = np.asarray(vals).reshape(-1)
        m = (pos[rows] >= 0) & (pos[cols] >= 0)
        w = np.zeros((len(batch), len(batch)))
        w[pos[rows[m]], pos[cols[m]]] = v[m]
        return w


def _forward_batch(tape, state, nodes, enc_params, cfg, batch, training,
                   dropout_rng=None, fixed_weights=None):
    """Build the two views and the combined batch loss on the tape.

    fixed_weights pins the refined-adjacency loss weights to an earlier
    snapshot; training snapshots them fresh each step (they are
    constants either way — no gradient flows into the weights).
    """
    t_d_name, t_b_name = state.token_names()
    xp = tape.constant(state.x_pca)
    x1 = unify_features_t(tape, xp, nodes[t_d_name], nodes["token.shared"],
                          cfg.token_activation)
    a2 = vals = None
    if cfg.variant == "wo_refinedadj":
        a2 = state.a_norm
    else:
        if cfg.variant == "wo_topology":
            h = tape.row_broadcast_mul(x1, nodes[t_b_name])
        else:
            h = fuse_views_t(tape, x1, state.a_fuse, cfg.gsl.r,
                             nodes[t_b_name])
        vals = state.plan.values_node(tape, h)
        a2 = (state.plan, vals)
    weight_nodes = [nodes[f"encoder.W{i}"] for i in range(enc_params.n_layers)]
    bias_nodes = None
    if enc_params.biases is not None:
        bias_nodes = [nodes[f"encoder.b{i}"]
                      for i in range(enc_params.n_layers)]
    masks = (None, None)
    if training and cfg.shared_dropout_mask and cfg.dropout > 0:
        drawn = []
        hidden = x1.shape[0]
        for w in enc_params.weights[:-1]:
            drawn.append(dropout_rng.random((hidden, w.shape[1]))
                         >= cfg.dropout)
        masks = (drawn, drawn)
    z1 = encode(state.a_norm, x1, enc_params, training, tape,
                weight_nodes=weight_nodes, bias_nodes=bias_nodes,
                dropout_masks=masks[0])
    z2 = encode(a2, x1, enc_params, training, tape,
                weight_nodes=weight_nodes, bias_nodes=bias_nodes,
                dropout_masks=masks[1])
    z1b = tape.gather_rows(z1, batch)
    z2b = tape.gather_rows(z2, batch)
    t1 = project_head_t(tape, z1b, nodes["head.W1"], nodes["head.W2"])
    t2 = project_head_t(tape, z2b, nodes["head.W1"], nodes["head.W2"])
    if fixed_weights is None:
        w_bb = state.batch_weights(None if vals is None else vals.value,
                                   batch)
    else:
        w_bb = fixed_weights
    loss_id = loss_identity_t(tape, t1, t2, cfg.tau_c)
    loss_ref = loss_refined_t(tape, t1, t2, w_bb, cfg.tau_c)
    return tape.add(loss_id, loss_ref)


def _trainable_names(cfg, domain_ids, enc_params):
    names = []
    if cfg.variant != "wo_sumtoken":
        names.append("token.shared")
    for d in domain_ids:
        names.append(f"token.domain.{d}")
        if cfg.variant not in ("wo_balance", "wo_refinedadj"):
            names.append(f"token.balance.{d}")
    names.extend(f"encoder.W{i}" for i in range(enc_params.n_layers))
    if enc_params.biases is not None:
        names.extend(f"encoder.b{i}" for i in range(enc_params.n_layers))
    names.extend(["head.W1", "head.W2"])
    return names


def _used_param_names(cfg, domain_id, enc_params):
    """Parameters consumed by one graph's forward pass.

    Only these become tape leaves: an unused-but-registered leaf would
    report a zero gradient and let Adam's momentum drift it.
    """
    names = ["token.shared", f"token.domain.{domain_id}"]
    if cfg.variant != "wo_refinedadj":
        names.append(f"token.balance.{domain_id}")
    names.extend(f"encoder.W{i}" for i in range(enc_params.n_layers))
    if enc_params.biases is not None:
        names.extend(f"encoder.b{i}" for i in range(enc_params.n_layers))
    names.extend(["head.W1", "head.W2"])
    return names


def _make_batches(n, batch_size, rng):
    perm = rng.permutation(n)
    chunks = [perm[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def pretrain(graphs, cfg, log_rows=None):
    """Train on the source graphs and return the frozen Checkpoint.

    log_rows, when given, collects (epoch, graph_name, mean_loss) tuples.
    """
    if not graphs:
        raise ConfigError("pretrain needs at least one source graph")
    ids = [g.domain_id for g in graphs]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate source domain ids")
    for d in ids:
        if "," in d or "\n" in d or ":" in d:
            raise ConfigError(f"domain id {d!r} may not contain , : or newline")
    d = cfg.unified_dim
    ss = np.random.SeedSequence(cfg.seed)
    init_ss, batch_ss, drop_ss, lsh_ss = ss.spawn(4)
    init_rng = np.random.default_rng(init_ss)
    batch_rng = np.random.default_rng(batch_ss)
    drop_rng = np.random.default_rng(drop_ss)
    lsh_seeds = np.random.default_rng(lsh_ss).integers(0, 2**63, len(graphs))

    enc_params = init_encoder(init_rng, d, cfg.hidden_dim, cfg.n_layers,
                              cfg.dropout, bias=cfg.encoder_bias)
    h_out = enc_params.out_dim
    params = {}
    params["token.shared"] = np.ones(d)
    for g in graphs:
        params[f"token.domain.{g.domain_id}"] = np.ones(d)
        params[f"token.balance.{g.domain_id}"] = np.ones(cfg.fused_width)
    for i, w in enumerate(enc_params.weights):
        params[f"encoder.W{i}"] = w
    if enc_params.biases is not None:
        for i, b in enumerate(enc_params.biases):
            params[f"encoder.b{i}"] = b
    params["head.W1"] = glorot(init_rng, h_out, h_out)
    params["head.W2"] = glorot(init_rng, h_out, h_out)

    states = [GraphState(g, cfg, fit_pca(g.features, d, center=cfg.pca_center),
                         int(lsh_seeds[i]))
              for i, g in enumerate(graphs)]
    trainable = set(_trainable_names(cfg, ids, enc_params))
    optim = Adam(cfg.learning_rate)

    def run_graph_epoch(epoch, state):
        state.refresh_plan(params, cfg)
        enc_now = _enc_from_params(params, cfg)
        used = _used_param_names(cfg, state.graph.domain_id, enc_now)
        batches = _make_batches(state.n, cfg.batch_size, batch_rng)
        losses = []
        for b_idx, batch in enumerate(batches):
            tape = Tape(rng=drop_rng, checked=False)
            nodes = {name: tape.leaf(_as2d(params[name]),
                                     trainable=name in trainable, name=name)
                     for name in used}
            loss = _forward_batch(tape, state, nodes, enc_now, cfg, batch,
                                  training=True, dropout_rng=drop_rng)
            value = float(loss.value[0, 0])
            if not np.isfinite(value):
                raise ContractError(
                    f"non-finite loss at epoch {epoch}, graph "
                    f"{state.graph.name!r}, batch {b_idx}")
            losses.append(value)
            grads = tape.gradients_by_name(loss)
            optim.step(params, {k: _like(params[k], v)
                                for k, v in grads.items() if k in trainable})
        if log_rows is not None:
            log_rows.append((epoch, state.graph.name,
                             float(np.mean(losses)) if losses else 0.0))

    if cfg.schedule == "per_graph_full":
        for state in states:
            for epoch in range(cfg.epochs):
                run_graph_epoch(epoch, state)
    else:
        for epoch in range(cfg.epochs):
            for state in states:
                run_graph_epoch(epoch, state)

    tokens = TokenSet(
        domain_tokens={g.domain_id: params[f"token.domain.{g.domain_id}"]
                       .reshape(-1).copy() for g in graphs},
        shared_token=params["token.shared"].reshape(-1).copy(),
        balance_tokens={g.domain_id: params[f"token.balance.{g.domain_id}"]
                        .reshape(-1).copy() for g in graphs})
    return Checkpoint(
        encoder=_enc_from_params(params, cfg),
        head_w1=params["head.W1"].copy(),
        head_w2=params["head.W2"].copy(),
        token_set=tokens,
        pca_bases={s.graph.domain_id: s.basis for s in states},
        config=cfg,
        source_domain_ids=list(ids),
    )


def _as2d(value):
    arr = np.asarray(value, dtype=np.float64)
    return arr.reshape(1, -1) if arr.ndim == 1 else arr


def _like(ref, grad):
    return grad.reshape(ref.shape)


def _enc_from_params(params, cfg):
    weights = [params[f"encoder.W{i}"] for i in range(cfg.n_layers)]
    biases = None
    if cfg.encoder_bias:
        biases = [params[f"encoder.b{i}"].reshape(-1)
                  for i in range(cfg.n_layers)]
    return EncoderParams(weights=weights, biases=biases,
                         hidden_dim=cfg.hidden_dim, n_layers=cfg.n_layers,
                         dropout=cfg.dropout)


def make_loss_builder(graph, cfg, batch, pattern=None):
    """grad_check builder for the full pretraining loss, dropout off.

    Freezes the refinement pattern (computed from the initial parameters
    unless given) so finite differences see a smooth function.
    """
    basis = fit_pca(graph.features, cfg.unified_dim, center=cfg.pca_center)
    state = GraphState(graph, cfg, basis, lsh_seed=0)
    base = {"token.shared": np.ones(cfg.unified_dim),
            f"token.domain.{graph.domain_id}": np.ones(cfg.unified_dim),
            f"token.balance.{graph.domain_id}": np.ones(cfg.fused_width)}
    if pattern is None and cfg.variant != "wo_refinedadj":
        state.refresh_plan(base, cfg)
    elif pattern is not None:
        rows, cols, _ = pattern.to_coo()
        state.plan = SparsePostprocessPlan(state.n, rows, cols,
                                           eps=cfg.gsl.eps)
    batch = np.asarray(batch, dtype=np.int64)
    pin = {}

    def builder(param_arrays):
        if "weights" not in pin:
            # loss weights are constants per step: pin them at the first
            # evaluation point so finite differences see the same function
            pin["weights"] = _refined_weights(state, param_arrays, cfg,
                                              batch)
        tape = Tape(checked=False)
        nodes = {name: tape.leaf(_as2d(value), trainable=True, name=name)
                 for name, value in param_arrays.items()}
        enc_now = _enc_from_params(param_arrays, cfg)
        loss = _forward_batch(tape, state, nodes, enc_now, cfg, batch,
                              training=False, fixed_weights=pin["weights"])
        return tape, loss, nodes

    return state, builder


def _refined_weights(state, params, cfg, batch):
    """Detached refined-adjacency weights among batch nodes."""
    if state.plan is None:
        return state.batch_weights(None, batch)
    tape = Tape(checked=False)
    t_d, t_b = state.token_names()
    x1 = unify_features_t(tape, tape.constant(state.x_pca),
                          tape.constant(_as2d(params[t_d])),
                          tape.constant(_as2d(params["token.shared"])),
                          cfg.token_activation)
    if cfg.variant == "wo_topology":
        h = tape.row_broadcast_mul(x1, tape.constant(_as2d(params[t_b])))
    else:
        h = fuse_views_t(tape, x1, state.a_fuse, cfg.gsl.r,
                         tape.constant(_as2d(params[t_b])))
    vals = state.plan.values_node(tape, h)
    return state.batch_weights(vals.value, batch)


# -- checkpoint i/o -----------------------------------------------------------


@dataclass
class Checkpoint:
    encoder: EncoderParams
    head_w1: np.ndarray
    head_w2: np.ndarray
    token_set: TokenSet
    pca_bases: Dict[str, ProjectionBasis]
    config: PretrainConfig
    source_domain_ids: List[str]


def _checkpoint_sections(cp):
    yield "config", cp.config.to_text().encode("utf-8")
    yield "domains", ",".join(cp.source_domain_ids).encode("utf-8")
    yield "token:shared", serialize.pack_array(cp.token_set.shared_token)
    for d in cp.source_domain_ids:
        yield (f"token:domain:{d}",
               serialize.pack_array(cp.token_set.domain_tokens[d]))
        yield (f"token:balance:{d}",
               serialize.pack_array(cp.token_set.balance_tokens[d]))
        basis = cp.pca_bases[d]
        yield f"pca:{d}:mean", serialize.pack_array(basis.mean)
        yield f"pca:{d}:basis", serialize.pack_array(basis.basis)
        yield f"pca:{d}:var", serialize.pack_array(basis.explained_variance)
    for i, w in enumerate(cp.encoder.weights):
        yield f"encoder:W{i}", serialize.pack_array(w)
    if cp.encoder.biases is not None:
        for i, b in enumerate(cp.encoder.biases):
            yield f"encoder:b{i}", serialize.pack_array(b)
    yield "head:W1", serialize.pack_array(cp.head_w1)
    yield "head:W2", serialize.pack_array(cp.head_w2)


def checkpoint_bytes(cp):
    buf = io.BytesIO()
    serialize.write_sections(buf, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
                             _checkpoint_sections(cp))
    return buf.getvalue()


def save_checkpoint(cp, path):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(cp))


def checkpoint_checksum(cp):
    return hashlib.sha256(checkpoint_bytes(cp)).hexdigest()


def load_checkpoint(path):
    with open(path, "rb") as fh:
        sections = serialize.read_sections(fh, CHECKPOINT_MAGIC,
                                           CHECKPOINT_VERSION)
    try:
        cfg = PretrainConfig.from_text(sections["config"].decode("utf-8"))
        ids = sections["domains"].decode("utf-8").split(",")
        tokens = TokenSet(
            domain_tokens={d: serialize.unpack_array(
                sections[f"token:domain:{d}"]) for d in ids},
            shared_token=serialize.unpack_array(sections["token:shared"]),
            balance_tokens={d: serialize.unpack_array(
                sections[f"token:balance:{d}"]) for d in ids})
        bases = {}
        for d in ids:
            bases[d] = ProjectionBasis(
                mean=serialize.unpack_array(sections[f"pca:{d}:mean"]),
                basis=serialize.unpack_array(sections[f"pca:{d}:basis"]),
                explained_variance=serialize.unpack_array(
                    sections[f"pca:{d}:var"]),
                target_dim=cfg.unified_dim)
        weights = [serialize.unpack_array(sections[f"encoder:W{i}"])
                   for i in range(cfg.n_layers)]
        biases = None
        if cfg.encoder_bias:
            biases = [serialize.unpack_array(sections[f"encoder:b{i}"])
                      for i in range(cfg.n_layers)]
        encoder_params = EncoderParams(
            weights=weights, biases=biases, hidden_dim=cfg.hidden_dim,
            n_layers=cfg.n_layers, dropout=cfg.dropout)
        return Checkpoint(
            encoder=encoder_params,
            head_w1=serialize.unpack_array(sections["head:W1"]),
            head_w2=serialize.unpack_array(sections["head:W2"]),
            token_set=tokens, pca_bases=bases, config=cfg,
            source_domain_ids=ids)
    except KeyError as exc:
        raise CheckpointError(f"missing checkpoint section {exc}") from None
