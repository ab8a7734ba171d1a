"""Experiment orchestration: fixtures, random edge attacks, the
pretrain -> adapt -> evaluate pipeline over resampled tasks, ablation
variants, and CSV reporting.
"""

import configparser
import hashlib
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .adapt import DEFAULT_PROTO_TAU, DEFAULT_RESAMPLES, sample_kshot, tune
from .errors import ConfigError, DataError, StageError
from .graphcore import Graph, compute_stats, csr_from_coo, load_graph
from .pca import fit_pca, project
from .pretrain import (Checkpoint, PretrainConfig, load_checkpoint, pretrain,
                       save_checkpoint)
from .refine import RefineConfig

# per-dataset settings used in the reference experiments
DATASET_HYPERPARAMS = {
    "cora":      {"pretrain_lr": 0.0075, "downstream_lr": 0.001,
                  "epochs": 60, "unified_dim": 50, "dropout": 0.1, "k": 30},
    "citeseer":  {"pretrain_lr": 0.001, "downstream_lr": 0.001,
                  "epochs": 60, "unified_dim": 50, "dropout": 0.1, "k": 30},
    "pubmed":    {"pretrain_lr": 0.0001, "downstream_lr": 0.0015,
                  "epochs": 60, "unified_dim": 50, "dropout": 0.1, "k": 30},
    "squirrel":  {"pretrain_lr": 0.01, "downstream_lr": 0.0003,
                  "epochs": 100, "unified_dim": 50, "dropout": 0.1, "k": 15},
    "chameleon": {"pretrain_lr": 0.02, "downstream_lr": 0.01,
                  "epochs": 100, "unified_dim": 50, "dropout": 0.1, "k": 15},
    "cornell":   {"pretrain_lr": 0.02, "downstream_lr": 0.0003,
                  "epochs": 100, "unified_dim": 50, "dropout": 0.1, "k": 15},
    "penn94":    {"pretrain_lr": 0.0001, "downstream_lr": 0.003,
                  "epochs": 100, "unified_dim": 50, "dropout": 0.1, "k": 30},
}

# published reference rows used as ingestion-time sanity checks
REFERENCE_STATS = {
    "cora":      {"nodes": 2708, "edges": 10556, "feature_dim": 1433,
                  "classes": 7, "homophily": 0.810},
    "citeseer":  {"nodes": 3327, "edges": 9104, "feature_dim": 3703,
                  "classes": 6, "homophily": 0.736},
    "pubmed":    {"nodes": 19717, "edges": 88648, "feature_dim": 500,
                  "classes": 3, "homophily": 0.802},
    "squirrel":  {"nodes": 5201, "edges": 396846, "feature_dim": 2089,
                  "classes": 5, "homophily": 0.222},
    "chameleon": {"nodes": 2277, "edges": 62792, "feature_dim": 2325,
                  "classes": 5, "homophily": 0.231},
    "cornell":   {"nodes": 183, "edges": 298, "feature_dim": 1703,
                  "classes": 5, "homophily": 0.305},
    "penn94":    {"nodes": 41554, "edges": 2724458, "feature_dim": 4814,
                  "classes": 2, "homophily": 0.510},
}

FIXTURE_KINDS = ("sbm_homophilic", "sbm_heterophilic")


@dataclass
class DatasetPaths:
    domain_id: str
    edges: str
    features: str
    labels: Optional[str] = None

    def load(self, name=None):
        return load_graph(self.edges, self.features, self.labels,
                          domain_id=self.domain_id,
                          name=name or self.domain_id)


@dataclass
class AttackSpec:
    mode: str               # "add" | "delete"
    ratio: float
    scope: str = "all"      # "sources" | "target" | "all"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("add", "delete"):
            raise ConfigError(f"unknown attack mode {self.mode!r}")
        if not 0.0 <= self.ratio <= 1.0:
            raise ConfigError(f"attack ratio must be in [0,1], got {self.ratio}")
        if self.scope not in ("sources", "target", "all"):
            raise ConfigError(f"unknown attack scope {self.scope!r}")


def attack_random(g, spec):
    """Randomly add or delete floor(ratio * E) undirected edges.

    Deletion samples existing edges uniformly without replacement; adds
    sample uniformly from the non-edges (self-loops excluded), capping
    at the available count with a warning. Features and labels pass
    through untouched; the output adjacency is re-canonicalized.
    """
    n = g.n_nodes
    rows, cols, _ = g.adjacency.to_coo()
    upper = rows < cols
    pairs = np.stack([rows[upper], cols[upper]], axis=1) if upper.any() \
        else np.zeros((0, 2), dtype=np.int64)
    n_edges = len(pairs)
    m = int(spec.ratio * n_edges)
    if m == 0:
        return g
    rng = np.random.default_rng(spec.seed)
    if spec.mode == "delete":
        keep = np.sort(rng.choice(n_edges, size=n_edges - m, replace=False))
        new_pairs = pairs[keep]
    else:
        existing = set(map(tuple, pairs.tolist()))
        possible = n * (n - 1) // 2 - n_edges
        if m > possible:
            warnings.warn(f"only {possible} non-edges available; "
                          f"adding {possible} instead of {m}")
            m = possible
        added = set()
        attempts = 0
        budget = 100 * m + 10000
        while len(added) < m and attempts < budget:
            u = int(rng.integers(0, n))
            v = int(rng.integers(0, n))
            attempts += 1
            if u == v:
                continue
            p = (min(u, v), max(u, v))
            if p in existing or p in added:
                continue
            added.add(p)
        if len(added) < m:  # dense leftovers: enumerate leftover non-edges
            leftovers = [(i, j) for i in range(n) for j in range(i + 1, n)
                         if (i, j) not in existing and (i, j) not in added]
            picked = rng.choice(len(leftovers), size=m - len(added),
                                replace=False)
            added.update(leftovers[t] for t in picked)
        merged = sorted(existing | added)
        new_pairs = np.array(merged, dtype=np.int64)
    if len(new_pairs) == 0:
        adj = csr_from_coo(n, n, [], [], [])
    else:
        r = np.concatenate([new_pairs[:, 0], new_pairs[:, 1]])
        c = np.concatenate([new_pairs[:, 1], new_pairs[:, 0]])
        adj = csr_from_coo(n, n, r, c, np.ones(len(r)))
    return g.with_adjacency(adj)


def make_fixture(kind, n, classes, p_in, p_out, d_raw, noise, seed,
                 out_dir, name=None):
    """Generate a stochastic-block-model dataset and write its three files.

    Block labels are (nearly) equal-sized; features are a one-hot class
    signal plus Gaussian noise of the given scale in d_raw dimensions.
    Returns (DatasetPaths, Graph).
    """
    if kind not in FIXTURE_KINDS:
        raise ConfigError(f"unknown fixture kind {kind!r}")
    if not (0.0 <= p_in <= 1.0 and 0.0 <= p_out <= 1.0):
        raise ConfigError("p_in and p_out must lie in [0,1]")
    if kind == "sbm_homophilic" and p_in <= p_out:
        raise ConfigError("homophilic fixture needs p_in > p_out")
    if kind == "sbm_heterophilic" and p_in >= p_out:
        raise ConfigError("heterophilic fixture needs p_in < p_out")
    if classes < 2 or n < classes:
        raise ConfigError("need at least 2 classes and n >= classes")
    if d_raw < classes:
        raise ConfigError("d_raw must be at least the class count")
    rng = np.random.default_rng(seed)
    sizes = [n // classes + (1 if i < n % classes else 0)
             for i in range(classes)]
    labels = np.repeat(np.arange(classes), sizes)
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, p_in, p_out)
    draw = rng.random((n, n))
    mask = np.triu(draw < prob, k=1)
    rows, cols = np.nonzero(mask)
    feats = noise * rng.standard_normal((n, d_raw))
    feats[np.arange(n), labels] += 1.0
    name = name or kind
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    edge_path = out / f"{name}_edges.tsv"
    feat_path = out / f"{name}_feats.csv"
    label_path = out / f"{name}_labels.txt"
    with open(edge_path, "w", encoding="utf-8") as fh:
        fh.write(f"# sbm fixture {name}: n={n} C={classes} "
                 f"p_in={p_in} p_out={p_out} seed={seed}\n")
        for u, v in zip(rows, cols):
            fh.write(f"{u}\t{v}\n")
    np.savetxt(feat_path, feats, delimiter=",", fmt="%.17g")
    with open(label_path, "w", encoding="utf-8") as fh:
        fh.writelines(f"{c}\n" for c in labels)
    paths = DatasetPaths(domain_id=name, edges=str(edge_path),
                         features=str(feat_path), labels=str(label_path))
    return paths, paths.load()


def dataset_stats(datasets):
    """DatasetStats per dataset, with a warning when a known dataset's
    homophily strays from the published reference by > 0.01."""
    out = []
    for ds in datasets:
        stats = compute_stats(ds.load())
        ref = REFERENCE_STATS.get(stats.name.lower())
        if ref and abs(stats.homophily_ratio - ref["homophily"]) > 0.01:
            warnings.warn(
                f"{stats.name}: homophily {stats.homophily_ratio:.3f} "
                f"deviates from the reference {ref['homophily']:.3f}")
        out.append(stats)
    return out


@dataclass
class ExperimentConfig:
    sources: List[DatasetPaths]
    target: DatasetPaths
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    adapt_k: Optional[int] = None
    adapt_lr: float = 0.01
    adapt_epochs: int = 50
    adapt_tau: float = DEFAULT_PROTO_TAU
    shots: int = 1
    resamples: int = DEFAULT_RESAMPLES
    n_repeats: int = 5
    attack: Optional[AttackSpec] = None
    out_dir: str = "out"
    cache_dir: Optional[str] = None
    master_seed: int = 0

    def __post_init__(self):
        if not self.sources:
            raise ConfigError("experiment needs at least one source dataset")
        ids = [s.domain_id for s in self.sources]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate source domain ids")
        if self.target.domain_id in ids:
            raise ConfigError("target must not be among the sources")

    def adapt_refine(self):
        base = self.pretrain.gsl
        k = self.adapt_k if self.adapt_k is not None else base.k
        return RefineConfig(k=k, r=base.r, lsh_batch=base.lsh_batch,
                            eps=base.eps)


def _derived_seed(*parts):
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def upstream_cache_key(cfg, repeat, pretrain_seed):
    """Hash of everything pretraining depends on; downstream fields
    (target, shots, learning rates, resamples) stay out on purpose."""
    h = hashlib.sha256()
    for s in cfg.sources:
        h.update(f"{s.domain_id}|{s.edges}|{s.features}|{s.labels}\n"
                 .encode("utf-8"))
    h.update(cfg.pretrain.to_text().encode("utf-8"))
    if cfg.attack is not None and cfg.attack.scope in ("sources", "all"):
        a = cfg.attack
        h.update(f"attack|{a.mode}|{a.ratio}|{a.scope}|{a.seed}|{repeat}"
                 .encode("utf-8"))
    h.update(f"repeat={repeat};seed={pretrain_seed}".encode("utf-8"))
    return h.hexdigest()


@dataclass
class ExperimentResult:
    mean: float
    std: float
    n: int
    formatted: str
    accuracies: List[float]
    tasks_path: str
    summary_path: str
    log_path: str


def format_mean_std(mean, std):
    """Percent with two decimals, e.g. 44.83±7.41."""
    return f"{100 * mean:.2f}±{100 * std:.2f}"


def run_experiment(cfg):
    """Full pipeline: attack, pretrain (or reuse cache), tune + evaluate
    over n_repeats x resamples tasks, write tasks/summary/pretrain logs."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = Path(cfg.cache_dir) if cfg.cache_dir else out / "checkpoints"
    cache.mkdir(parents=True, exist_ok=True)

    def stage(name, seed, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except Exception as exc:
            raise StageError(name, seed, exc) from exc

    sources = [stage("load_source", cfg.master_seed, s.load)
               for s in cfg.sources]
    target = stage("load_target", cfg.master_seed, cfg.target.load)

    task_rows = []
    accuracies = []
    log_rows_all = []
    for repeat in range(cfg.n_repeats):
        pre_seed = _derived_seed(cfg.master_seed, repeat, 0xA9E)
        srcs = sources
        tgt = target
        if cfg.attack is not None and cfg.attack.ratio > 0:
            if cfg.attack.scope in ("sources", "all"):
                srcs = [stage("attack_source", pre_seed, attack_random, g,
                              replace(cfg.attack, seed=_derived_seed(
                                  cfg.attack.seed, cfg.master_seed,
                                  repeat, i)))
                        for i, g in enumerate(sources)]
            if cfg.attack.scope in ("target", "all"):
                tgt = stage("attack_target", pre_seed, attack_random, target,
                            replace(cfg.attack, seed=_derived_seed(
                                cfg.attack.seed, cfg.master_seed,
                                repeat, 999)))
        pcfg = replace(cfg.pretrain, seed=pre_seed)
        key = upstream_cache_key(cfg, repeat, pre_seed)
        ck_path = cache / f"{key}.ckpt"
        if ck_path.exists():
            cp = stage("load_checkpoint", pre_seed, load_checkpoint, ck_path)
            log_rows = []
        else:
            log_rows = []
            cp = stage("pretrain", pre_seed, pretrain, srcs, pcfg, log_rows)
            stage("save_checkpoint", pre_seed, save_checkpoint, cp, ck_path)
        log_rows_all.extend((repeat, e, g, v) for e, g, v in log_rows)

        basis = stage("target_pca", pre_seed, fit_pca, tgt.features,
                      cp.config.unified_dim, cp.config.pca_center)
        tgt_proj = tgt.with_features(project(tgt.features, basis))
        rcfg = cfg.adapt_refine()
        for t in range(cfg.resamples):
            task_seed = _derived_seed(cfg.master_seed, repeat, t, 0xF0)
            task = stage("sample_task", task_seed, sample_kshot,
                         tgt_proj.labels, cfg.shots, task_seed)
            _, acc = stage("tune", task_seed, tune, tgt_proj, cp, task,
                           cfg.adapt_epochs, cfg.adapt_lr, rcfg,
                           seed=task_seed, tau=cfg.adapt_tau)
            accuracies.append(acc)
            task_rows.append((task_seed, cfg.shots,
                              sum(len(v) for v in task.support.values()),
                              len(task.query), acc))

    mean = float(np.mean(accuracies))
    std = float(np.std(accuracies, ddof=1)) if len(accuracies) > 1 else 0.0
    tasks_path = out / "tasks.csv"
    with open(tasks_path, "w", encoding="utf-8") as fh:
        fh.write("seed,K,support_size,query_size,accuracy\n")
        for row in task_rows:
            fh.write(f"{row[0]},{row[1]},{row[2]},{row[3]},{row[4]:.6f}\n")
    summary_path = out / "summary.csv"
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write("mean,std,n,formatted\n")
        fh.write(f"{mean:.6f},{std:.6f},{len(accuracies)},"
                 f"{format_mean_std(mean, std)}\n")
    log_path = out / "pretrain_log.csv"
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write("repeat,epoch,graph,mean_loss\n")
        for repeat, epoch, gname, val in log_rows_all:
            fh.write(f"{repeat},{epoch},{gname},{val:.8f}\n")
    return ExperimentResult(mean=mean, std=std, n=len(accuracies),
                            formatted=format_mean_std(mean, std),
                            accuracies=accuracies,
                            tasks_path=str(tasks_path),
                            summary_path=str(summary_path),
                            log_path=str(log_path))


def ablate(cfg, variant):
    """Run the experiment under an ablation variant, reporting separately."""
    sub = replace(cfg,
                  pretrain=replace(cfg.pretrain, variant=variant),
                  out_dir=str(Path(cfg.out_dir) / variant))
    return run_experiment(sub)


# -- config file --------------------------------------------------------------


def _dataset_from_value(domain_id, value):
    parts = [p.strip() for p in value.split(",")]
    if len(parts) not in (2, 3):
        raise ConfigError(
            f"dataset {domain_id!r} must be 'edges,features[,labels]'")
    labels = parts[2] if len(parts) == 3 else None
    return DatasetPaths(domain_id=domain_id, edges=parts[0],
                        features=parts[1], labels=labels)


def load_experiment_config(path, overrides=()):
    """Parse the [section] key=value config file; overrides are
    'section.key=value' strings that win over file values."""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    read = parser.read(path)
    if not read:
        raise DataError(f"cannot read config file {path}")
    for item in overrides:
        key, _, value = item.partition("=")
        section, _, name = key.partition(".")
        if not section or not name or not _:
            raise ConfigError(f"override must be section.key=value: {item!r}")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, name, value)
    if "sources" not in parser or not parser["sources"]:
        raise ConfigError("config needs a [sources] section")
    if "target" not in parser or len(parser["target"]) != 1:
        raise ConfigError("config needs a [target] section with one dataset")
    sources = [_dataset_from_value(k, v) for k, v in parser["sources"].items()]
    tgt_name, tgt_value = next(iter(parser["target"].items()))
    target = _dataset_from_value(tgt_name, tgt_value)

    def section(name):
        return parser[name] if name in parser else {}

    pre = dict(section("pretrain"))
    gsl = dict(section("gsl"))
    pcfg = PretrainConfig(
        learning_rate=float(pre.get("learning_rate", 0.01)),
        epochs=int(pre.get("epochs", 60)),
        batch_size=int(pre.get("batch_size", 128)),
        tau_c=float(pre.get("tau_c", 0.2)),
        unified_dim=int(pre.get("unified_dim", 50)),
        hidden_dim=int(pre.get("hidden_dim", 256)),
        n_layers=int(pre.get("n_layers", 3)),
        dropout=float(pre.get("dropout", 0.1)),
        encoder_bias=pre.get("encoder_bias", "false").lower() == "true",
        token_activation=pre.get("token_activation", "elu"),
        schedule=pre.get("schedule", "per_epoch_roundrobin"),
        fuse_normalized_adj=(pre.get("fuse_normalized_adj", "false").lower()
                             == "true"),
        shared_dropout_mask=(pre.get("shared_dropout_mask", "false").lower()
                             == "true"),
        pca_center=pre.get("pca_center", "true").lower() == "true",
        variant=pre.get("variant", "full"),
        gsl=RefineConfig(
            k=int(gsl.get("k", 30)),
            r=int(gsl.get("r", 1)),
            lsh_batch=int(gsl.get("lsh_batch", 0)),
            eps=float(gsl.get("eps", 1e-12)),
        ),
    )
    ad = dict(section("adapt"))
    exp = dict(section("experiment"))
    att = dict(section("attack"))
    attack = None
    if att.get("mode"):
        attack = AttackSpec(mode=att["mode"],
                            ratio=float(att.get("ratio", 0.0)),
                            scope=att.get("scope", "all"),
                            seed=int(att.get("seed", 0)))
    return ExperimentConfig(
        sources=sources,
        target=target,
        pretrain=pcfg,
        adapt_k=int(ad["k"]) if "k" in ad else None,
        adapt_lr=float(ad.get("lr", 0.01)),
        adapt_epochs=int(ad.get("epochs", 50)),
        adapt_tau=float(ad.get("tau", DEFAULT_PROTO_TAU)),
        shots=int(ad.get("shots", 1)),
        resamples=int(ad.get("resamples", DEFAULT_RESAMPLES)),
        n_repeats=int(exp.get("n_repeats", 5)),
        attack=attack,
        out_dir=exp.get("out", "out"),
        cache_dir=exp.get("cache_dir") or None,
        master_seed=int(exp.get("seed", 0)),
    )
