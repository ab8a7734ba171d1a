"""Command-line entry point.

Subcommands: stats, fixture, pretrain, adapt, run, attack, ablate.
Exit codes: 0 success, 2 configuration error, 3 data error.
"""

import argparse
import sys
from pathlib import Path

from .errors import ConfigError, DataError, StageError
from .graphcore import DatasetStats, compute_stats, load_graph
from .harness import (DatasetPaths, AttackSpec, attack_random, ablate,
                      dataset_stats, load_experiment_config, make_fixture,
                      run_experiment)
from .pretrain import VARIANTS, load_checkpoint, pretrain, save_checkpoint


def _dataset_args(values):
    out = []
    for item in values:
        name, _, paths = item.partition("=")
        parts = [p.strip() for p in paths.split(",")]
        if not name or len(parts) not in (2, 3):
            raise ConfigError(
                f"dataset must be name=edges,features[,labels]: {item!r}")
        out.append(DatasetPaths(name, parts[0], parts[1],
                                parts[2] if len(parts) == 3 else None))
    return out


def cmd_stats(args):
    rows = dataset_stats(_dataset_args(args.datasets))
    lines = [DatasetStats.CSV_HEADER] + [r.csv_row() for r in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_fixture(args):
    paths, graph = make_fixture(args.kind, args.n, args.classes, args.p_in,
                                args.p_out, args.d_raw, args.noise,
                                args.seed, args.out, name=args.name)
    stats = compute_stats(graph)
    sys.stdout.write(DatasetStats.CSV_HEADER + "\n" + stats.csv_row() + "\n")
    sys.stdout.write(f"edges={paths.edges}\nfeatures={paths.features}\n"
                     f"labels={paths.labels}\n")
    return 0


def _load_config(args):
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"experiment.seed={args.seed}")
    if args.out is not None:
        overrides.append(f"experiment.out={args.out}")
    return load_experiment_config(args.config, overrides)


def cmd_pretrain(args):
    cfg = _load_config(args)
    graphs = [s.load() for s in cfg.sources]
    from dataclasses import replace
    log_rows = []
    cp = pretrain(graphs, replace(cfg.pretrain, seed=cfg.master_seed),
                  log_rows)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ck_path = out / "pretrained.ckpt"
    save_checkpoint(cp, ck_path)
    with open(out / "pretrain_log.csv", "w", encoding="utf-8") as fh:
        fh.write("epoch,graph,mean_loss\n")
        for epoch, gname, value in log_rows:
            fh.write(f"{epoch},{gname},{value:.8f}\n")
    sys.stdout.write(f"checkpoint={ck_path}\n")
    return 0


def cmd_adapt(args):
    from .adapt import sample_kshot, tune
    from .pca import fit_pca, project
    import numpy as np
    cfg = _load_config(args)
    cp = load_checkpoint(args.checkpoint)
    target = cfg.target.load()
    basis = fit_pca(target.features, cp.config.unified_dim,
                    center=cp.config.pca_center)
    target = target.with_features(project(target.features, basis))
    rcfg = cfg.adapt_refine()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for t in range(cfg.resamples):
        seed = cfg.master_seed * 100003 + t
        task = sample_kshot(target.labels, cfg.shots, seed)
        _, acc = tune(target, cp, task, cfg.adapt_epochs, cfg.adapt_lr,
                      rcfg, seed=seed, tau=cfg.adapt_tau)
        rows.append((seed, cfg.shots,
                     sum(len(v) for v in task.support.values()),
                     len(task.query), acc))
    accs = [r[4] for r in rows]
    mean = float(np.mean(accs))
    std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
    with open(out / "tasks.csv", "w", encoding="utf-8") as fh:
        fh.write("seed,K,support_size,query_size,accuracy\n")
        for r in rows:
            fh.write(f"{r[0]},{r[1]},{r[2]},{r[3]},{r[4]:.6f}\n")
        fh.write(f"summary,,,,{mean:.6f}±{std:.6f}\n")
    sys.stdout.write(f"accuracy={100 * mean:.2f}±{100 * std:.2f} "
                     f"over {len(accs)} tasks\n")
    return 0


def cmd_run(args):
    cfg = _load_config(args)
    result = run_experiment(cfg)
    sys.stdout.write(f"accuracy={result.formatted} over {result.n} tasks\n")
    sys.stdout.write(f"summary={result.summary_path}\n")
    return 0


def cmd_attack(args):
    g = load_graph(args.edges, args.features, args.labels,
                   domain_id=args.name, name=args.name)
    spec = AttackSpec(mode=args.mode, ratio=args.ratio, scope="all",
                      seed=args.seed)
    attacked = attack_random(g, spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    edge_path = out / f"{args.name}_edges.tsv"
    rows, cols, _ = attacked.adjacency.to_coo()
    with open(edge_path, "w", encoding="utf-8") as fh:
        for u, v in zip(rows, cols):
            if u < v:
                fh.write(f"{u}\t{v}\n")
    sys.stdout.write(f"edges={edge_path}\n")
    return 0


def cmd_ablate(args):
    cfg = _load_config(args)
    result = ablate(cfg, args.variant)
    sys.stdout.write(f"variant={args.variant} accuracy={result.formatted} "
                     f"over {result.n} tasks\n")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mdgraph",
        description="multi-domain graph pretraining and few-shot transfer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="dataset statistics CSV")
    p.add_argument("datasets", nargs="+",
                   help="name=edges,features,labels (labels required)")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("fixture", help="generate an SBM dataset")
    p.add_argument("--kind", required=True,
                   choices=["sbm_homophilic", "sbm_heterophilic"])
    p.add_argument("--n", type=int, default=150)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--p-in", dest="p_in", type=float, required=True)
    p.add_argument("--p-out", dest="p_out", type=float, required=True)
    p.add_argument("--d-raw", dest="d_raw", type=int, default=60)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--name", default=None)
    p.set_defaults(fn=cmd_fixture)

    for name, fn in (("pretrain", cmd_pretrain), ("run", cmd_run),
                     ("ablate", cmd_ablate), ("adapt", cmd_adapt)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
        if name == "adapt":
            p.add_argument("--checkpoint", required=True)
        if name == "ablate":
            p.add_argument("--variant", required=True, choices=list(VARIANTS))
        p.set_defaults(fn=fn)

    p = sub.add_parser("attack", help="write a randomly perturbed edge file")
    p.add_argument("--edges", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--labels", default=None)
    p.add_argument("--mode", required=True, choices=["add", "delete"])
    p.add_argument("--ratio", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--name", default="attacked")
    p.set_defaults(fn=cmd_attack)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except StageError as exc:
        sys.stderr.write(f"error: {exc}\n")
        cause = exc.__cause__
        if isinstance(cause, ConfigError):
            return 2
        return 3 if isinstance(cause, DataError) else 1
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return 2
    except DataError as exc:
        sys.stderr.write(f"data error: {exc}\n")
        return 3


if __name__ == "__main__":
    sys.exit(main())
