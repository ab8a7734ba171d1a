"""mdgraph: multi-domain graph pretraining and few-shot transfer.

Pipeline: per-graph PCA into a unified feature width, learnable token
modulation, kNN-based structure refinement, contrastive pretraining of a
shared graph-convolution encoder, then prompt-tuned prototype
classification on an unseen target graph.
"""

from ._kernels import HAVE_COMPILED, backend_name
from .adapt import (FewShotTask, PromptState, classify, compose_input,
                    embed_target, meta_prompt, prototypes, sample_kshot, tune)
from .autodiff import Tape, grad_check
from .encoder import EncoderParams, encode, init_encoder
from .graphcore import (CsrMatrix, DatasetStats, Graph, compute_stats,
                        csr_from_coo, degree_normalize_selfloops, homophily_ratio,
                        load_graph, spmm, symmetrize_activate)
from .harness import (AttackSpec, DatasetPaths, ExperimentConfig, ablate,
                      attack_random, dataset_stats, load_experiment_config,
                      make_fixture, run_experiment)
from .pca import ProjectionBasis, fit_pca, project
from .pretrain import (Checkpoint, PretrainConfig, load_checkpoint,
                       loss_identity, loss_refined, pretrain, project_head,
                       save_checkpoint)
from .refine import (RefineConfig, TokenSet, fuse_views, knn_exact, knn_lsh,
                     postprocess, refine, unify_features)

__version__ = "0.1.0"

__all__ = [
    "AttackSpec", "Checkpoint", "CsrMatrix", "DatasetPaths", "DatasetStats",
    "EncoderParams", "ExperimentConfig", "FewShotTask", "Graph",
    "HAVE_COMPILED", "PretrainConfig", "ProjectionBasis", "PromptState",
    "RefineConfig", "Tape", "TokenSet", "ablate", "attack_random",
    "backend_name", "classify", "compose_input", "compute_stats",
    "csr_from_coo", "dataset_stats", "degree_normalize_selfloops",
    "embed_target", "encode", "fit_pca", "fuse_views", "grad_check",
    "homophily_ratio", "init_encoder", "knn_exact", "knn_lsh",
    "load_checkpoint", "load_experiment_config", "load_graph",
    "loss_identity", "loss_refined", "make_fixture", "meta_prompt",
    "postprocess", "pretrain", "project", "project_head", "prototypes",
    "refine", "run_experiment", "sample_kshot", "save_checkpoint", "spmm",
    "symmetrize_activate", "tune", "unify_features",
]
