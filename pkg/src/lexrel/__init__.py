"""Lexical relation classification with prototype-guided meta-learning.

Pipeline: load concept embeddings and relation triples, compute frozen
per-relation offset prototypes, meta-train a recognition-cell network over
a distribution of single-relation auxiliary tasks, fine-tune a multi-way
classifier, and evaluate it with support-weighted metrics.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND as KERNEL_BACKEND
from .data import (
    Dataset,
    EmbeddingTable,
    RelationLabel,
    RelationSet,
    RelationTriple,
    dataset_counts,
    load_dataset,
    load_embeddings,
    load_triples,
)
from .errors import ConfigError, DataError, LexrelError, NumericalError
from .evaluation import EvalReport, confusion_top_errors, evaluate, predict
from .network import (
    NetworkParams,
    SrrCellParams,
    init_params,
    load_checkpoint,
    network_forward,
    parameter_count,
    save_checkpoint,
    srr_forward,
)
from .prototypes import PrototypeSet, compute_prototypes
from .synth import SynthSpec, generate, make_spec
from .tasks import TaskBatch, TaskDistribution, expected_task_loss, sample_batch, sample_tasks, task_distribution
from .training import (
    Adam,
    TrainConfig,
    TrainReport,
    auxiliary_loss,
    inner_adapt,
    meta_step,
    meta_train,
    supervised_finetune,
    train_pipeline,
)

__all__ = [
    "KERNEL_BACKEND",
    "__version__",
    "Adam",
    "ConfigError",
    "DataError",
    "Dataset",
    "EmbeddingTable",
    "EvalReport",
    "LexrelError",
    "NetworkParams",
    "NumericalError",
    "PrototypeSet",
    "RelationLabel",
    "RelationSet",
    "RelationTriple",
    "SrrCellParams",
    "SynthSpec",
    "TaskBatch",
    "TaskDistribution",
    "TrainConfig",
    "TrainReport",
    "auxiliary_loss",
    "compute_prototypes",
    "confusion_top_errors",
    "dataset_counts",
    "evaluate",
    "expected_task_loss",
    "generate",
    "init_params",
    "inner_adapt",
    "load_checkpoint",
    "load_dataset",
    "load_embeddings",
    "load_triples",
    "make_spec",
    "meta_step",
    "meta_train",
    "network_forward",
    "parameter_count",
    "predict",
    "sample_batch",
    "sample_tasks",
    "save_checkpoint",
    "srr_forward",
    "supervised_finetune",
    "task_distribution",
    "train_pipeline",
]
