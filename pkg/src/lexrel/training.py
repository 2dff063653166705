"""Two-stage training: meta-learning over auxiliary tasks, then supervised
fine-tuning of the multi-way classifier.

Meta stage (first-order): per iteration, sample tasks from the task
distribution, adapt a copy of the parameters on each task with plain
gradient descent at rate alpha, then apply the meta-update at rate
epsilon. "fomaml" evaluates each task's gradient at the adapted
parameters on a fresh batch; "reptile" moves the parameters toward the
average adapted parameters. Each task's recognition accuracy on its
fresh batch (at the adapted parameters) is recorded per iteration.

Supervised stage: discard the binary heads, attach a fresh multi-way
head, and minimize the summed cross-entropy plus L2 with Adam, early
stopping on validation weighted F1.

All randomness flows from one Generator, consumed sequentially, so a
(seed, config, data) triple fully determines the result. Batch losses are
sums over examples throughout (not means).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset, EmbeddingTable, RelationLabel, RelationTriple, dataset_counts
from .errors import ConfigError, DataError, NumericalError
from .evaluation import metrics_from_confusion, predict_batch
from .network import (
    NetworkParams,
    batch_loss,
    batch_loss_and_grads,
    init_params,
    network_forward_batch,
)
from .prototypes import PrototypeSet, compute_prototypes
from .tasks import TaskBatch, sample_batch, sample_tasks, task_distribution

# class indices used by the binary recognition heads
POSITIVE_CLASS = 0
RANDOM_CLASS = 1

META_UPDATE_RULES = ("fomaml", "reptile")
RAN_MODES = ("auto", "explicit", "complement")
CELL_MODES = ("shared", "per_relation")


@dataclass
class TrainConfig:
    """Hyperparameters for both stages; defaults follow the reference setup
    (alpha = epsilon = 1e-3, gamma = 1, batch 256, l2 = 1e-3, one inner
    step, n_tasks = number of non-random relations when left unset)."""

    seed: int | None = None
    alpha: float = 1e-3
    epsilon: float = 1e-3
    gamma: float = 1.0
    n_tasks: int | None = None
    batch_size: int = 256
    l2: float = 1e-3
    inner_steps: int = 1
    max_meta_iters: int = 500
    plateau_patience: int = 50
    plateau_min_delta: float = 0.002
    max_supervised_epochs: int = 200
    patience: int = 20
    meta_update_rule: str = "fomaml"
    ran_discard_fraction: float = 0.0
    ran_mode: str = "auto"
    cell_mode: str = "shared"

    def validation_errors(self) -> list[str]:
        errs = []
        if self.seed is None:
            errs.append("seed is required")
        if not self.alpha > 0:
            errs.append(f"alpha must be > 0, got {self.alpha}")
        if not self.epsilon > 0:
            errs.append(f"epsilon must be > 0, got {self.epsilon}")
        if not self.gamma > 0:
            errs.append(f"gamma must be > 0, got {self.gamma}")
        if self.n_tasks is not None and self.n_tasks < 1:
            errs.append(f"n_tasks must be >= 1, got {self.n_tasks}")
        if self.batch_size < 2 or self.batch_size % 2 != 0:
            errs.append(f"batch_size must be a positive even number, got {self.batch_size}")
        if self.l2 < 0:
            errs.append(f"l2 must be >= 0, got {self.l2}")
        if self.inner_steps < 1:
            errs.append(f"inner_steps must be >= 1, got {self.inner_steps}")
        if self.max_meta_iters < 0:
            errs.append(f"max_meta_iters must be >= 0, got {self.max_meta_iters}")
        if self.plateau_patience < 0:
            errs.append(f"plateau_patience must be >= 0, got {self.plateau_patience}")
        if self.plateau_min_delta < 0:
            errs.append(f"plateau_min_delta must be >= 0, got {self.plateau_min_delta}")
        if self.max_supervised_epochs < 1:
            errs.append(
                f"max_supervised_epochs must be >= 1, got {self.max_supervised_epochs}"
            )
        if self.patience < 0:
            errs.append(f"patience must be >= 0, got {self.patience}")
        if not 0.0 <= self.ran_discard_fraction < 1.0:
            errs.append(
                f"ran_discard_fraction must be in [0, 1), got {self.ran_discard_fraction}"
            )
        if self.meta_update_rule not in META_UPDATE_RULES:
            errs.append(f"meta_update_rule must be one of {META_UPDATE_RULES}")
        if self.ran_mode not in RAN_MODES:
            errs.append(f"ran_mode must be one of {RAN_MODES}")
        if self.cell_mode not in CELL_MODES:
            errs.append(f"cell_mode must be one of {CELL_MODES}")
        return errs

    def validate(self) -> None:
        errs = self.validation_errors()
        if errs:
            raise ConfigError("; ".join(errs))

    def updated(self, **kwargs) -> "TrainConfig":
        return dataclasses.replace(self, **kwargs)

    def resolved_n_tasks(self, relation_set) -> int:
        return self.n_tasks if self.n_tasks is not None else len(relation_set.non_random())

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


_CONFIG_ALIASES = {"lambda": "l2"}
_INT_FIELDS = {
    "seed", "n_tasks", "batch_size", "inner_steps", "max_meta_iters",
    "plateau_patience", "max_supervised_epochs", "patience",
}
_FLOAT_FIELDS = {
    "alpha", "epsilon", "gamma", "l2", "plateau_min_delta", "ran_discard_fraction",
}
_STR_FIELDS = {"meta_update_rule", "ran_mode", "cell_mode"}


def parse_config_file(path) -> dict:
    """Parse a `key = value` per line config file into a kwargs dict."""
    out: dict = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key = _CONFIG_ALIASES.get(key.strip(), key.strip())
            value = value.strip()
            if key in _INT_FIELDS:
                out[key] = None if value.lower() == "none" else int(value)
            elif key in _FLOAT_FIELDS:
                out[key] = float(value)
            elif key in _STR_FIELDS:
                out[key] = value
            else:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
    return out


class Adam:
    """Standard Adam with bias correction; updates arrays in place."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            if arrays[k].shape != g.shape:
                raise NumericalError(f"gradient shape mismatch for {k!r}")
            if k not in self.m:
                self.m[k] = np.zeros_like(arrays[k])
                self.v[k] = np.zeros_like(arrays[k])
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            arrays[k] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ---------------------------------------------------------------------------
# encoding helpers


def encode_pairs(triples: Sequence[RelationTriple], emb: EmbeddingTable):
    x = emb.matrix([t.x for t in triples])
    y = emb.matrix([t.y for t in triples])
    return x, y


def encode_task_batch(batch: TaskBatch, emb: EmbeddingTable):
    """Arrays for a binary recognition batch: positives first, then negatives."""
    triples = batch.positives + batch.negatives
    x, y = encode_pairs(triples, emb)
    labels = np.concatenate(
        [
            np.full(len(batch.positives), POSITIVE_CLASS, dtype=np.intp),
            np.full(len(batch.negatives), RANDOM_CLASS, dtype=np.intp),
        ]
    )
    return x, y, labels


# ---------------------------------------------------------------------------
# meta-learning stage


def auxiliary_loss(
    batch: TaskBatch,
    params: NetworkParams,
    protos: PrototypeSet,
    emb: EmbeddingTable,
    l2: float = 0.0,
) -> float:
    """Binary recognition loss of one task batch under its meta head."""
    x, y, labels = encode_task_batch(batch, emb)
    return batch_loss(params, protos, x, y, labels, head=("meta", batch.relation.name), l2=l2)


def inner_adapt(
    params: NetworkParams,
    batch: TaskBatch,
    config: TrainConfig,
    protos: PrototypeSet,
    emb: EmbeddingTable,
) -> NetworkParams:
    """config.inner_steps plain gradient steps on the task loss; the input
    parameters are never mutated."""
    theta = params.copy()
    head = ("meta", batch.relation.name)
    x, y, labels = encode_task_batch(batch, emb)
    for _ in range(config.inner_steps):
        loss, grads = batch_loss_and_grads(theta, protos, x, y, labels, head, l2=config.l2)
        if not math.isfinite(loss):
            raise NumericalError(f"non-finite task loss for {batch.relation.name!r}")
        for k, g in grads.items():
            theta.arrays[k] -= config.alpha * g
    return theta


@dataclass
class AdaptedTask:
    relation: RelationLabel
    params: NetworkParams
    adapt_batch: TaskBatch
    eval_batch: TaskBatch | None = None


def meta_step(
    theta: NetworkParams,
    adapted_tasks: Sequence[AdaptedTask],
    config: TrainConfig,
    protos: PrototypeSet,
    emb: EmbeddingTable,
):
    """One meta-update; returns (new params, [(relation, task loss), ...]).

    fomaml: theta - epsilon * sum of task gradients taken at the adapted
    parameters on each task's fresh evaluation batch. reptile: move theta
    toward the mean adapted parameters by epsilon (the evaluation batch,
    when present, is used for loss reporting only).
    """
    if not adapted_tasks:
        raise DataError("meta_step needs at least one adapted task")
    new = theta.copy()
    losses: list[tuple[str, float]] = []

    if config.meta_update_rule == "fomaml":
        total: dict[str, np.ndarray] = {}
        for task in adapted_tasks:
            if task.eval_batch is None:
                raise DataError("fomaml meta updates need a fresh evaluation batch per task")
            x, y, labels = encode_task_batch(task.eval_batch, emb)
            loss, grads = batch_loss_and_grads(
                task.params, protos, x, y, labels,
                head=("meta", task.relation.name), l2=config.l2,
            )
            losses.append((task.relation.name, loss))
            for k, g in grads.items():
                if k in total:
                    total[k] = total[k] + g
                else:
                    total[k] = g
        for k, g in total.items():
            new.arrays[k] -= config.epsilon * g
    else:  # reptile
        n = len(adapted_tasks)
        for task in adapted_tasks:
            batch = task.eval_batch if task.eval_batch is not None else task.adapt_batch
            losses.append(
                (task.relation.name,
                 auxiliary_loss(batch, task.params, protos, emb, l2=config.l2))
            )
        for k in new.arrays:
            delta = sum(task.params.arrays[k] - theta.arrays[k] for task in adapted_tasks)
            new.arrays[k] = theta.arrays[k] + config.epsilon * (delta / n)
    return new, losses


@dataclass
class MetaIterRow:
    """One meta-iteration: summed task loss plus the post-adaptation
    recognition accuracy of each sampled task on its fresh batch."""

    iteration: int
    loss: float
    task_accuracies: list[tuple[str, float]]

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean([a for _, a in self.task_accuracies]))

    def accuracy_by_relation(self) -> dict[str, float]:
        sums: dict[str, list[float]] = {}
        for name, acc in self.task_accuracies:
            sums.setdefault(name, []).append(acc)
        return {n: float(np.mean(v)) for n, v in sums.items()}


def _resolve_ran_mode(config: TrainConfig, dataset: Dataset) -> str:
    if config.ran_mode != "auto":
        return config.ran_mode
    ran = dataset.relation_set.random_label
    if ran is not None and any(t.relation == ran for t in dataset.train):
        return "explicit"
    return "complement"


def probe_accuracy(
    params: NetworkParams,
    protos: PrototypeSet,
    batch: TaskBatch,
    emb: EmbeddingTable,
) -> float:
    """Binary accuracy of one relation's meta head on a fresh batch."""
    x, y, labels = encode_task_batch(batch, emb)
    logits, _ = network_forward_batch(params, protos, x, y, head=("meta", batch.relation.name))
    return float((np.argmax(logits, axis=1) == labels).mean())


def meta_train(
    dataset: Dataset,
    protos: PrototypeSet,
    config: TrainConfig,
    emb: EmbeddingTable,
    params: NetworkParams | None = None,
    rng: np.random.Generator | None = None,
):
    """Run the meta-learning loop; returns (params, per-iteration rows).

    Each sampled task is adapted on one batch and probed on a second,
    fresh batch: the probe accuracy (single-relation recognition at the
    adapted parameters) is what the per-iteration rows track. Stops at
    max_meta_iters, or earlier when the mean probe accuracy has not
    improved by plateau_min_delta for plateau_patience iterations.
    """
    config.validate()
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if params is None:
        params = init_params(
            emb.dim, dataset.relation_set, rng, shared_cell=(config.cell_mode == "shared")
        )
    counts = {l: c for l, c in dataset_counts(dataset).items() if not l.is_random}
    dist = task_distribution(counts, config.gamma)
    n_tasks = config.resolved_n_tasks(dataset.relation_set)
    ran_mode = _resolve_ran_mode(config, dataset)

    rows: list[MetaIterRow] = []
    best_acc = -np.inf
    best_iter = 0
    for iteration in range(1, config.max_meta_iters + 1):
        names = sample_tasks(dist, n_tasks, rng)
        adapted = []
        for name in names:
            adapt_batch = sample_batch(name, dataset, config.batch_size, rng, ran_mode)
            theta_r = inner_adapt(params, adapt_batch, config, protos, emb)
            eval_batch = sample_batch(name, dataset, config.batch_size, rng, ran_mode)
            adapted.append(
                AdaptedTask(dataset.relation_set.get(name), theta_r, adapt_batch, eval_batch)
            )
        params, task_losses = meta_step(params, adapted, config, protos, emb)

        accs = [
            (task.relation.name, probe_accuracy(task.params, protos, task.eval_batch, emb))
            for task in adapted
        ]
        row = MetaIterRow(iteration, float(sum(l for _, l in task_losses)), accs)
        rows.append(row)

        if row.mean_accuracy > best_acc + config.plateau_min_delta:
            best_acc = row.mean_accuracy
            best_iter = iteration
        elif config.plateau_patience > 0 and iteration - best_iter >= config.plateau_patience:
            break
    return params, rows


# ---------------------------------------------------------------------------
# supervised stage


@dataclass
class SupervisedEpochRow:
    epoch: int
    train_loss: float
    val_precision: float | None = None
    val_recall: float | None = None
    val_f1: float | None = None


def _weighted_f1(params, protos, x, y, true_idx, n_classes) -> tuple[float, float, float]:
    pred = predict_batch(params, protos, x, y)
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (true_idx, pred), 1)
    report = metrics_from_confusion(confusion, [str(i) for i in range(n_classes)])
    return report.weighted_precision, report.weighted_recall, report.weighted_f1


def supervised_finetune(
    theta: NetworkParams,
    dataset: Dataset,
    config: TrainConfig,
    emb: EmbeddingTable,
    protos: PrototypeSet,
    rng: np.random.Generator | None = None,
):
    """Multi-way fine-tuning with Adam; returns (params, per-epoch rows).

    Binary heads are discarded and a fresh multi-way head is attached
    first, so trunk and cell parameters carry over from meta-learning
    (or arrive fresh for the no-meta ablation). With
    ran_discard_fraction > 0, that fraction of the random-class training
    triples is dropped anew each epoch.
    """
    config.validate()
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if not dataset.train:
        raise DataError("training split is empty")
    if config.patience > 0 and not dataset.validation:
        raise DataError("early stopping requested (patience > 0) but no validation data")

    params = theta.without_meta_heads().with_fresh_final_head(rng)
    relation_set = dataset.relation_set
    n_classes = len(relation_set)

    x_all, y_all = encode_pairs(dataset.train, emb)
    labels_all = np.array([relation_set.index(t.relation.name) for t in dataset.train])
    ran = relation_set.random_label
    is_ran = np.array([t.relation == ran for t in dataset.train]) if ran else None

    if dataset.validation:
        xv, yv = encode_pairs(dataset.validation, emb)
        val_idx = np.array([relation_set.index(t.relation.name) for t in dataset.validation])

    adam = Adam(lr=config.alpha)
    rows: list[SupervisedEpochRow] = []
    best_f1 = -np.inf
    best_params = None
    epochs_since_best = 0

    for epoch in range(1, config.max_supervised_epochs + 1):
        if config.ran_discard_fraction > 0 and is_ran is not None and is_ran.any():
            ran_idx = np.flatnonzero(is_ran)
            n_drop = int(round(config.ran_discard_fraction * len(ran_idx)))
            dropped = rng.choice(len(ran_idx), size=n_drop, replace=False)
            keep_ran = np.delete(ran_idx, dropped)
            epoch_idx = np.concatenate([np.flatnonzero(~is_ran), keep_ran])
        else:
            epoch_idx = np.arange(len(dataset.train))
        order = epoch_idx[rng.permutation(len(epoch_idx))]

        for start in range(0, len(order), config.batch_size):
            sl = order[start : start + config.batch_size]
            loss, grads = batch_loss_and_grads(
                params, protos, x_all[sl], y_all[sl], labels_all[sl],
                head="final", l2=config.l2,
            )
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite supervised loss at epoch {epoch}")
            adam.step(params.arrays, grads)

        train_loss = batch_loss(params, protos, x_all, y_all, labels_all, head="final")
        row = SupervisedEpochRow(epoch, train_loss)
        if dataset.validation:
            row.val_precision, row.val_recall, row.val_f1 = _weighted_f1(
                params, protos, xv, yv, val_idx, n_classes
            )
        rows.append(row)

        if config.patience > 0 and row.val_f1 is not None:
            if row.val_f1 > best_f1:
                best_f1 = row.val_f1
                best_params = params.copy()
                epochs_since_best = 0
            else:
                epochs_since_best += 1
                if epochs_since_best >= config.patience:
                    break

    if best_params is not None:
        params = best_params
    return params, rows


# ---------------------------------------------------------------------------
# full pipeline and reports


@dataclass
class TrainReport:
    meta_rows: list[MetaIterRow] = field(default_factory=list)
    supervised_rows: list[SupervisedEpochRow] = field(default_factory=list)
    checkpoint_path: str | None = None

    def meta_report_text(self, relation_names: Sequence[str]) -> str:
        header = ["iteration", "loss"] + [f"acc:{n}" for n in relation_names] + ["mean_acc"]
        lines = ["\t".join(header)]
        for row in self.meta_rows:
            by_rel = row.accuracy_by_relation()
            cells = [str(row.iteration), repr(row.loss)]
            cells += ["-" if n not in by_rel else repr(by_rel[n]) for n in relation_names]
            cells.append(repr(row.mean_accuracy))
            lines.append("\t".join(cells))
        return "\n".join(lines) + "\n"

    def supervised_report_text(self) -> str:
        lines = ["epoch\ttrain_loss\tval_precision\tval_recall\tval_f1"]
        for row in self.supervised_rows:
            fmt = lambda v: "-" if v is None else repr(v)
            lines.append(
                f"{row.epoch}\t{row.train_loss!r}\t{fmt(row.val_precision)}"
                f"\t{fmt(row.val_recall)}\t{fmt(row.val_f1)}"
            )
        return "\n".join(lines) + "\n"


def train_pipeline(
    dataset: Dataset,
    emb: EmbeddingTable,
    config: TrainConfig,
    kb_triples: Sequence[RelationTriple] = (),
    use_meta: bool = True,
):
    """Prototypes + (optional) meta-learning + supervised fine-tuning.

    Prototypes are computed from the training split plus any extra
    knowledge-base triples; validation/test triples never contribute.
    With use_meta=False this is the fine-tune-only ablation.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    protos = compute_prototypes(list(dataset.train) + list(kb_triples), emb, dataset.relation_set)
    params = init_params(
        emb.dim, dataset.relation_set, rng, shared_cell=(config.cell_mode == "shared")
    )
    report = TrainReport()
    if use_meta:
        params, report.meta_rows = meta_train(
            dataset, protos, config, emb, params=params, rng=rng
        )
    params, report.supervised_rows = supervised_finetune(
        params, dataset, config, emb, protos, rng=rng
    )
    return params, protos, report
