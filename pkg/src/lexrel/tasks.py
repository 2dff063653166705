"""Auxiliary task distribution and balanced batch sampling.

Each auxiliary task is the binary recognition of one non-random relation
against random pairs. Tasks are sampled proportionally to
(ln|D_r| + gamma), so relations with more training triples are practiced
more often while small classes are still over-sampled relative to their
share of the data.

Sampling is sequential from a single caller-owned Generator, which keeps
the whole task/batch sequence reproducible from one seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .data import Dataset, RelationLabel, RelationTriple
from .errors import ConfigError, DataError


@dataclass
class TaskDistribution:
    relation_names: tuple[str, ...]
    probs: np.ndarray
    gamma: float

    def prob(self, relation_name: str) -> float:
        try:
            return float(self.probs[self.relation_names.index(relation_name)])
        except ValueError:
            raise DataError(f"no task for relation {relation_name!r}") from None

    def as_dict(self) -> dict[str, float]:
        return {n: float(p) for n, p in zip(self.relation_names, self.probs)}


def task_distribution(counts: Mapping, gamma: float) -> TaskDistribution:
    """p(task_r) = (ln|D_r| + gamma) / sum_r' (ln|D_r'| + gamma), non-random r.

    `counts` maps RelationLabel (or plain name) to the training-split count.
    Random-class entries are ignored; all remaining counts must be >= 1.
    """
    if not gamma > 0:
        raise ConfigError(f"gamma must be > 0, got {gamma}")
    names: list[str] = []
    weights: list[float] = []
    for key, count in counts.items():
        if isinstance(key, RelationLabel):
            if key.is_random:
                continue
            name = key.name
        else:
            name = str(key)
        if count < 1:
            raise DataError(f"relation {name!r} has count {count}; need >= 1")
        names.append(name)
        weights.append(math.log(count) + gamma)
    if not names:
        raise DataError("no non-random relations to build a task distribution from")
    w = np.array(weights)
    return TaskDistribution(tuple(names), w / w.sum(), float(gamma))


def sample_tasks(dist: TaskDistribution, n: int, rng: np.random.Generator) -> list[str]:
    """Draw n task relations i.i.d. from the distribution."""
    if n < 1:
        raise ConfigError(f"number of tasks must be >= 1, got {n}")
    idx = rng.choice(len(dist.relation_names), size=n, p=dist.probs)
    return [dist.relation_names[i] for i in idx]


@dataclass
class TaskBatch:
    """Balanced batch for one recognition task: positives hold the target
    relation, negatives are treated as random pairs for the task."""

    relation: RelationLabel
    positives: list[RelationTriple]
    negatives: list[RelationTriple]

    def __post_init__(self):
        if len(self.positives) != len(self.negatives):
            raise DataError("task batch halves must have equal size")
        for t in self.positives:
            if t.relation != self.relation:
                raise DataError(f"positive {t.key()} is not labeled {self.relation.name!r}")
        for t in self.negatives:
            if t.relation == self.relation:
                raise DataError(f"negative {t.key()} is labeled {self.relation.name!r}")


def _draw(pool: list, k: int, rng: np.random.Generator) -> list:
    # without replacement when the pool allows it, with replacement otherwise
    replace = len(pool) < k
    idx = rng.choice(len(pool), size=k, replace=replace)
    return [pool[i] for i in idx]


def sample_batch(
    relation,
    dataset: Dataset,
    batch_size: int,
    rng: np.random.Generator,
    ran_mode: str = "explicit",
) -> TaskBatch:
    """Sample batch_size/2 positives and batch_size/2 negatives from train.

    In "explicit" mode negatives come from the random class; in
    "complement" mode (for datasets without one) they are drawn uniformly
    from all triples not holding the target relation.
    """
    if batch_size < 2 or batch_size % 2 != 0:
        raise ConfigError(f"batch_size must be a positive even number, got {batch_size}")
    if ran_mode not in ("explicit", "complement"):
        raise ConfigError(f"unknown ran_mode {ran_mode!r}")
    label = relation if isinstance(relation, RelationLabel) else dataset.relation_set.get(relation)
    if label.is_random:
        raise DataError("cannot build a recognition task for the random class")

    positives_pool = [t for t in dataset.train if t.relation == label]
    if not positives_pool:
        raise DataError(f"no training triples for relation {label.name!r}")
    if ran_mode == "explicit":
        ran = dataset.relation_set.random_label
        if ran is None:
            raise DataError("explicit negative sampling needs a random class")
        negatives_pool = [t for t in dataset.train if t.relation == ran]
        if not negatives_pool:
            raise DataError("no random-class triples to sample negatives from")
    else:
        negatives_pool = [t for t in dataset.train if t.relation != label]
        if not negatives_pool:
            raise DataError(f"no non-{label.name!r} triples to sample negatives from")

    half = batch_size // 2
    return TaskBatch(label, _draw(positives_pool, half, rng), _draw(negatives_pool, half, rng))


def expected_task_loss(dist: TaskDistribution, per_task_losses: Mapping[str, float]) -> float:
    """Expectation of the per-task losses under the task distribution."""
    missing = [n for n in dist.relation_names if n not in per_task_losses]
    if missing:
        raise DataError("missing task losses for: " + ", ".join(missing))
    return float(
        sum(p * per_task_losses[n] for n, p in zip(dist.relation_names, dist.probs))
    )
