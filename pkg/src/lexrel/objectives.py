"""Knowledge-encoder loss objectives as pure functions.

Both losses consume already-computed prediction distributions, so they
work with any upstream encoder. They are sums over examples, not means;
divide by the batch size if a mean is wanted. Probabilities are clamped
to [eps, 1] before the log; pass eps=0 to let a zero probability at a
true label surface as an infinite loss.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .data import RelationLabel, RelationSet
from .errors import DataError

PROB_EPS = 1e-12


def _label_indices(labels, relation_set: RelationSet | None) -> np.ndarray:
    if len(labels) and isinstance(labels[0], RelationLabel):
        if relation_set is None:
            raise DataError("relation_set is required when labels are RelationLabels")
        return np.array([relation_set.index(l.name) for l in labels], dtype=np.intp)
    return np.asarray(labels, dtype=np.intp)


def _check_distributions(probs: np.ndarray) -> None:
    if np.any(probs < -1e-9) or np.any(probs > 1 + 1e-9):
        raise DataError("probabilities must lie in [0, 1]")
    sums = probs.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise DataError("each prediction distribution must sum to 1 within 1e-6")


def _neg_log(p: np.ndarray, eps: float) -> np.ndarray:
    if eps > 0:
        return -np.log(np.clip(p, eps, 1.0))
    with np.errstate(divide="ignore"):
        return -np.log(p)


def lkb_loss_multiway(
    probs,
    labels,
    relation_set: RelationSet | None = None,
    eps: float = PROB_EPS,
) -> float:
    """Sum of negative log-probabilities of the true relation labels.

    `probs` is an (n, |R|) array of per-example distributions over the
    relation set; `labels` are integer indices into those rows (or
    RelationLabels together with `relation_set`).
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise DataError(f"expected (n, classes) probabilities, got shape {probs.shape}")
    idx = _label_indices(labels, relation_set)
    if len(idx) != probs.shape[0]:
        raise DataError("predictions and labels have different lengths")
    if len(idx) and (idx.min() < 0 or idx.max() >= probs.shape[1]):
        raise DataError("label index outside the prediction distribution")
    _check_distributions(probs)
    return float(_neg_log(probs[np.arange(len(idx)), idx], eps).sum())


def lkb_loss_binary(pairs, labels, eps: float = PROB_EPS) -> float:
    """Binary cross-entropy over (p_random, p_not_random) pairs.

    `labels` may be booleans (True = random pair) or RelationLabels, which
    are collapsed to their `is_random` flag.
    """
    pairs = np.asarray(pairs, dtype=np.float64)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise DataError(f"expected (n, 2) probability pairs, got shape {pairs.shape}")
    if len(labels) and isinstance(labels[0], RelationLabel):
        is_ran = np.array([l.is_random for l in labels], dtype=bool)
    else:
        is_ran = np.asarray(labels, dtype=bool)
    if len(is_ran) != pairs.shape[0]:
        raise DataError("predictions and labels have different lengths")
    _check_distributions(pairs)
    true_prob = np.where(is_ran, pairs[:, 0], pairs[:, 1])
    return float(_neg_log(true_prob, eps).sum())


def lkb_loss_combined(
    probs,
    labels,
    binary_pairs,
    binary_labels,
    relation_set: RelationSet | None = None,
    eps: float = PROB_EPS,
) -> float:
    """Plain sum of the multi-way and binary objectives."""
    return lkb_loss_multiway(probs, labels, relation_set, eps) + lkb_loss_binary(
        binary_pairs, binary_labels, eps
    )
