"""Support-weighted metrics, confusion matrices and error analysis.

Per-class precision/recall/F1 come from the confusion matrix (rows =
true class, columns = predicted). A class nobody predicted gets
precision 0 rather than NaN so weighted averages stay total. Weighted
metrics are support-weighted means over the non-excluded classes;
excluded classes (e.g. the random class in CogALex-style scoring) still
populate the confusion matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import EmbeddingTable, RelationLabel, RelationTriple
from .errors import DataError
from .network import NetworkParams, network_forward_batch
from .prototypes import PrototypeSet


@dataclass
class EvalReport:
    class_names: tuple[str, ...]
    support: np.ndarray  # (C,) true-class counts
    confusion: np.ndarray  # (C, C) true x predicted
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    excluded: tuple[str, ...] = ()

    def to_text(self) -> str:
        lines = ["class\tsupport\tprecision\trecall\tf1"]
        for i, name in enumerate(self.class_names):
            mark = "*" if name in self.excluded else ""
            lines.append(
                f"{name}{mark}\t{int(self.support[i])}\t{float(self.precision[i])!r}"
                f"\t{float(self.recall[i])!r}\t{float(self.f1[i])!r}"
            )
        lines.append(
            f"weighted\t{int(self.support.sum())}\t{self.weighted_precision!r}"
            f"\t{self.weighted_recall!r}\t{self.weighted_f1!r}"
        )
        if self.excluded:
            lines.append("# * excluded from weighted averages")
        lines.append("")
        lines.append("confusion\t" + "\t".join(self.class_names))
        for i, name in enumerate(self.class_names):
            lines.append(name + "\t" + "\t".join(str(int(v)) for v in self.confusion[i]))
        return "\n".join(lines) + "\n"


def metrics_from_confusion(
    confusion: np.ndarray,
    class_names: Sequence[str],
    exclude: Sequence[str] = (),
) -> EvalReport:
    confusion = np.asarray(confusion)
    c = confusion.shape[0]
    if confusion.shape != (c, c) or c != len(class_names):
        raise DataError("confusion matrix shape does not match class names")
    support = confusion.sum(axis=1)
    predicted = confusion.sum(axis=0)
    diag = np.diag(confusion).astype(np.float64)

    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(predicted > 0, diag / predicted, 0.0)
        recall = np.where(support > 0, diag / support, 0.0)
        pr = precision + recall
        f1 = np.where(pr > 0, 2.0 * precision * recall / np.where(pr > 0, pr, 1.0), 0.0)

    keep = np.array([name not in exclude for name in class_names])
    weights = support * keep
    total = weights.sum()
    if total > 0:
        wp = float((weights * precision).sum() / total)
        wr = float((weights * recall).sum() / total)
        wf = float((weights * f1).sum() / total)
    else:
        wp = wr = wf = 0.0
    return EvalReport(
        tuple(class_names), support, confusion, precision, recall, f1,
        wp, wr, wf, tuple(exclude),
    )


def predict_batch(
    params: NetworkParams, protos: PrototypeSet, x: np.ndarray, y: np.ndarray
) -> np.ndarray:
    """Predicted class indices; argmax over the final head (ties -> lowest index)."""
    logits, _ = network_forward_batch(params, protos, x, y, head="final")
    return np.argmax(logits, axis=1)


def predict(
    params: NetworkParams, protos: PrototypeSet, pair: tuple[str, str], emb: EmbeddingTable
) -> RelationLabel:
    """Predict the relation label for one concept pair."""
    x = emb.vector(pair[0])
    y = emb.vector(pair[1])
    idx = predict_batch(params, protos, x[None, :], y[None, :])[0]
    return params.relation_set.labels[idx]


def evaluate(
    params: NetworkParams,
    protos: PrototypeSet,
    triples: Sequence[RelationTriple],
    emb: EmbeddingTable,
    exclude: str | RelationLabel | None = None,
) -> EvalReport:
    """Full report over a triple set; `exclude` drops one class from the
    weighted averages (its row/column still appear in the confusion matrix)."""
    if not triples:
        raise DataError("cannot evaluate an empty triple set")
    relation_set = params.relation_set
    names = relation_set.names
    x = emb.matrix([t.x for t in triples])
    y = emb.matrix([t.y for t in triples])
    true_idx = np.array([relation_set.index(t.relation.name) for t in triples])
    pred_idx = predict_batch(params, protos, x, y)

    c = len(names)
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (true_idx, pred_idx), 1)

    excluded: tuple[str, ...] = ()
    if exclude is not None:
        ex_name = exclude.name if isinstance(exclude, RelationLabel) else str(exclude)
        if ex_name not in relation_set:
            raise DataError(f"excluded class {ex_name!r} not in the relation set")
        excluded = (ex_name,)
    return metrics_from_confusion(confusion, names, excluded)


def confusion_top_errors(report: EvalReport, k: int) -> list[tuple[str, str, float]]:
    """Largest off-diagonal confusion fractions: (true, predicted, fraction),
    normalized by the true class's support, sorted descending."""
    entries = []
    c = len(report.class_names)
    for i in range(c):
        if report.support[i] == 0:
            continue
        for j in range(c):
            if i == j or report.confusion[i, j] == 0:
                continue
            frac = float(report.confusion[i, j] / report.support[i])
            entries.append((report.class_names[i], report.class_names[j], frac))
    entries.sort(key=lambda e: (-e[2], e[0], e[1]))
    return entries[:k]
