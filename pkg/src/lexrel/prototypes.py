"""Relation prototypes: per-relation mean embedding offsets.

A prototype is the mean of x - y over every pair holding a relation.
Prototypes are computed once, in double precision, and then frozen: the
stored matrix is read-only and is never touched by training.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .data import EmbeddingTable, RelationSet, RelationTriple, load_embeddings, write_embeddings
from .errors import DataError


class PrototypeSet:
    """Frozen per-relation offset prototypes for the non-random relations.

    `relation_names` fixes the row order of `matrix`. `source_counts` maps
    each relation to the number of contributing pairs (None when loaded
    from a plain-text export, which does not carry counts).
    """

    def __init__(
        self,
        dim: int,
        relation_names: Sequence[str],
        matrix: np.ndarray,
        source_counts: dict[str, int] | None = None,
    ):
        self.dim = int(dim)
        self.relation_names = tuple(relation_names)
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape != (len(self.relation_names), self.dim):
            raise DataError(
                f"prototype matrix shape {matrix.shape} does not match "
                f"({len(self.relation_names)}, {self.dim})"
            )
        if not np.all(np.isfinite(matrix)):
            raise DataError("non-finite prototype value")
        if source_counts is not None:
            for name in self.relation_names:
                if source_counts.get(name, 0) < 1:
                    raise DataError(f"prototype for {name!r} has no contributing pairs")
        matrix = matrix.copy()
        matrix.flags.writeable = False
        self.matrix = matrix
        self.source_counts = dict(source_counts) if source_counts is not None else None
        self._row = {n: i for i, n in enumerate(self.relation_names)}

    def vector(self, relation_name: str) -> np.ndarray:
        try:
            return self.matrix[self._row[relation_name]]
        except KeyError:
            raise DataError(f"no prototype for relation {relation_name!r}") from None

    def __len__(self) -> int:
        return len(self.relation_names)


def compute_prototypes(
    triples: Sequence[RelationTriple],
    emb: EmbeddingTable,
    relation_set: RelationSet,
) -> PrototypeSet:
    """Average the embedding offsets x - y per non-random relation.

    Triples of the random class are ignored. Every non-random relation in
    the set must have at least one contributing triple.
    """
    names = [l.name for l in relation_set.non_random()]
    if not names:
        raise DataError("relation set has no non-random relations")
    by_name = {n: [] for n in names}
    for t in triples:
        if t.relation.is_random:
            continue
        if t.relation.name not in by_name:
            raise DataError(f"triple relation {t.relation.name!r} outside the relation set")
        by_name[t.relation.name].append(t)

    matrix = np.empty((len(names), emb.dim))
    counts: dict[str, int] = {}
    for i, name in enumerate(names):
        group = by_name[name]
        if not group:
            raise DataError(f"relation {name!r} has no triples to build a prototype from")
        x = emb.matrix([t.x for t in group])
        y = emb.matrix([t.y for t in group])
        matrix[i] = (x - y).mean(axis=0)
        counts[name] = len(group)
    return PrototypeSet(emb.dim, names, matrix, counts)


def save_prototypes(path, protos: PrototypeSet) -> None:
    """Export in the embedding-file format, relation name in place of concept."""
    table = EmbeddingTable(
        protos.dim, {n: protos.vector(n) for n in protos.relation_names}
    )
    write_embeddings(path, table)


def load_prototypes(path) -> PrototypeSet:
    table = load_embeddings(path)
    names = list(table.concepts())
    matrix = np.stack([table.vector(n) for n in names]) if names else np.empty((0, table.dim))
    return PrototypeSet(table.dim, names, matrix, source_counts=None)
