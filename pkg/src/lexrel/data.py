"""Embedding tables, relation triples and dataset splits.

File formats
------------
Embedding file (UTF-8 text)::

    <count> <dim>
    <concept>\\t<v1> <v2> ... <vdim>

The header declares the number of rows and the vector dimension. Concepts
may contain spaces ("card game"); a single tab separates the concept from
its space-separated vector. Floats are written with ``repr`` so a written
file reloads bit-exactly.

Triple file (UTF-8 text)::

    <x>\\t<y>\\t<relation>

one triple per line, exactly three tab-separated fields.

Loading is single-threaded; the returned tables and datasets are treated
as immutable afterwards and are safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

DEFAULT_RAN_NAME = "random"


@dataclass(frozen=True)
class RelationLabel:
    """A lexical relation name, optionally marking the random class."""

    name: str
    is_random: bool = False


@dataclass(frozen=True)
class RelationTriple:
    x: str
    y: str
    relation: RelationLabel

    def key(self) -> tuple[str, str, str]:
        return (self.x, self.y, self.relation.name)


class RelationSet:
    """Ordered collection of relation labels; at most one is random."""

    def __init__(self, labels: Iterable[RelationLabel]):
        labels = tuple(labels)
        names = [l.name for l in labels]
        if len(set(names)) != len(names):
            raise DataError(f"duplicate relation names: {names}")
        randoms = [l for l in labels if l.is_random]
        if len(randoms) > 1:
            raise DataError("more than one relation marked as random")
        self.labels = labels
        self._by_name = {l.name: l for l in labels}
        self._index = {l.name: i for i, l in enumerate(labels)}

    @classmethod
    def from_names(cls, names: Sequence[str], ran_name: str = DEFAULT_RAN_NAME) -> "RelationSet":
        """Build a set from plain names; `ran_name` marks the random class if present."""
        return cls(RelationLabel(n, is_random=(n == ran_name)) for n in names)

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def __contains__(self, label) -> bool:
        name = label.name if isinstance(label, RelationLabel) else label
        return name in self._by_name

    def __eq__(self, other) -> bool:
        return isinstance(other, RelationSet) and self.labels == other.labels

    def get(self, name: str) -> RelationLabel:
        try:
            return self._by_name[name]
        except KeyError:
            raise DataError(f"unknown relation label: {name!r}") from None

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise DataError(f"unknown relation label: {name!r}") from None

    @property
    def random_label(self) -> RelationLabel | None:
        for l in self.labels:
            if l.is_random:
                return l
        return None

    def non_random(self) -> tuple[RelationLabel, ...]:
        return tuple(l for l in self.labels if not l.is_random)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(l.name for l in self.labels)


class EmbeddingTable:
    """Map from concept string to a fixed-dimension float64 vector.

    Concepts are matched by exact, case-sensitive string; normalization
    belongs to whoever produced the embeddings.
    """

    def __init__(self, dim: int, entries: dict[str, np.ndarray]):
        if dim < 1:
            raise DataError(f"embedding dimension must be >= 1, got {dim}")
        self.dim = int(dim)
        self._entries: dict[str, np.ndarray] = {}
        for concept, vec in entries.items():
            v = np.asarray(vec, dtype=np.float64)
            if v.shape != (self.dim,):
                raise DataError(
                    f"embedding for {concept!r} has shape {v.shape}, expected ({self.dim},)"
                )
            if not np.all(np.isfinite(v)):
                raise DataError(f"non-finite embedding value for {concept!r}")
            v.flags.writeable = False
            self._entries[concept] = v

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, concept: str) -> bool:
        return concept in self._entries

    def concepts(self):
        return self._entries.keys()

    def vector(self, concept: str) -> np.ndarray:
        try:
            return self._entries[concept]
        except KeyError:
            raise DataError(f"concept not in embedding table: {concept!r}") from None

    def matrix(self, concepts: Sequence[str]) -> np.ndarray:
        """Stack the vectors for `concepts` into an (n, dim) array."""
        missing = sorted({c for c in concepts if c not in self._entries})
        if missing:
            raise DataError("concepts not in embedding table: " + ", ".join(missing))
        if not concepts:
            return np.empty((0, self.dim))
        return np.stack([self._entries[c] for c in concepts])


def load_embeddings(path) -> EmbeddingTable:
    """Parse an embedding file (`count dim` header, then concept\\tfloats rows)."""
    with open(path, encoding="utf-8") as f:
        header = f.readline()
        parts = header.split()
        if len(parts) != 2:
            raise DataError(f"{path}: malformed header {header!r}, expected 'count dim'")
        try:
            count, dim = int(parts[0]), int(parts[1])
        except ValueError:
            raise DataError(f"{path}: malformed header {header!r}") from None
        if count < 0 or dim < 1:
            raise DataError(f"{path}: invalid header values count={count} dim={dim}")

        entries: dict[str, np.ndarray] = {}
        for lineno, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            concept, sep, rest = line.partition("\t")
            if not sep:
                raise DataError(f"{path}:{lineno}: missing tab between concept and vector")
            fields = rest.split()
            if len(fields) != dim:
                raise DataError(
                    f"{path}:{lineno}: expected {dim} values for {concept!r}, got {len(fields)}"
                )
            try:
                vec = np.array([float(v) for v in fields])
            except ValueError:
                raise DataError(f"{path}:{lineno}: unparseable float for {concept!r}") from None
            if not np.all(np.isfinite(vec)):
                raise DataError(f"{path}:{lineno}: non-finite value for {concept!r}")
            if concept in entries:
                raise DataError(f"{path}:{lineno}: duplicate concept {concept!r}")
            entries[concept] = vec

    if len(entries) != count:
        raise DataError(f"{path}: header declares {count} entries, file has {len(entries)}")
    return EmbeddingTable(dim, entries)


def write_embeddings(path, table: EmbeddingTable) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{len(table)} {table.dim}\n")
        for concept in table.concepts():
            vals = " ".join(repr(float(v)) for v in table.vector(concept))
            f.write(f"{concept}\t{vals}\n")


def load_triples(path, relation_set: RelationSet) -> list[RelationTriple]:
    """Parse a triple file; every relation must belong to `relation_set`."""
    triples = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise DataError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}"
                )
            x, y, rel = fields
            if not x or not y:
                raise DataError(f"{path}:{lineno}: empty concept")
            if rel not in relation_set:
                raise DataError(f"{path}:{lineno}: unknown relation label {rel!r}")
            triples.append(RelationTriple(x, y, relation_set.get(rel)))
    return triples


def write_triples(path, triples: Sequence[RelationTriple]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for t in triples:
            f.write(f"{t.x}\t{t.y}\t{t.relation.name}\n")


@dataclass
class Dataset:
    """Relation triples split into train/validation/test over one relation set."""

    relation_set: RelationSet
    train: list[RelationTriple]
    validation: list[RelationTriple] = field(default_factory=list)
    test: list[RelationTriple] = field(default_factory=list)

    def __post_init__(self):
        for split_name, split in (
            ("train", self.train),
            ("validation", self.validation),
            ("test", self.test),
        ):
            for t in split:
                if t.relation.name not in self.relation_set:
                    raise DataError(
                        f"{split_name} triple {t.key()} uses a relation outside the set"
                    )
        seen: dict[tuple, str] = {}
        for split_name, split in (
            ("train", self.train),
            ("validation", self.validation),
            ("test", self.test),
        ):
            for t in split:
                prior = seen.get(t.key())
                if prior is not None and prior != split_name:
                    raise DataError(
                        f"triple {t.key()} appears in both {prior} and {split_name}"
                    )
                seen.setdefault(t.key(), split_name)

    def all_concepts(self) -> set[str]:
        out: set[str] = set()
        for split in (self.train, self.validation, self.test):
            for t in split:
                out.add(t.x)
                out.add(t.y)
        return out


def dataset_counts(dataset: Dataset) -> dict[RelationLabel, int]:
    """Per-relation triple counts over the training split only."""
    counts = {label: 0 for label in dataset.relation_set}
    for t in dataset.train:
        counts[t.relation] += 1
    return counts


def check_coverage(dataset: Dataset, table: EmbeddingTable) -> None:
    """Fail with the full list of concepts missing from the embedding table."""
    missing = sorted(c for c in dataset.all_concepts() if c not in table)
    if missing:
        raise DataError(
            f"{len(missing)} concepts missing from embedding table: " + ", ".join(missing)
        )


def split_train_validation(
    triples: Sequence[RelationTriple], seed: int, train_fraction: float = 0.8
) -> tuple[list[RelationTriple], list[RelationTriple]]:
    """Seeded random split for datasets shipped without a validation file."""
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(triples))
    n_train = int(math.floor(len(triples) * train_fraction))
    train = [triples[i] for i in order[:n_train]]
    val = [triples[i] for i in order[n_train:]]
    return train, val


def infer_relation_names(path) -> list[str]:
    """Sorted unique relation names appearing in a triple file."""
    names: set[str] = set()
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) == 3:
                names.add(fields[2])
    return sorted(names)


def load_dataset(
    train_path,
    test_path=None,
    validation_path=None,
    relation_names: Sequence[str] | None = None,
    ran_name: str = DEFAULT_RAN_NAME,
    embeddings: EmbeddingTable | None = None,
    split_seed: int | None = None,
) -> Dataset:
    """Load a dataset from triple files.

    When `relation_names` is omitted the set is inferred (sorted) from the
    files themselves. Without a validation file, a seeded 80/20 split of
    the training file is used (requires `split_seed`). When `embeddings`
    is given, coverage of every concept is checked up front.
    """
    if relation_names is None:
        names = set(infer_relation_names(train_path))
        for p in (validation_path, test_path):
            if p is not None:
                names.update(infer_relation_names(p))
        relation_names = sorted(names)
    relation_set = RelationSet.from_names(relation_names, ran_name=ran_name)

    train = load_triples(train_path, relation_set)
    if validation_path is not None:
        validation = load_triples(validation_path, relation_set)
    elif split_seed is not None:
        train, validation = split_train_validation(train, seed=split_seed)
    else:
        validation = []
    test = load_triples(test_path, relation_set) if test_path is not None else []

    dataset = Dataset(relation_set, train, validation, test)
    if embeddings is not None:
        check_coverage(dataset, embeddings)
    return dataset
