"""Synthetic datasets with relations planted as linear embedding offsets.

Each planted triple of relation r samples a concept vector x uniformly
from the unit ball and sets y = x - v_r + noise, so the offset x - y
recovers v_r. The ball keeps every component comfortably inside the tanh
range, mirroring the compact scale of encoder embeddings the classifier
is built for. Noise vectors are drawn with total standard deviation
`noise_sigma` (per-component sigma / sqrt(d)), which keeps thresholds
scale-free across dimensions. Random pairs are fully independent draws.
Every concept string is unique, so nothing can be solved by memorizing
individual words.

Embedding components are quantized to multiples of 2^-20 and offsets to
multiples of 2^-8; subtraction is then exact in float64, so with
noise_sigma = 0 the computed prototypes equal the planted offsets
bit-for-bit, even after a file round-trip.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset, EmbeddingTable, RelationLabel, RelationSet, RelationTriple
from .errors import DataError

EMB_GRID = 2.0**20
OFFSET_GRID = 2.0**8
DEFAULT_RANDOM_NAME = "random"


def _snap(a: np.ndarray, grid: float) -> np.ndarray:
    return np.round(a * grid) / grid


@dataclass(frozen=True)
class SynthRelation:
    name: str
    offset: np.ndarray  # planted ground-truth offset, quantized
    n_train: int
    n_val: int = 0
    n_test: int = 0


@dataclass
class SynthSpec:
    """Generation plan: planted relations (the imbalance profile lives in
    their counts), optional random class, noise level and seed."""

    dim: int
    relations: list[SynthRelation]
    noise_sigma: float = 0.0
    include_random: bool = True
    random_counts: tuple[int, int, int] = (0, 0, 0)  # train/val/test
    seed: int = 0
    random_name: str = DEFAULT_RANDOM_NAME

    def __post_init__(self):
        if self.dim < 1:
            raise DataError(f"dim must be >= 1, got {self.dim}")
        if self.noise_sigma < 0:
            raise DataError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not self.relations:
            raise DataError("need at least one planted relation")
        snapped = []
        for r in self.relations:
            v = _snap(np.asarray(r.offset, dtype=np.float64), OFFSET_GRID)
            if v.shape != (self.dim,):
                raise DataError(f"offset for {r.name!r} has shape {v.shape}")
            v.flags.writeable = False
            snapped.append(SynthRelation(r.name, v, r.n_train, r.n_val, r.n_test))
        self.relations = snapped
        self._check_separability()

    def _check_separability(self) -> None:
        # planted offsets must stay at least 4 noise standard deviations apart
        min_gap = 4.0 * self.noise_sigma
        for i in range(len(self.relations)):
            for j in range(i + 1, len(self.relations)):
                gap = float(
                    np.linalg.norm(self.relations[i].offset - self.relations[j].offset)
                )
                if gap <= 0.0 or gap < min_gap:
                    raise DataError(
                        f"offsets for {self.relations[i].name!r} and "
                        f"{self.relations[j].name!r} are separated by {gap:.4g}, "
                        f"need at least {min_gap:.4g}"
                    )

    def relation_set(self) -> RelationSet:
        labels = [RelationLabel(r.name) for r in self.relations]
        if self.include_random:
            labels.append(RelationLabel(self.random_name, is_random=True))
        return RelationSet(labels)


def random_offsets(
    n: int, dim: int, rng: np.random.Generator, scale: float = 1.0, min_gap: float = 0.0
) -> np.ndarray:
    """Deterministically draw n unit-scaled offset directions, redrawing any
    vector that lands closer than min_gap to an earlier one."""
    out = np.empty((n, dim))
    for i in range(n):
        for _ in range(100):
            v = rng.standard_normal(dim)
            v = _snap(scale * v / np.linalg.norm(v), OFFSET_GRID)
            if all(np.linalg.norm(v - out[j]) >= max(min_gap, 1e-6) for j in range(i)):
                out[i] = v
                break
        else:
            raise DataError(f"could not place {n} offsets {min_gap} apart in dim {dim}")
    return out


def make_spec(
    dim: int,
    train_counts: Sequence[int],
    n_val: int | Sequence[int] = 0,
    n_test: int | Sequence[int] = 0,
    noise_sigma: float = 0.0,
    include_random: bool = True,
    random_counts: tuple[int, int, int] | None = None,
    seed: int = 0,
) -> SynthSpec:
    """Convenience builder: auto-named relations with auto-drawn offsets.

    Relation k is named "rel<k>"; random pairs default to the mean of the
    planted per-split counts.
    """
    n = len(train_counts)
    vals = [n_val] * n if isinstance(n_val, int) else list(n_val)
    tests = [n_test] * n if isinstance(n_test, int) else list(n_test)
    rng = np.random.default_rng(seed)
    offsets = random_offsets(n, dim, rng, min_gap=4.0 * noise_sigma)
    relations = [
        SynthRelation(f"rel{k}", offsets[k], int(train_counts[k]), int(vals[k]), int(tests[k]))
        for k in range(n)
    ]
    if random_counts is None:
        random_counts = (
            int(round(np.mean(train_counts))),
            int(round(np.mean(vals))),
            int(round(np.mean(tests))),
        )
    return SynthSpec(
        dim, relations, noise_sigma, include_random, tuple(random_counts), seed
    )


def _ball_sample(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Uniform draw from the unit ball (direction times U^(1/d) radius)."""
    g = rng.standard_normal(dim)
    return (rng.uniform() ** (1.0 / dim)) * g / np.linalg.norm(g)


def generate(spec: SynthSpec) -> tuple[EmbeddingTable, Dataset]:
    """Generate (embeddings, dataset) deterministically from the spec."""
    rng = np.random.default_rng(spec.seed)
    relation_set = spec.relation_set()
    entries: dict[str, np.ndarray] = {}
    counter = 0

    def fresh_concept(vec: np.ndarray) -> str:
        nonlocal counter
        name = f"w{counter:06d}"
        counter += 1
        entries[name] = vec
        return name

    def planted_pair(offset: np.ndarray) -> tuple[str, str]:
        x = _snap(_ball_sample(rng, spec.dim), EMB_GRID)
        if spec.noise_sigma > 0:
            noise = spec.noise_sigma * rng.standard_normal(spec.dim) / np.sqrt(spec.dim)
            y = _snap(x - offset + noise, EMB_GRID)
        else:
            y = x - offset  # exact: both operands sit on the 2^-20 grid
        return fresh_concept(x), fresh_concept(y)

    def random_pair() -> tuple[str, str]:
        x = _snap(_ball_sample(rng, spec.dim), EMB_GRID)
        y = _snap(_ball_sample(rng, spec.dim), EMB_GRID)
        return fresh_concept(x), fresh_concept(y)

    splits: dict[str, list[RelationTriple]] = {"train": [], "val": [], "test": []}
    for rel in spec.relations:
        label = relation_set.get(rel.name)
        for split, count in (("train", rel.n_train), ("val", rel.n_val), ("test", rel.n_test)):
            for _ in range(count):
                x, y = planted_pair(rel.offset)
                splits[split].append(RelationTriple(x, y, label))
    if spec.include_random:
        label = relation_set.get(spec.random_name)
        for split, count in zip(("train", "val", "test"), spec.random_counts):
            for _ in range(count):
                x, y = random_pair()
                splits[split].append(RelationTriple(x, y, label))

    emb = EmbeddingTable(spec.dim, entries)
    dataset = Dataset(relation_set, splits["train"], splits["val"], splits["test"])
    return emb, dataset


def nearest_prototype_predict(
    offsets: np.ndarray, proto_matrix: np.ndarray, ran_threshold: float | None = None
) -> np.ndarray:
    """Classify offset vectors by the nearest prototype (brute force).

    Returns row indices into proto_matrix; with a threshold, offsets whose
    nearest prototype is farther away than it get index len(proto_matrix),
    meaning "random pair".
    """
    dists = np.linalg.norm(offsets[:, None, :] - proto_matrix[None, :, :], axis=2)
    pred = np.argmin(dists, axis=1)
    if ran_threshold is not None:
        pred = np.where(dists[np.arange(len(pred)), pred] > ran_threshold,
                        len(proto_matrix), pred)
    return pred


def default_ran_threshold(proto_matrix: np.ndarray) -> float:
    """Half the minimum inter-prototype distance; planted pairs sit far
    inside it, independent random pairs far outside."""
    k = proto_matrix.shape[0]
    if k < 2:
        raise DataError("need at least two prototypes for a distance threshold")
    gaps = [
        np.linalg.norm(proto_matrix[i] - proto_matrix[j])
        for i in range(k)
        for j in range(i + 1, k)
    ]
    return 0.5 * float(min(gaps))


def nearest_prototype_accuracy(
    triples: Sequence[RelationTriple],
    emb: EmbeddingTable,
    proto_matrix: np.ndarray,
    relation_names: Sequence[str],
    ran_name: str | None = None,
) -> float:
    """Accuracy of the nearest-prototype baseline on a triple set."""
    x = emb.matrix([t.x for t in triples])
    y = emb.matrix([t.y for t in triples])
    threshold = default_ran_threshold(proto_matrix) if ran_name is not None else None
    pred = nearest_prototype_predict(x - y, proto_matrix, threshold)
    names = list(relation_names) + ([ran_name] if ran_name is not None else [])
    true = np.array([names.index(t.relation.name) for t in triples])
    return float((pred == true).mean())
