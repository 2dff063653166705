import numpy as np
import pytest

from lexrel.data import Dataset, EmbeddingTable, RelationLabel, RelationSet, RelationTriple

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def relset():
    # two real relations plus the random class
    return RelationSet.from_names(["hyper", "mero", "random"])


def make_toy_dataset(relset, n_per_relation=12, dim=4, seed=0):
    """Small dataset with planted offsets, one unique concept pair per triple."""
    rng = np.random.default_rng(seed)
    offsets = {"hyper": np.ones(dim) * 0.5, "mero": -np.ones(dim) * 0.5}
    entries = {}
    triples = []
    counter = 0
    for label in relset:
        for _ in range(n_per_relation):
            x = 0.3 * rng.standard_normal(dim)
            if label.is_random:
                y = 0.3 * rng.standard_normal(dim)
            else:
                y = x - offsets[label.name] + 0.01 * rng.standard_normal(dim)
            xn, yn = f"c{counter}", f"c{counter + 1}"
            counter += 2
            entries[xn] = x
            entries[yn] = y
            triples.append(RelationTriple(xn, yn, label))
    emb = EmbeddingTable(dim, entries)
    dataset = Dataset(relset, triples)
    return emb, dataset


@pytest.fixture
def toy_data(relset):
    return make_toy_dataset(relset)
