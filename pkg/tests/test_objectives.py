import math

import numpy as np
import pytest

from lexrel.data import RelationLabel, RelationSet
from lexrel.errors import DataError
from lexrel.objectives import lkb_loss_binary, lkb_loss_combined, lkb_loss_multiway


def test_multiway_perfect_predictions_zero():
    probs = np.eye(4)[[0, 2, 3]]
    assert lkb_loss_multiway(probs, [0, 2, 3]) == 0.0


def test_multiway_uniform_two_examples():
    # 2 examples, uniform over 4 relations -> 2 ln 4
    probs = np.full((2, 4), 0.25)
    assert math.isclose(lkb_loss_multiway(probs, [1, 3]), 2 * math.log(4), rel_tol=1e-12)


def test_multiway_half_probability():
    probs = np.array([[0.5, 0.25, 0.25]])
    assert math.isclose(lkb_loss_multiway(probs, [0]), math.log(2), rel_tol=1e-12)


def test_multiway_accepts_relation_labels():
    rs = RelationSet.from_names(["a", "b"])
    probs = np.array([[0.5, 0.5]])
    got = lkb_loss_multiway(probs, [rs.get("b")], relation_set=rs)
    assert math.isclose(got, math.log(2), rel_tol=1e-12)


def test_multiway_zero_probability_epsilon_clamp():
    probs = np.array([[0.0, 1.0]])
    assert math.isclose(lkb_loss_multiway(probs, [0]), -math.log(1e-12), rel_tol=1e-9)
    assert lkb_loss_multiway(probs, [0], eps=0.0) == math.inf


def test_multiway_rejects_bad_distribution():
    with pytest.raises(DataError, match="sum to 1"):
        lkb_loss_multiway(np.array([[0.5, 0.2]]), [0])


def test_binary_perfect_zero():
    pairs = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert lkb_loss_binary(pairs, [True, False]) == 0.0


def test_binary_random_example_half():
    # one random pair predicted (0.5, 0.5) -> ln 2
    assert math.isclose(
        lkb_loss_binary(np.array([[0.5, 0.5]]), [True]), math.log(2), rel_tol=1e-12
    )


def test_binary_accepts_relation_labels():
    labels = [RelationLabel("random", True), RelationLabel("hyper")]
    pairs = np.array([[0.5, 0.5], [0.25, 0.75]])
    expect = math.log(2) - math.log(0.75)
    assert math.isclose(lkb_loss_binary(pairs, labels), expect, rel_tol=1e-12)


def test_combined_is_plain_sum():
    rng = np.random.default_rng(0)
    probs = rng.dirichlet(np.ones(3), size=6)
    labels = rng.integers(0, 3, size=6)
    pairs = rng.dirichlet(np.ones(2), size=6)
    is_ran = rng.integers(0, 2, size=6).astype(bool)
    total = lkb_loss_combined(probs, labels, pairs, is_ran)
    assert math.isclose(
        total, lkb_loss_multiway(probs, labels) + lkb_loss_binary(pairs, is_ran), rel_tol=1e-12
    )


def test_losses_nonnegative_and_zero_iff_confident():
    rng = np.random.default_rng(1)
    for _ in range(20):
        probs = rng.dirichlet(np.ones(5), size=4)
        labels = rng.integers(0, 5, size=4)
        assert lkb_loss_multiway(probs, labels) >= 0.0
    assert lkb_loss_multiway(np.eye(5)[[1, 2]], [1, 2]) == 0.0


def test_permutation_invariance():
    rng = np.random.default_rng(2)
    probs = rng.dirichlet(np.ones(4), size=10)
    labels = rng.integers(0, 4, size=10)
    perm = rng.permutation(10)
    assert math.isclose(
        lkb_loss_multiway(probs, labels),
        lkb_loss_multiway(probs[perm], labels[perm]),
        rel_tol=1e-12,
    )
    pairs = rng.dirichlet(np.ones(2), size=10)
    is_ran = rng.integers(0, 2, size=10).astype(bool)
    assert math.isclose(
        lkb_loss_binary(pairs, is_ran), lkb_loss_binary(pairs[perm], is_ran[perm]), rel_tol=1e-12
    )


def test_binary_equals_two_class_multiway():
    rng = np.random.default_rng(3)
    pairs = rng.dirichlet(np.ones(2), size=12)
    is_ran = rng.integers(0, 2, size=12).astype(bool)
    # column 0 is the random class, so the multiway label is 0 when random
    labels = np.where(is_ran, 0, 1)
    assert math.isclose(
        lkb_loss_binary(pairs, is_ran), lkb_loss_multiway(pairs, labels), rel_tol=1e-12
    )
