import math

import numpy as np
import pytest

from lexrel.data import Dataset, EmbeddingTable, RelationSet, RelationTriple
from lexrel.errors import ConfigError, DataError
from lexrel.network import batch_loss_and_grads, init_params
from lexrel.prototypes import PrototypeSet, compute_prototypes
from lexrel.tasks import TaskBatch, sample_batch
from lexrel.training import (
    Adam,
    AdaptedTask,
    TrainConfig,
    auxiliary_loss,
    encode_task_batch,
    inner_adapt,
    meta_step,
    meta_train,
    parse_config_file,
    supervised_finetune,
    train_pipeline,
)

from conftest import make_toy_dataset


def small_config(**kw):
    base = dict(seed=0, batch_size=8, max_meta_iters=5, max_supervised_epochs=5,
                patience=0, plateau_patience=0)
    base.update(kw)
    return TrainConfig(**base)


# --- config ---------------------------------------------------------------


def test_config_defaults_follow_reference_setup():
    cfg = TrainConfig(seed=1)
    assert cfg.alpha == 1e-3 and cfg.epsilon == 1e-3
    assert cfg.gamma == 1.0 and cfg.batch_size == 256 and cfg.l2 == 1e-3
    assert cfg.inner_steps == 1 and cfg.meta_update_rule == "fomaml"
    rs = RelationSet.from_names(["a", "b", "c", "random"])
    assert cfg.resolved_n_tasks(rs) == 3


def test_config_validation_lists_every_error():
    cfg = TrainConfig(seed=None, alpha=-1, batch_size=7, ran_discard_fraction=1.5,
                      meta_update_rule="bogus")
    errs = cfg.validation_errors()
    assert len(errs) == 5
    with pytest.raises(ConfigError):
        cfg.validate()


def test_config_file_parsing(tmp_path):
    p = tmp_path / "cfg"
    p.write_text("# comment\nalpha = 0.01\nlambda = 0.0001\nseed = 9\n"
                 "meta_update_rule = reptile\nn_tasks = none\n", encoding="utf-8")
    kwargs = parse_config_file(p)
    cfg = TrainConfig(**kwargs)
    assert cfg.alpha == 0.01 and cfg.l2 == 0.0001 and cfg.seed == 9
    assert cfg.meta_update_rule == "reptile" and cfg.n_tasks is None

    bad = tmp_path / "bad"
    bad.write_text("unknown_key = 3\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="unknown config key"):
        parse_config_file(bad)


# --- adam ------------------------------------------------------------------


def test_adam_zero_gradient_keeps_params():
    arrays = {"w": np.array([1.0, -2.0])}
    Adam(lr=0.1).step(arrays, {"w": np.zeros(2)})
    assert np.array_equal(arrays["w"], [1.0, -2.0])


def test_adam_first_step_magnitude_is_lr():
    arrays = {"w": np.array([0.0])}
    Adam(lr=0.001).step(arrays, {"w": np.array([1.0])})
    # bias-corrected first step moves by ~lr regardless of gradient scale
    assert math.isclose(abs(arrays["w"][0]), 0.001, rel_tol=1e-6)


def test_adam_trajectories_bitwise_identical():
    rng = np.random.default_rng(0)
    grads = [{"w": rng.standard_normal(4)} for _ in range(20)]

    def run():
        arrays = {"w": np.ones(4)}
        opt = Adam(lr=0.01)
        for g in grads:
            opt.step(arrays, g)
        return arrays["w"].copy()

    assert np.array_equal(run(), run())


def test_adam_shape_mismatch():
    from lexrel.errors import NumericalError

    with pytest.raises(NumericalError):
        Adam().step({"w": np.zeros(2)}, {"w": np.zeros(3)})


# --- auxiliary loss and inner adaptation ------------------------------------


def separable_setup():
    """d=1 toy task where the trunk skip slice alone solves recognition."""
    rs = RelationSet.from_names(["hyper", "random"])
    emb = EmbeddingTable(1, {"a": [1.0], "b": [0.5], "c": [-1.0], "d": [0.5]})
    pos = RelationTriple("a", "b", rs.get("hyper"))
    neg = RelationTriple("c", "d", rs.get("random"))
    params = init_params(1, rs, seed=0)
    for k in list(params.arrays):
        if k.startswith("cell."):
            params.arrays[k] = np.zeros_like(params.arrays[k])
    params.arrays["trunk.w"] = np.array([[0.0], [0.0], [5.0], [0.0]])  # read the x skip
    params.arrays["trunk.b"] = np.zeros(1)
    params.arrays["meta.hyper.w"] = np.array([[10.0, -10.0]])
    params.arrays["meta.hyper.b"] = np.zeros(2)
    protos = PrototypeSet(1, ("hyper",), np.array([[0.5]]), {"hyper": 1})
    return rs, emb, pos, neg, params, protos


def test_auxiliary_loss_confident_head_near_zero():
    rs, emb, pos, neg, params, protos = separable_setup()
    batch = TaskBatch(rs.get("hyper"), [pos], [neg])
    assert auxiliary_loss(batch, params, protos, emb) < 1e-6


def test_auxiliary_loss_uninformative_head_is_two_ln_two():
    rs, emb, pos, neg, params, protos = separable_setup()
    params.arrays["meta.hyper.w"] = np.zeros((1, 2))
    batch = TaskBatch(rs.get("hyper"), [pos], [neg])
    assert math.isclose(auxiliary_loss(batch, params, protos, emb), 2 * math.log(2),
                        rel_tol=1e-12)


def test_auxiliary_loss_order_invariant(relset, toy_data):
    emb, ds = toy_data
    rng = np.random.default_rng(1)
    params = init_params(emb.dim, relset, seed=1)
    protos = compute_prototypes(ds.train, emb, relset)
    batch = sample_batch("hyper", ds, 8, rng)
    flipped = TaskBatch(batch.relation, batch.positives[::-1], batch.negatives[::-1])
    a = auxiliary_loss(batch, params, protos, emb)
    b = auxiliary_loss(flipped, params, protos, emb)
    assert math.isclose(a, b, rel_tol=1e-12)


def test_inner_adapt_zero_gradient_is_identity():
    rs, emb, pos, neg, params, protos = separable_setup()
    # saturate the head so the task is solved with certainty: gradients vanish
    # (l2 off, otherwise weight decay still moves the parameters)
    params.arrays["meta.hyper.w"] = np.array([[600.0, -600.0]])
    batch = TaskBatch(rs.get("hyper"), [pos], [neg])
    adapted = inner_adapt(params, batch, small_config(alpha=0.5, l2=0.0), protos, emb)
    for k in params.arrays:
        np.testing.assert_allclose(adapted.arrays[k], params.arrays[k], atol=1e-12)


def test_inner_adapt_single_step_matches_gradient(relset, toy_data):
    emb, ds = toy_data
    rng = np.random.default_rng(2)
    params = init_params(emb.dim, relset, seed=2)
    protos = compute_prototypes(ds.train, emb, relset)
    batch = sample_batch("hyper", ds, 6, rng)
    cfg = small_config(alpha=0.1, inner_steps=1, l2=1e-3)

    x, y, labels = encode_task_batch(batch, emb)
    _, grads = batch_loss_and_grads(params, protos, x, y, labels, ("meta", "hyper"), l2=1e-3)
    adapted = inner_adapt(params, batch, cfg, protos, emb)
    for k, g in grads.items():
        np.testing.assert_allclose(adapted.arrays[k], params.arrays[k] - 0.1 * g, atol=1e-12)
    untouched = set(params.arrays) - set(grads)
    for k in untouched:
        assert np.array_equal(adapted.arrays[k], params.arrays[k])


def test_inner_adapt_two_steps_compose(relset, toy_data):
    emb, ds = toy_data
    rng = np.random.default_rng(3)
    params = init_params(emb.dim, relset, seed=3)
    protos = compute_prototypes(ds.train, emb, relset)
    batch = sample_batch("mero", ds, 6, rng)
    two = inner_adapt(params, batch, small_config(alpha=0.05, inner_steps=2), protos, emb)
    once = inner_adapt(params, batch, small_config(alpha=0.05, inner_steps=1), protos, emb)
    twice = inner_adapt(once, batch, small_config(alpha=0.05, inner_steps=1), protos, emb)
    assert two.close_to(twice)


def test_inner_adapt_does_not_mutate_input(relset, toy_data):
    emb, ds = toy_data
    params = init_params(emb.dim, relset, seed=4)
    snapshot = params.copy()
    batch = sample_batch("hyper", ds, 6, np.random.default_rng(4))
    inner_adapt(params, batch, small_config(alpha=1.0), protos=compute_prototypes(
        ds.train, emb, relset), emb=emb)
    assert params.close_to(snapshot)


# --- meta step ---------------------------------------------------------------


def test_meta_step_fomaml_zero_gradients_fixed_point():
    rs, emb, pos, neg, params, protos = separable_setup()
    params.arrays["meta.hyper.w"] = np.array([[600.0, -600.0]])
    batch = TaskBatch(rs.get("hyper"), [pos], [neg])
    cfg = small_config(meta_update_rule="fomaml", epsilon=0.5, l2=0.0)
    task = AdaptedTask(rs.get("hyper"), params.copy(), batch, batch)
    new, losses = meta_step(params, [task], cfg, protos, emb)
    assert losses[0][0] == "hyper" and losses[0][1] < 1e-6
    for k in params.arrays:
        np.testing.assert_allclose(new.arrays[k], params.arrays[k], atol=1e-10)


def test_meta_step_reptile_fixed_point_and_interpolation(relset, toy_data):
    emb, ds = toy_data
    params = init_params(emb.dim, relset, seed=5)
    protos = compute_prototypes(ds.train, emb, relset)
    batch = sample_batch("hyper", ds, 4, np.random.default_rng(5))
    cfg = small_config(meta_update_rule="reptile", epsilon=0.5)

    same = AdaptedTask(relset.get("hyper"), params.copy(), batch, batch)
    new, _ = meta_step(params, [same], cfg, protos, emb)
    assert new.close_to(params)

    shifted = params.copy()
    delta = {k: np.full_like(v, 0.25) for k, v in params.arrays.items()}
    for k in shifted.arrays:
        shifted.arrays[k] = params.arrays[k] + delta[k]
    moved = AdaptedTask(relset.get("hyper"), shifted, batch, batch)
    new, _ = meta_step(params, [moved], cfg, protos, emb)
    for k in params.arrays:
        np.testing.assert_allclose(new.arrays[k], params.arrays[k] + 0.5 * delta[k],
                                   atol=1e-12)


# --- meta_train --------------------------------------------------------------


def test_meta_train_zero_iterations_returns_init(relset, toy_data):
    emb, ds = toy_data
    protos = compute_prototypes(ds.train, emb, relset)
    params = init_params(emb.dim, relset, seed=6)
    out, rows = meta_train(ds, protos, small_config(max_meta_iters=0), emb,
                           params=params.copy())
    assert rows == []
    assert out.close_to(params)


def test_meta_train_deterministic(relset, toy_data):
    emb, ds = toy_data
    protos = compute_prototypes(ds.train, emb, relset)

    def run():
        return meta_train(ds, protos, small_config(seed=17), emb)

    p1, rows1 = run()
    p2, rows2 = run()
    assert p1.close_to(p2)
    assert [(r.iteration, r.loss, r.task_accuracies) for r in rows1] == [
        (r.iteration, r.loss, r.task_accuracies) for r in rows2
    ]
    assert all(0.0 <= a <= 1.0 for r in rows1 for _, a in r.task_accuracies)


def test_meta_train_reptile_mode_runs(relset, toy_data):
    emb, ds = toy_data
    protos = compute_prototypes(ds.train, emb, relset)
    params, rows = meta_train(ds, protos, small_config(meta_update_rule="reptile"), emb)
    assert len(rows) == 5


def test_meta_train_per_relation_cells(relset, toy_data):
    emb, ds = toy_data
    protos = compute_prototypes(ds.train, emb, relset)
    params, rows = meta_train(ds, protos, small_config(cell_mode="per_relation"), emb)
    assert not params.shared_cell
    assert "cell.hyper.w1" in params.arrays and "cell.w1" not in params.arrays
    assert len(rows) == 5


def test_meta_train_auto_falls_back_to_complement_without_random():
    # dataset without a random class forces complement-mode negatives
    rs = RelationSet.from_names(["hyper", "mero"])  # no random label at all
    emb, ds = make_toy_dataset(rs, n_per_relation=10, dim=4, seed=2)
    protos = compute_prototypes(ds.train, emb, rs)
    params, rows = meta_train(ds, protos, small_config(max_meta_iters=3), emb)
    assert len(rows) == 3


# --- supervised stage ---------------------------------------------------------


def split_toy(relset, seed=0):
    emb, ds = make_toy_dataset(relset, n_per_relation=18, dim=4, seed=seed)
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for t in ds.train:
        r = rng.uniform()
        (train if r < 0.7 else val if r < 0.85 else test).append(t)
    return emb, Dataset(relset, train, val, test)


def test_supervised_requires_validation_for_early_stop(relset, toy_data):
    emb, ds = toy_data  # no validation split
    params = init_params(emb.dim, relset, seed=7)
    protos = compute_prototypes(ds.train, emb, relset)
    with pytest.raises(DataError, match="validation"):
        supervised_finetune(params, ds, small_config(patience=3), emb, protos)


def test_supervised_discards_meta_heads(relset):
    emb, ds = split_toy(relset)
    params = init_params(emb.dim, relset, seed=8)
    protos = compute_prototypes(ds.train, emb, relset)
    out, rows = supervised_finetune(params, ds, small_config(), emb, protos)
    assert not out.has_meta_heads
    assert len(rows) == 5
    assert all(r.val_f1 is not None for r in rows)


def test_supervised_train_loss_non_increasing_at_small_lr(relset):
    emb, ds = split_toy(relset)
    params = init_params(emb.dim, relset, seed=9)
    protos = compute_prototypes(ds.train, emb, relset)
    cfg = small_config(alpha=1e-4, l2=0.0, max_supervised_epochs=10)
    _, rows = supervised_finetune(params, ds, cfg, emb, protos)
    losses = [r.train_loss for r in rows]
    assert all(b <= a + 1e-9 for a, b in zip(losses, losses[1:]))


def test_supervised_ran_discard_runs_and_is_deterministic(relset):
    emb, ds = split_toy(relset)
    params = init_params(emb.dim, relset, seed=10)
    protos = compute_prototypes(ds.train, emb, relset)
    cfg = small_config(ran_discard_fraction=0.7)

    out1, rows1 = supervised_finetune(params, ds, cfg, emb, protos,
                                      rng=np.random.default_rng(3))
    out2, rows2 = supervised_finetune(params, ds, cfg, emb, protos,
                                      rng=np.random.default_rng(3))
    assert out1.close_to(out2)
    assert [r.train_loss for r in rows1] == [r.train_loss for r in rows2]


def test_early_stopping_restores_best(relset):
    emb, ds = split_toy(relset)
    params = init_params(emb.dim, relset, seed=11)
    protos = compute_prototypes(ds.train, emb, relset)
    cfg = small_config(patience=2, max_supervised_epochs=40)
    out, rows = supervised_finetune(params, ds, cfg, emb, protos)
    best = max(r.val_f1 for r in rows)
    stopped_at = rows[-1].epoch
    best_epoch = next(r.epoch for r in rows if r.val_f1 == best)
    assert stopped_at <= best_epoch + 2 or stopped_at == 40


# --- pipeline ------------------------------------------------------------------


def test_pipeline_deterministic_and_ablation_variant(relset):
    emb, ds = split_toy(relset)
    cfg = small_config(seed=21, max_meta_iters=3, max_supervised_epochs=3)
    p1, protos1, rep1 = train_pipeline(ds, emb, cfg)
    p2, protos2, rep2 = train_pipeline(ds, emb, cfg)
    assert p1.close_to(p2)
    assert rep1.meta_report_text(p1.relation_names) == rep2.meta_report_text(p2.relation_names)
    assert rep1.supervised_report_text() == rep2.supervised_report_text()

    p3, _, rep3 = train_pipeline(ds, emb, cfg, use_meta=False)
    assert rep3.meta_rows == []
    assert not p3.close_to(p1)


def test_pipeline_keeps_prototypes_frozen(relset):
    emb, ds = split_toy(relset)
    cfg = small_config(seed=22, max_meta_iters=3, max_supervised_epochs=3)
    _, protos, _ = train_pipeline(ds, emb, cfg)
    fresh = compute_prototypes(ds.train, emb, ds.relation_set)
    assert np.array_equal(protos.matrix, fresh.matrix)
