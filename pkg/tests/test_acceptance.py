"""Acceptance suite: every exit criterion at its stated tolerance.

Each test records a PASS/FAIL line (printed in the terminal summary) and
asserts its thresholds directly, so a red test is a failed criterion.
"""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from lexrel.data import RelationSet
from lexrel.evaluation import evaluate, metrics_from_confusion
from lexrel.network import (
    batch_loss,
    batch_loss_and_grads,
    init_params,
    network_forward_batch,
    parameter_count,
    save_checkpoint,
    trunk_input_width,
)
from lexrel.prototypes import PrototypeSet, compute_prototypes
from lexrel.synth import generate, make_spec, nearest_prototype_accuracy
from lexrel.tasks import sample_tasks, task_distribution
from lexrel.training import TrainConfig, train_pipeline

BLESS_COUNTS = {
    "attribute": 2731,
    "co-hyponym": 3565,
    "event": 3824,
    "hypernym": 1337,
    "meronym": 2943,
}


def record(name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    ACCEPTANCE_LINES.append(f"{status}  {name}" + (f"  [{detail}]" if detail else ""))
    assert ok, f"{name}: {detail}"


# --- gradient correctness ----------------------------------------------------


def test_gradient_correctness():
    start = time.perf_counter()
    rs = RelationSet.from_names(["rel_a", "rel_b", "random"])
    d, batch = 4, 3
    rng = np.random.default_rng(20)
    params = init_params(d, rs, seed=21)
    protos = PrototypeSet(d, ("rel_a", "rel_b"), rng.standard_normal((2, d)),
                          {"rel_a": 1, "rel_b": 1})
    x, y = rng.standard_normal((2, batch, d))
    step, tol = 1e-5, 1e-4

    worst = 0.0
    for head, labels in ((("meta", "rel_a"), [0, 1, 0]), ("final", [0, 1, 2])):
        labels = np.array(labels)
        _, grads = batch_loss_and_grads(params, protos, x, y, labels, head, l2=1e-3)
        for key, g in grads.items():
            arr = params.arrays[key]
            it = np.nditer(arr, flags=["multi_index"])
            while not it.finished:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + step
                up = batch_loss(params, protos, x, y, labels, head, l2=1e-3)
                arr[idx] = orig - step
                down = batch_loss(params, protos, x, y, labels, head, l2=1e-3)
                arr[idx] = orig
                fd = (up - down) / (2 * step)
                denom = max(abs(fd), abs(g[idx]), 1e-8)
                worst = max(worst, abs(fd - g[idx]) / denom)
                it.iternext()
    elapsed = time.perf_counter() - start
    record(
        "gradient correctness (finite differences, both heads)",
        worst < tol and elapsed < 5.0,
        f"worst rel err {worst:.2e}, {elapsed:.2f}s",
    )


# --- task distribution --------------------------------------------------------


def test_task_distribution_bless_profile():
    start = time.perf_counter()
    dist = task_distribution(BLESS_COUNTS, gamma=1.0)
    sums_ok = abs(float(dist.probs.sum()) - 1.0) < 1e-9

    ordered = sorted(BLESS_COUNTS, key=BLESS_COUNTS.get)
    probs = [dist.prob(n) for n in ordered]
    monotone = all(a < b for a, b in zip(probs, probs[1:]))

    draws = sample_tasks(dist, 100_000, np.random.default_rng(99))
    max_dev = max(
        abs(draws.count(n) / 100_000 - dist.prob(n)) for n in dist.relation_names
    )
    elapsed = time.perf_counter() - start
    record(
        "task distribution (sum, ordering, 100k draws within ±0.01)",
        sums_ok and monotone and max_dev < 0.01 and elapsed < 5.0,
        f"max dev {max_dev:.4f}, {elapsed:.2f}s",
    )


# --- prototype oracle -----------------------------------------------------------


def test_prototype_oracle():
    from lexrel.data import EmbeddingTable, RelationTriple

    rs = RelationSet.from_names(["a", "b", "c", "random"])
    rng = np.random.default_rng(33)
    dim = 12
    entries = {f"c{i}": rng.standard_normal(dim) for i in range(500)}
    emb = EmbeddingTable(dim, entries)
    names = list(entries)
    triples = [
        RelationTriple(names[rng.integers(0, 500)], names[rng.integers(0, 500)],
                       rs.labels[rng.integers(0, 4)])
        for _ in range(1000)
    ]
    protos = compute_prototypes(triples, emb, rs)

    worst = 0.0
    for label in rs.non_random():
        total = np.zeros(dim)
        n = 0
        for t in triples:
            if t.relation == label:
                total = total + (emb.vector(t.x) - emb.vector(t.y))
                n += 1
        worst = max(worst, float(np.abs(protos.vector(label.name) - total / n).max()))

    spec = make_spec(12, [25, 25, 25], noise_sigma=0.0, seed=44)
    semb, sds = generate(spec)
    sprotos = compute_prototypes(sds.train, semb, sds.relation_set)
    exact = all(
        np.array_equal(sprotos.vector(r.name), r.offset) for r in spec.relations
    )
    record(
        "prototype oracle (brute force within 1e-12, zero-noise recovery exact)",
        worst < 1e-12 and exact,
        f"max dev {worst:.2e}, exact={exact}",
    )


# --- end-to-end synthetic benchmark ---------------------------------------------


@pytest.fixture(scope="module")
def benchmark_run():
    spec = make_spec(16, [200] * 5, n_val=50, n_test=50, noise_sigma=0.05,
                     include_random=True, random_counts=(200, 50, 50), seed=7)
    emb, ds = generate(spec)
    start = time.perf_counter()
    cfg = TrainConfig(seed=123, max_meta_iters=200)
    params, protos, report = train_pipeline(ds, emb, cfg)
    elapsed = time.perf_counter() - start
    return emb, ds, params, protos, report, elapsed


def test_end_to_end_synthetic_benchmark(benchmark_run):
    emb, ds, params, protos, report, elapsed = benchmark_run
    oracle_protos = compute_prototypes(ds.train, emb, ds.relation_set)
    oracle = nearest_prototype_accuracy(
        ds.test, emb, oracle_protos.matrix, oracle_protos.relation_names, ran_name="random"
    )
    rep = evaluate(params, protos, ds.test, emb)
    record(
        "end-to-end synthetic benchmark (weighted F1 >= 0.95, oracle >= 0.99, < 2 min)",
        rep.weighted_f1 >= 0.95 and oracle >= 0.99 and elapsed < 120.0,
        f"F1 {rep.weighted_f1:.4f}, oracle {oracle:.4f}, {elapsed:.1f}s",
    )


def test_probe_accuracy_reaches_090_within_100_iterations(benchmark_run):
    *_, report, _ = benchmark_run
    first = next(
        (r.iteration for r in report.meta_rows if r.mean_accuracy >= 0.90), None
    )
    first_all = next(
        (r.iteration for r in report.meta_rows
         if all(a >= 0.90 for _, a in r.task_accuracies)),
        None,
    )
    record(
        "meta probe accuracy >= 0.90 within 100 iterations",
        first is not None and first <= 100 and first_all is not None and first_all <= 100,
        f"mean first at iteration {first}, all tasks at {first_all}",
    )


# --- ablation ordering ------------------------------------------------------------


def test_ablation_ordering_meta_vs_plain():
    start = time.perf_counter()
    spec = make_spec(16, [400, 200, 100, 50, 25], n_val=50, n_test=50,
                     noise_sigma=0.05, include_random=True,
                     random_counts=(200, 50, 50), seed=11)
    emb, ds = generate(spec)
    scores = {True: [], False: []}
    for seed in (101, 102, 103, 104, 105):
        for use_meta in (True, False):
            cfg = TrainConfig(seed=seed, max_meta_iters=200)
            params, protos, _ = train_pipeline(ds, emb, cfg, use_meta=use_meta)
            scores[use_meta].append(evaluate(params, protos, ds.test, emb).weighted_f1)
    med_meta = float(np.median(scores[True]))
    med_plain = float(np.median(scores[False]))
    elapsed = time.perf_counter() - start
    record(
        "ablation ordering (median weighted F1: meta+fine-tune >= fine-tune only)",
        med_meta >= med_plain and elapsed < 600.0,
        f"meta {med_meta:.4f} vs plain {med_plain:.4f}, {elapsed:.0f}s",
    )


# --- metric harness ------------------------------------------------------------


def test_metric_harness():
    from test_evaluation import brute_force_weighted

    rng = np.random.default_rng(55)
    worst = 0.0
    for _ in range(100):
        c = int(rng.integers(2, 8))
        confusion = rng.integers(0, 40, size=(c, c))
        names = [f"k{i}" for i in range(c)]
        report = metrics_from_confusion(confusion, names)
        wp, wr, wf = brute_force_weighted(confusion.tolist())
        worst = max(
            worst,
            abs(report.weighted_precision - wp),
            abs(report.weighted_recall - wr),
            abs(report.weighted_f1 - wf),
        )
    worked = metrics_from_confusion(np.array([[2, 0], [1, 1]]), ["A", "B"])
    exact = abs(worked.weighted_f1 - 11 / 15) < 1e-12
    record(
        "metric harness (100 random confusions within 1e-12, worked example exact)",
        worst < 1e-12 and exact,
        f"max dev {worst:.2e}",
    )


# --- determinism ------------------------------------------------------------------


def test_full_pipeline_determinism(tmp_path):
    spec = make_spec(16, [60, 60, 60], n_val=20, n_test=20, noise_sigma=0.05,
                     random_counts=(60, 20, 20), seed=31)
    emb, ds = generate(spec)
    cfg = TrainConfig(seed=77, max_meta_iters=30, max_supervised_epochs=20, patience=0)

    blobs = []
    reports = []
    for i in (0, 1):
        params, protos, report = train_pipeline(ds, emb, cfg)
        path = tmp_path / f"run{i}.ckpt"
        save_checkpoint(path, params, protos)
        blobs.append(path.read_bytes())
        reports.append(
            report.meta_report_text(params.relation_names) + report.supervised_report_text()
        )
    record(
        "determinism (identical seeds give bitwise-identical checkpoints and reports)",
        blobs[0] == blobs[1] and reports[0] == reports[1],
    )


# --- structural checks ----------------------------------------------------------


def test_structural_checks(benchmark_run):
    emb, ds, params, protos, report, _ = benchmark_run

    d = emb.dim
    k = len(params.relation_names)
    width_ok = trunk_input_width(params) == 2 * k * d + 2 * d

    # prototypes are constants: recomputing them after training is bit-identical
    fresh = compute_prototypes(ds.train, emb, ds.relation_set)
    protos_ok = (
        np.array_equal(protos.matrix, fresh.matrix) and not protos.matrix.flags.writeable
    )

    # meta-head discard preserves the trunk exactly
    rs = RelationSet.from_names(["p", "q", "random"])
    full = init_params(8, rs, seed=5)
    pm = PrototypeSet(8, ("p", "q"), np.random.default_rng(0).standard_normal((2, 8)),
                      {"p": 1, "q": 1})
    xb, yb = np.random.default_rng(1).standard_normal((2, 6, 8))
    before = network_forward_batch(full, pm, xb, yb, head="final")[0]
    after = network_forward_batch(full.without_meta_heads(), pm, xb, yb, head="final")[0]
    discard_ok = np.array_equal(before, after)

    # parameter count at the encoder width for the benchmark inventories
    inventories = {
        "4 classes with random": RelationSet.from_names(
            ["co-hyponym", "hypernym", "meronym", "random"]),
        "6 classes with random": RelationSet.from_names(
            ["attribute", "co-hyponym", "event", "hypernym", "meronym", "random"]),
        "3 classes with random": RelationSet.from_names(
            ["co-hyponym", "hypernym", "random"]),
        "7 classes no random": RelationSet.from_names(
            ["antonym", "attribute", "holonym", "hypernym", "meronym",
             "substance-meronym", "synonym"], ran_name=""),
        "5 classes with random": RelationSet.from_names(
            ["antonym", "hypernym", "meronym", "synonym", "random"]),
    }
    counts = {name: parameter_count(768, rs) for name, rs in inventories.items()}
    band_ok = all(7_000_000 <= n <= 24_000_000 for n in counts.values())

    record(
        "structural checks (trunk width, frozen prototypes, head discard, parameter band)",
        width_ok and protos_ok and discard_ok and band_ok,
        f"widths ok={width_ok}, protos ok={protos_ok}, discard ok={discard_ok}, "
        f"counts {sorted(counts.values())}",
    )
