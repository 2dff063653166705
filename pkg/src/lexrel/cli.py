"""Command-line interface.

Subcommands: prototypes, meta-train, train, eval, predict, synth,
sample-check. Every command is a pure function of its inputs (no hidden
state between runs); train commands require an explicit --seed so runs
are reproducible, and each training run writes a manifest that pins the
resolved config, input digests and versions.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

USAGE_EXIT = 1
DATA_EXIT = 2
NUMERICAL_EXIT = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_EXIT, f"{self.prog}: error: {message}\n")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _add_data_args(p, with_splits=True):
    p.add_argument("--embeddings", required=True, help="embedding file (count/dim header)")
    if with_splits:
        p.add_argument("--train", required=True, help="training triple file")
        p.add_argument("--val", help="validation triple file (default: seeded 80/20 split)")
        p.add_argument("--test", help="test triple file")
    p.add_argument("--relations", help="comma-separated relation names (default: inferred)")
    p.add_argument("--ran-label", default="random", help="name of the random class")


def _add_config_args(p):
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--alpha", type=float, help="inner/supervised learning rate")
    p.add_argument("--epsilon", type=float, help="meta learning rate")
    p.add_argument("--gamma", type=float, help="task-distribution smoothing")
    p.add_argument("--n-tasks", type=int, dest="n_tasks")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--l2", "--lambda", type=float, dest="l2")
    p.add_argument("--inner-steps", type=int, dest="inner_steps")
    p.add_argument("--max-meta-iters", type=int, dest="max_meta_iters")
    p.add_argument("--plateau-patience", type=int, dest="plateau_patience")
    p.add_argument("--plateau-min-delta", type=float, dest="plateau_min_delta")
    p.add_argument("--max-epochs", type=int, dest="max_supervised_epochs")
    p.add_argument("--patience", type=int)
    p.add_argument("--meta-update-rule", choices=("fomaml", "reptile"), dest="meta_update_rule")
    p.add_argument("--ran-discard", type=float, dest="ran_discard_fraction")
    p.add_argument("--ran-mode", choices=("auto", "explicit", "complement"), dest="ran_mode")
    p.add_argument("--cell-mode", choices=("shared", "per_relation"), dest="cell_mode")
    p.add_argument("--seed", type=int, required=True, help="master RNG seed (required)")


def build_parser() -> _Parser:
    parser = _Parser(prog="lexrel", description=__doc__)
    parser.add_argument("--threads", type=int, default=1,
                        help="bound BLAS/OpenMP threads (default 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prototypes", parents=[], help="compute relation prototypes")
    p.add_argument("--triples", required=True, help="triple file to average offsets over")
    _add_data_args(p, with_splits=False)
    p.add_argument("--out", required=True, help="prototype export path")

    for name in ("train", "meta-train"):
        p = sub.add_parser(name, help="run the training pipeline" if name == "train"
                           else "run the meta-learning stage only")
        _add_data_args(p)
        _add_config_args(p)
        p.add_argument("--kb", help="extra knowledge-base triples for prototypes")
        p.add_argument("--out", required=True, help="output directory")
        if name == "train":
            p.add_argument("--no-meta", action="store_true",
                           help="skip the meta-learning stage (fine-tune only)")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a triple file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--triples", required=True)
    p.add_argument("--exclude", help="class to drop from the weighted averages")
    p.add_argument("--report", help="also write the report to this path")

    p = sub.add_parser("predict", help="predict labels for x<TAB>y pairs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--input", default="-", help="pair file, '-' for stdin")
    p.add_argument("--output", default="-", help="label output, '-' for stdout")

    p = sub.add_parser("synth", help="generate a synthetic planted-offset dataset")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--n-relations", type=int, default=5, dest="n_relations")
    p.add_argument("--train", default="200", help="per-relation train count (int or CSV)")
    p.add_argument("--val", default="50", help="per-relation validation count")
    p.add_argument("--test", default="50", help="per-relation test count")
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--no-random", action="store_true", help="omit the random class")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("sample-check", help="task distribution diagnostics")
    p.add_argument("--train", required=True, help="training triple file")
    p.add_argument("--relations", help="comma-separated relation names")
    p.add_argument("--ran-label", default="random")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--draws", type=int, default=100_000)
    p.add_argument("--seed", type=int, required=True)
    return parser


def _relation_names(args):
    return args.relations.split(",") if args.relations else None


def _load_data(args, need_test=False):
    from . import data

    emb = data.load_embeddings(args.embeddings)
    dataset = data.load_dataset(
        args.train,
        test_path=getattr(args, "test", None),
        validation_path=getattr(args, "val", None),
        relation_names=_relation_names(args),
        ran_name=args.ran_label,
        embeddings=emb,
        split_seed=getattr(args, "seed", None),
    )
    if need_test and not dataset.test:
        from .errors import DataError

        raise DataError("a test triple file is required")
    return emb, dataset


def _build_config(args):
    from .errors import ConfigError
    from .training import TrainConfig, parse_config_file

    kwargs = parse_config_file(args.config) if args.config else {}
    for field_name in TrainConfig.__dataclass_fields__:
        value = getattr(args, field_name, None)
        if value is not None:
            kwargs[field_name] = value
    config = TrainConfig(**kwargs)
    errs = config.validation_errors()
    if errs:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errs))
    return config


def _write_manifest(out_dir, command, config, inputs, outputs, relation_set):
    from . import __version__
    from ._kernels import BACKEND
    import numpy as np

    manifest = {
        "command": command,
        "config": config.as_dict(),
        "inputs": {k: {"path": str(v), "sha256": _sha256(v)} for k, v in inputs.items()},
        "outputs": {k: str(v) for k, v in outputs.items()},
        "relation_set": list(relation_set.names),
        "random_class": relation_set.random_label.name if relation_set.random_label else None,
        "versions": {"lexrel": __version__, "numpy": np.__version__, "kernel_backend": BACKEND},
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def cmd_prototypes(args) -> int:
    from . import data, prototypes

    emb = data.load_embeddings(args.embeddings)
    names = _relation_names(args)
    if names is None:
        names = data.infer_relation_names(args.triples)
    relation_set = data.RelationSet.from_names(names, ran_name=args.ran_label)
    triples = data.load_triples(args.triples, relation_set)
    protos = prototypes.compute_prototypes(triples, emb, relation_set)
    prototypes.save_prototypes(args.out, protos)
    for name in protos.relation_names:
        print(f"{name}\t{protos.source_counts[name]}")
    return 0


def _run_training(args, meta_only: bool) -> int:
    from . import data, network
    from .errors import ConfigError
    from .training import TrainReport, meta_train, supervised_finetune, train_pipeline

    config = _build_config(args)
    emb, dataset = _load_data(args)
    if emb.dim < 8:
        raise ConfigError(
            f"embedding dimension {emb.dim} is below the production minimum of 8"
        )
    kb_triples = data.load_triples(args.kb, dataset.relation_set) if args.kb else []

    os.makedirs(args.out, exist_ok=True)
    outputs = {"checkpoint": os.path.join(args.out, "model.ckpt")}

    if meta_only:
        import numpy as np

        from .prototypes import compute_prototypes

        rng = np.random.default_rng(config.seed)
        protos = compute_prototypes(
            list(dataset.train) + list(kb_triples), emb, dataset.relation_set
        )
        params = network.init_params(
            emb.dim, dataset.relation_set, rng, shared_cell=(config.cell_mode == "shared")
        )
        params, meta_rows = meta_train(dataset, protos, config, emb, params=params, rng=rng)
        report = TrainReport(meta_rows=meta_rows)
    else:
        use_meta = not getattr(args, "no_meta", False)
        params, protos, report = train_pipeline(
            dataset, emb, config, kb_triples=kb_triples, use_meta=use_meta
        )

    network.save_checkpoint(outputs["checkpoint"], params, protos)
    if report.meta_rows:
        outputs["meta_report"] = os.path.join(args.out, "meta_report.tsv")
        with open(outputs["meta_report"], "w", encoding="utf-8") as f:
            f.write(report.meta_report_text(params.relation_names))
    if report.supervised_rows:
        outputs["supervised_report"] = os.path.join(args.out, "supervised_report.tsv")
        with open(outputs["supervised_report"], "w", encoding="utf-8") as f:
            f.write(report.supervised_report_text())

    inputs = {"embeddings": args.embeddings, "train": args.train}
    for key in ("val", "test", "kb"):
        if getattr(args, key, None):
            inputs[key] = getattr(args, key)
    if args.config:
        inputs["config"] = args.config
    _write_manifest(args.out, "meta-train" if meta_only else "train",
                    config, inputs, outputs, dataset.relation_set)

    if report.meta_rows:
        last = report.meta_rows[-1]
        print(f"meta iterations: {last.iteration}  mean probe accuracy: {last.mean_accuracy:.4f}")
    if report.supervised_rows:
        best = max((r.val_f1 for r in report.supervised_rows if r.val_f1 is not None),
                   default=None)
        line = f"supervised epochs: {report.supervised_rows[-1].epoch}"
        if best is not None:
            line += f"  best val weighted F1: {best:.4f}"
        print(line)
    print(f"checkpoint: {outputs['checkpoint']}")
    return 0


def cmd_train(args) -> int:
    return _run_training(args, meta_only=False)


def cmd_meta_train(args) -> int:
    return _run_training(args, meta_only=True)


def cmd_eval(args) -> int:
    from . import data, network
    from .evaluation import evaluate

    params, protos = network.load_checkpoint(args.checkpoint)
    emb = data.load_embeddings(args.embeddings)
    triples = data.load_triples(args.triples, params.relation_set)
    report = evaluate(params, protos, triples, emb, exclude=args.exclude)
    text = report.to_text()
    if args.report:
        with open(args.report, "w", encoding="utf-8") as f:
            f.write(text)
    sys.stdout.write(text)
    return 0


def cmd_predict(args) -> int:
    from . import data, network
    from .errors import DataError
    from .evaluation import predict_batch

    params, protos = network.load_checkpoint(args.checkpoint)
    emb = data.load_embeddings(args.embeddings)

    stream = sys.stdin if args.input == "-" else open(args.input, encoding="utf-8")
    try:
        pairs = []
        for lineno, line in enumerate(stream, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise DataError(f"input line {lineno}: expected 'x<TAB>y'")
            pairs.append((fields[0], fields[1]))
    finally:
        if stream is not sys.stdin:
            stream.close()

    lines = []
    if pairs:
        x = emb.matrix([p[0] for p in pairs])
        y = emb.matrix([p[1] for p in pairs])
        idx = predict_batch(params, protos, x, y)
        names = params.relation_set.names
        lines = [names[i] for i in idx]
    out = "\n".join(lines) + ("\n" if lines else "")
    if args.output == "-":
        sys.stdout.write(out)
    else:
        with open(args.output, "w", encoding="utf-8") as f:
            f.write(out)
    return 0


def _parse_counts(value: str, n: int, what: str):
    from .errors import ConfigError

    parts = value.split(",")
    try:
        counts = [int(p) for p in parts]
    except ValueError:
        raise ConfigError(f"--{what}: expected an int or comma-separated ints") from None
    if len(counts) == 1:
        counts = counts * n
    if len(counts) != n:
        raise ConfigError(f"--{what}: got {len(counts)} counts for {n} relations")
    return counts


def cmd_synth(args) -> int:
    from . import data, synth

    train = _parse_counts(args.train, args.n_relations, "train")
    val = _parse_counts(args.val, args.n_relations, "val")
    test = _parse_counts(args.test, args.n_relations, "test")
    spec = synth.make_spec(
        args.dim, train, val, test,
        noise_sigma=args.noise,
        include_random=not args.no_random,
        seed=args.seed,
    )
    emb, dataset = synth.generate(spec)

    os.makedirs(args.out, exist_ok=True)
    data.write_embeddings(os.path.join(args.out, "embeddings.tsv"), emb)
    data.write_triples(os.path.join(args.out, "train.tsv"), dataset.train)
    data.write_triples(os.path.join(args.out, "valid.tsv"), dataset.validation)
    data.write_triples(os.path.join(args.out, "test.tsv"), dataset.test)
    offsets = data.EmbeddingTable(
        spec.dim, {r.name: r.offset for r in spec.relations}
    )
    data.write_embeddings(os.path.join(args.out, "offsets.tsv"), offsets)
    print(f"wrote {len(dataset.train)} train / {len(dataset.validation)} val / "
          f"{len(dataset.test)} test triples to {args.out}")
    return 0


def cmd_sample_check(args) -> int:
    import numpy as np

    from . import data
    from .tasks import sample_tasks, task_distribution

    names = _relation_names(args)
    if names is None:
        names = data.infer_relation_names(args.train)
    relation_set = data.RelationSet.from_names(names, ran_name=args.ran_label)
    triples = data.load_triples(args.train, relation_set)
    counts: dict = {}
    for label in relation_set:
        counts[label] = sum(1 for t in triples if t.relation == label)
    dist = task_distribution(
        {l: c for l, c in counts.items() if not l.is_random}, args.gamma
    )
    rng = np.random.default_rng(args.seed)
    draws = sample_tasks(dist, args.draws, rng)
    print("relation\tcount\tprobability\tempirical")
    for name in dist.relation_names:
        emp = draws.count(name) / len(draws)
        print(f"{name}\t{counts[relation_set.get(name)]}\t{dist.prob(name)!r}\t{emp!r}")
    return 0


_COMMANDS = {
    "prototypes": cmd_prototypes,
    "train": cmd_train,
    "meta-train": cmd_meta_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "synth": cmd_synth,
    "sample-check": cmd_sample_check,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(args.threads))

    from .errors import ConfigError, DataError, NumericalError

    try:
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE_EXIT
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return DATA_EXIT
    except NumericalError as e:
        print(f"error: {e}", file=sys.stderr)
        return NUMERICAL_EXIT


if __name__ == "__main__":
    sys.exit(main())
