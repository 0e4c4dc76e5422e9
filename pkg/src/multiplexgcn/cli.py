"""Command-line entry point: train / eval / verify / synth.

Every run writes a manifest.json recording the resolved configuration,
input digests and output digests; re-running the manifest's argv in
deterministic mode reproduces the data artifacts bitwise.

Exit codes: 0 ok, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__, ingest, metrics, model, plots, synth, training, walks

logger = logging.getLogger(__name__)


class UsageError(ValueError):
    pass


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _dataset_inputs(data_dir):
    names = [ingest.META_FILE, ingest.EDGES_FILE, ingest.FEATURES_FILE,
             ingest.LABELS_FILE]
    inputs = {}
    for name in names:
        path = os.path.join(data_dir, name)
        if os.path.exists(path):
            inputs[name] = {"path": path, "sha256": _sha256(path)}
    return inputs


def _require_dir(path, what):
    if path is None:
        raise UsageError(f"{what} is required")
    if not os.path.isdir(path):
        raise UsageError(f"{what} {path!r} is not a directory")
    return path


def _require_file(path, what):
    if path is None:
        raise UsageError(f"{what} is required")
    if not os.path.isfile(path):
        raise UsageError(f"{what} {path!r} does not exist")
    return path


def _write_manifest(out_dir, command, argv, config, inputs, outputs,
                    deterministic):
    manifest = {
        "tool": "multiplexgcn",
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "deterministic": bool(deterministic),
        "config": config,
        "inputs": inputs,
        "outputs": {
            name: {"path": path, "sha256": _sha256(path)}
            for name, path in outputs.items()
        },
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _link_metric_rows(task, result, seed):
    rows = []
    for r, vals in sorted(result.per_type.items()):
        for name in metrics.LINK_METRIC_NAMES:
            rows.append((f"{task}:{result.partition}", str(r), name,
                         vals[name], seed))
    for name in metrics.LINK_METRIC_NAMES:
        rows.append((f"{task}:{result.partition}", "macro", name,
                     result.macro[name], seed))
    return rows


def _node_metric_rows(task, vals, partition, seed):
    return [(f"{task}:{partition}", "downstream", name, vals[name], seed)
            for name in ("macro_f1", "micro_f1")]


def cmd_train(args, argv):
    data = _require_dir(args.data, "--data")
    os.makedirs(args.out, exist_ok=True)
    g = ingest.load_dataset(data)
    config = training.TrainConfig(
        task=args.task, epochs=args.epochs, lr=args.lr,
        weight_decay=args.weight_decay, dropout=args.dropout,
        num_layers=args.layers, dim=args.dim, seed=args.seed,
        negatives_per_positive=args.negatives, ablation=args.ablation,
    )
    if args.task == "link":
        split = ingest.split_links(g, seed=args.seed, strict=False)
    else:
        split = ingest.split_nodes(g, seed=args.seed,
                                   stratified=not args.no_stratify)
    params, trace, history = training.train(g, split, config)

    checkpoint_path = os.path.join(args.out, "checkpoint.bin")
    model.save_checkpoint(checkpoint_path, params, extra={
        "task": config.task,
        "ablation": config.ablation,
        "dropout": config.dropout,
        "seed": config.seed,
        "epochs": config.epochs,
    })
    history_path = os.path.join(args.out, "history.tsv")
    training.write_history(history_path, history)
    plots.save_history_figure(
        history, os.path.join(args.out, "history.png"),
        title=f"{config.task} training (seed {config.seed})")

    rows = []
    summary_lines = []
    if args.task == "link":
        for partition in ("val", "test"):
            try:
                result = metrics.evaluate_links(trace.fused, split, partition)
            except ValueError as exc:
                logger.warning("skipping %s evaluation: %s", partition, exc)
                continue
            rows.extend(_link_metric_rows("link", result, args.seed))
            if partition == "test":
                plots.save_link_metrics_figure(
                    result, os.path.join(args.out, "metrics.png"))
                summary_lines.append(
                    "test macro: " + "  ".join(
                        f"{k}={v:.4f}" for k, v in result.macro.items()))
    else:
        for partition in ("val", "test"):
            vals = metrics.evaluate_nodes(trace.fused, g.labels, split,
                                          partition)
            rows.extend(_node_metric_rows("node", vals, partition,
                                          args.seed))
            if partition == "test":
                plots.save_node_metrics_figure(
                    {k: [v] for k, v in vals.items()},
                    os.path.join(args.out, "metrics.png"))
                summary_lines.append(
                    "test downstream: " + "  ".join(
                        f"{k}={v:.4f}" for k, v in vals.items()))
    metrics_path = os.path.join(args.out, "metrics.tsv")
    metrics.write_metrics_report(metrics_path, rows)

    outputs = {
        "checkpoint": checkpoint_path,
        "history": history_path,
        "metrics": metrics_path,
    }
    _write_manifest(args.out, "train", argv, _config_dict(config),
                    _dataset_inputs(data), outputs, args.deterministic)
    for line in summary_lines:
        print(line)
    print(f"checkpoint written to {checkpoint_path}")
    return 0


def _config_dict(config):
    return {
        "task": config.task, "epochs": config.epochs, "lr": config.lr,
        "weight_decay": config.weight_decay, "dropout": config.dropout,
        "layers": config.num_layers, "dim": config.dim,
        "seed": config.seed,
        "negatives_per_positive": config.negatives_per_positive,
        "ablation": config.ablation,
    }


def cmd_eval(args, argv):
    data = _require_dir(args.data, "--data")
    checkpoint = _require_file(args.checkpoint, "--checkpoint")
    os.makedirs(args.out, exist_ok=True)
    params, header = model.load_checkpoint(checkpoint)
    extra = header.get("extra", {})
    task = args.task or extra.get("task")
    if task not in ("link", "node"):
        raise UsageError("--task is required (checkpoint does not record "
                         "one)")
    last_only = extra.get("ablation") == "last_layer_only"
    g = ingest.load_dataset(data)
    seeds = ([int(s) for s in args.seeds.split(",")] if args.seeds
             else [args.split_seed if args.split_seed is not None
                   else args.seed])

    rows = []
    sweep = {}
    for seed in seeds:
        if task == "link":
            split = ingest.split_links(g, seed=seed, strict=False)
            eval_g = ingest.apply_training_adjacency(g, split)
            trace = model.forward(eval_g, params, "eval",
                                  last_layer_only=last_only)
            result = metrics.evaluate_links(trace.fused, split, "test")
            rows.extend(_link_metric_rows("link", result, seed))
            for name, value in result.macro.items():
                sweep.setdefault(name, []).append(value)
            last_result = result
        else:
            split = ingest.split_nodes(g, seed=seed,
                                       stratified=not args.no_stratify)
            trace = model.forward(g, params, "eval",
                                  last_layer_only=last_only)
            vals = metrics.evaluate_nodes(trace.fused, g.labels, split)
            rows.extend(_node_metric_rows("node", vals, "test", seed))
            for name, value in vals.items():
                sweep.setdefault(name, []).append(value)
    if len(seeds) > 1:
        rows.extend(metrics.summary_rows(f"{task}:test", sweep, seeds))

    metrics_path = os.path.join(args.out, "metrics.tsv")
    metrics.write_metrics_report(metrics_path, rows)
    figure_path = os.path.join(args.out, "metrics.png")
    if task == "link" and len(seeds) == 1:
        plots.save_link_metrics_figure(last_result, figure_path)
    else:
        plots.save_node_metrics_figure(sweep, figure_path,
                                       title=f"{task} test metrics")
    outputs = {"metrics": metrics_path}
    inputs = _dataset_inputs(data)
    inputs["checkpoint"] = {"path": checkpoint,
                            "sha256": _sha256(checkpoint)}
    _write_manifest(args.out, "eval", argv,
                    {"task": task, "seeds": seeds}, inputs, outputs,
                    args.deterministic)
    for name, values in sorted(sweep.items()):
        mean = float(np.mean(values))
        std = float(np.std(values))
        print(f"test {name}: {mean:.4f}" +
              (f" +- {std:.4f} over {len(values)} seeds"
               if len(values) > 1 else ""))
    return 0


def cmd_verify(args, argv):
    os.makedirs(args.out, exist_ok=True)
    if args.toy:
        g = synth.toy_retail_graph()
        inputs = {}
    else:
        data = _require_dir(args.data, "--data (or pass --toy)")
        g = ingest.load_dataset(data)
        inputs = _dataset_inputs(data)
    beta = (np.array([float(x) for x in args.beta.split(",")])
            if args.beta else np.ones(g.num_edge_types))
    if len(beta) != g.num_edge_types:
        raise UsageError(f"--beta needs {g.num_edge_types} values")
    report = walks.verify_power_equivalence(g, beta, args.max_l,
                                            args.tolerance)
    tsv_path = os.path.join(args.out, "deviations.tsv")
    walks.write_deviation_report(tsv_path, report)
    plots.save_deviation_figure(report,
                                os.path.join(args.out, "deviations.png"))
    _write_manifest(args.out, "verify", argv, {
        "beta": [float(b) for b in beta], "max_l": args.max_l,
        "tolerance": args.tolerance, "toy": bool(args.toy),
        "seed": args.seed,
    }, inputs, {"deviations": tsv_path}, args.deterministic)

    status = "PASS" if report.passed else "FAIL"
    print(f"{status}: adjacency powers vs exhaustive walk counts up to "
          f"length {report.max_length}")
    for length in sorted(report.per_length_deviation):
        print(f"  length {length}: max deviation "
              f"{report.per_length_deviation[length]:.3e} "
              f"(tolerance {report.tolerance:g})")
    if not report.passed:
        print(f"  {len(report.violations)} violating pairs; see {tsv_path}")
        return 1
    return 0


def cmd_synth(args, argv):
    os.makedirs(args.out, exist_ok=True)
    if args.edge_type:
        specs = []
        for text in args.edge_type:
            fields = text.split(":")
            if len(fields) != 4:
                raise UsageError(f"--edge-type needs "
                                 f"'src:dst:p_in:p_out', got {text!r}")
            specs.append(synth.EdgeTypeSpec(int(fields[0]), int(fields[1]),
                                            float(fields[2]),
                                            float(fields[3])))
    else:
        specs = None
    nodes = tuple(int(x) for x in args.nodes.split(","))
    kwargs = {"nodes_per_type": nodes, "num_classes": args.classes,
              "feature_dim": args.feature_dim,
              "class_separation": args.class_sep}
    if specs is not None:
        kwargs["edge_types"] = specs
    config = synth.SynthConfig(**kwargs)
    g, _, flags = synth.generate(config, args.seed)
    ingest.write_dataset(g, args.out)
    outputs = {
        name: os.path.join(args.out, name)
        for name in (ingest.META_FILE, ingest.EDGES_FILE,
                     ingest.FEATURES_FILE, ingest.LABELS_FILE)
    }
    _write_manifest(args.out, "synth", argv, {
        "nodes_per_type": list(nodes), "classes": args.classes,
        "feature_dim": args.feature_dim, "class_sep": args.class_sep,
        "edge_types": [[s.src_type, s.dst_type, s.p_in, s.p_out]
                       for s in config.edge_types],
        "seed": args.seed,
    }, {}, outputs, args.deterministic)
    edge_counts = [a.nnz // 2 for a in g.adjacencies]
    print(f"wrote {g.n} nodes, edges per type {edge_counts} "
          f"(signal flags {flags}) to {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="multiplexgcn",
        description="Multiplex heterogeneous network embedding",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--data", help="dataset directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--deterministic", action="store_true",
                       help="pin BLAS/OpenMP to one thread for bitwise "
                            "reproducibility")
        p.add_argument("--out", required=True, help="output directory")

    p_train = sub.add_parser("train", help="train a model")
    common(p_train)
    p_train.add_argument("--task", choices=["link", "node"], required=True)
    p_train.add_argument("--layers", type=int, default=2)
    p_train.add_argument("--dim", type=int, default=200)
    p_train.add_argument("--lr", type=float, default=0.05)
    p_train.add_argument("--weight-decay", type=float, default=0.0005)
    p_train.add_argument("--dropout", type=float, default=0.5)
    p_train.add_argument("--epochs", type=int, default=None,
                         help="default 500 for link, 200 for node")
    p_train.add_argument("--negatives", type=int, default=1,
                         help="negatives per positive, each epoch")
    p_train.add_argument("--ablation", default="none",
                         choices=list(training.ABLATIONS))
    p_train.add_argument("--no-stratify", action="store_true",
                         help="node task: split without class "
                              "stratification")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--task", choices=["link", "node"], default=None)
    p_eval.add_argument("--split-seed", type=int, default=None,
                        help="split seed (defaults to --seed)")
    p_eval.add_argument("--seeds", default=None,
                        help="comma-separated split seeds for a sweep")
    p_eval.add_argument("--no-stratify", action="store_true")
    p_eval.set_defaults(func=cmd_eval)

    p_verify = sub.add_parser(
        "verify", help="check adjacency powers against exhaustive walk "
                       "counts")
    common(p_verify)
    p_verify.add_argument("--toy", action="store_true",
                          help="use the built-in four-node fixture")
    p_verify.add_argument("--beta", default=None,
                          help="comma-separated relation weights "
                               "(default all ones)")
    p_verify.add_argument("--max-l", type=int, default=3)
    p_verify.add_argument("--tolerance", type=float, default=1e-9)
    p_verify.set_defaults(func=cmd_verify)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p_synth)
    p_synth.add_argument("--nodes", default="400",
                         help="comma-separated node count per node type")
    p_synth.add_argument("--classes", type=int, default=2)
    p_synth.add_argument("--feature-dim", type=int, default=8)
    p_synth.add_argument("--class-sep", type=float, default=1.0)
    p_synth.add_argument("--edge-type", action="append", default=None,
                         help="src:dst:p_in:p_out, repeatable (default: "
                              "one signal and one noise type)")
    p_synth.set_defaults(func=cmd_synth)
    return parser


def _expand_manifest(argv):
    if "--from-manifest" not in argv:
        return argv
    i = argv.index("--from-manifest")
    if i + 1 >= len(argv):
        raise UsageError("--from-manifest needs a path")
    path = _require_file(argv[i + 1], "--from-manifest")
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    return manifest["argv"]


def main(argv=None):
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _expand_manifest(argv)
        parser = build_parser()
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:
            return int(exc.code or 0)
        return args.func(args, argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
