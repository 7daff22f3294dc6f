"""Command line entry points.

Four commands cover the whole loop on disk:

  dane generate  draw a synthetic graph pair into a data directory
  dane train     fit the embedder on a pair, write checkpoint and logs
  dane eval      transfer-evaluate a checkpoint in both directions
  dane ablate    same run with and without the adversary, plus deltas

Exit codes: 0 success, 2 unusable input (bad flags, bad config, bad data
files), 3 training diverged to a non-finite loss. Log verbosity comes from
the DANE_LOG_LEVEL environment variable (debug, info, warning, error).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import __version__, eval as ev, train as tr
from .errors import DaneError, NonFiniteLoss
from .graph import (
    GraphPair,
    load_graph,
    load_labels,
    write_edge_file,
    write_feature_file,
    write_label_file,
)
from .model import load_checkpoint, save_checkpoint
from .synth import SynthSpec, generate_pair
from .train import TrainConfig, derive_seeds, encode_pair, fit, with_adv_weight

logger = logging.getLogger(__name__)

_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}
_SYNTH_KEYS = {f.name for f in dataclasses.fields(SynthSpec)}
_CLASSIFIER_KEYS = {"classifier_l2", "classifier_epochs", "classifier_lr"}
_CONFIG_KEYS = _TRAIN_KEYS | _SYNTH_KEYS | _CLASSIFIER_KEYS

_DATA_FILES = {
    "a": ("edges_a.tsv", "features_a.csv", "labels_a.tsv"),
    "b": ("edges_b.tsv", "features_b.csv", "labels_b.tsv"),
}


def _configure_logging() -> None:
    level_name = os.environ.get("DANE_LOG_LEVEL", "warning").lower()
    levels = {
        "debug": logging.DEBUG,
        "info": logging.INFO,
        "warning": logging.WARNING,
        "warn": logging.WARNING,
        "error": logging.ERROR,
    }
    level = levels.get(level_name)
    if level is None:
        print(
            f"warning: DANE_LOG_LEVEL={level_name!r} not recognized, using 'warning'",
            file=sys.stderr,
        )
        level = logging.WARNING
    root = logging.getLogger("dane")
    root.setLevel(level)
    if not root.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        root.addHandler(handler)


def _load_config(path) -> dict:
    """Strict JSON config: every key must be one this tool understands, so
    a typo fails loudly instead of silently running the defaults."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise DaneError(f"{path}: config must be a JSON object")
    unknown = sorted(set(doc) - _CONFIG_KEYS)
    if unknown:
        raise DaneError(f"{path}: unknown config keys: {', '.join(unknown)}")
    return doc


def _gather(args, keys) -> dict:
    """Merge config file values with command line flags; flags win."""
    merged = {}
    config = _load_config(args.config) if args.config else {}
    for key in keys:
        if key in config:
            merged[key] = config[key]
    overrides = {
        "seed": args.seed,
        "adv_weight": getattr(args, "adv_weight", None),
        "epochs": getattr(args, "epochs", None),
        "disc_steps": getattr(args, "disc_steps", None),
        "embedding_dim": getattr(args, "embedding_dim", None),
        "negative_samples": getattr(args, "negative_samples", None),
        "divergence": getattr(args, "divergence", None),
    }
    for key, value in overrides.items():
        if value is not None and key in keys:
            merged[key] = value
    return merged


def _train_config(args) -> TrainConfig:
    values = _gather(args, _TRAIN_KEYS)
    values.setdefault("seed", 0)
    return TrainConfig(**values)


def _classifier_options(args) -> dict:
    config = _load_config(args.config) if args.config else {}
    return {
        "l2": float(config.get("classifier_l2", 1e-3)),
        "epochs": int(config.get("classifier_epochs", 200)),
        "lr": float(config.get("classifier_lr", 0.1)),
    }


def _require_dir(path) -> None:
    if not os.path.isdir(path):
        raise DaneError(f"{path}: not a directory")


def _load_pair(data_dir) -> GraphPair:
    graphs = {}
    for tag, (edges, features, _) in _DATA_FILES.items():
        edge_path = os.path.join(data_dir, edges)
        feature_path = os.path.join(data_dir, features)
        for p in (edge_path, feature_path):
            if not os.path.isfile(p):
                raise DaneError(f"{p}: missing data file")
        graphs[tag] = load_graph(edge_path, feature_path)
    return GraphPair(graphs["a"], graphs["b"])


def _load_pair_labels(data_dir) -> tuple[ev.LabelSet, ev.LabelSet]:
    mappings = []
    for tag in ("a", "b"):
        path = os.path.join(data_dir, _DATA_FILES[tag][2])
        if not os.path.isfile(path):
            raise DaneError(f"{path}: missing label file")
        mappings.append(load_labels(path))
    return ev.align_label_sets(*mappings)


def _write_embeddings(path, v: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("node_id," + ",".join(f"e{j}" for j in range(v.shape[1])) + "\n")
        for i, row in enumerate(v):
            fh.write(f"{i}," + ",".join(repr(float(x)) for x in row) + "\n")


def _read_embeddings(path) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        next(fh)  # header
        for line in fh:
            rows.append([float(x) for x in line.strip().split(",")[1:]])
    return np.array(rows)


# --- commands -------------------------------------------------------------------


def cmd_generate(args) -> int:
    values = _gather(args, _SYNTH_KEYS)
    values.setdefault("seed", 0)
    spec = SynthSpec(**values)
    result = generate_pair(spec)
    os.makedirs(args.out, exist_ok=True)
    for tag, graph, labels in (
        ("a", result.pair.source, result.labels_src),
        ("b", result.pair.target, result.labels_tgt),
    ):
        edges, features, label_file = _DATA_FILES[tag]
        write_edge_file(os.path.join(args.out, edges), graph)
        write_feature_file(os.path.join(args.out, features), graph)
        write_label_file(
            os.path.join(args.out, label_file),
            {i: labels.names_for(i) for i in labels.assignments},
        )
    manifest = {
        "format": "dane-synth-dir",
        "version": 1,
        "spec": dataclasses.asdict(spec),
        "num_nodes": spec.num_nodes,
        "num_edges_a": result.pair.source.num_edges,
        "num_edges_b": result.pair.target.num_edges,
    }
    with open(os.path.join(args.out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(
        f"wrote pair to {args.out}: {spec.num_nodes} nodes per graph, "
        f"{result.pair.source.num_edges}/{result.pair.target.num_edges} edges"
    )
    return 0


def _run_training(pair, cfg, out_dir):
    """fit + write checkpoint, embeddings, and log; returns the result."""
    os.makedirs(out_dir, exist_ok=True)
    result = fit(pair, cfg, diagnostics_path=os.path.join(out_dir, "diverged.json"))
    save_checkpoint(
        os.path.join(out_dir, "checkpoint.json"),
        result.best_encoder,
        result.best_discriminator,
        adv_weight=cfg.adv_weight,
        seed=cfg.seed,
        extra={
            "best_epoch": result.best_epoch,
            "best_total": result.best_total,
            "config": dataclasses.asdict(cfg),
        },
    )
    v_a, v_b = encode_pair(result.best_encoder, pair, cfg.hidden_activation)
    _write_embeddings(os.path.join(out_dir, "embeddings_a.csv"), v_a)
    _write_embeddings(os.path.join(out_dir, "embeddings_b.csv"), v_b)
    result.log.to_csv(os.path.join(out_dir, "train_log.csv"))
    return result


def cmd_train(args) -> int:
    _require_dir(args.data)
    pair = _load_pair(args.data)
    cfg = _train_config(args)
    result = _run_training(pair, cfg, args.out)
    last = result.log.records[-1] if result.log.records else None
    if last is not None:
        print(
            f"trained {cfg.epochs} epochs: best l_total {result.best_total:.6f} "
            f"at epoch {result.best_epoch}; final l_gcn {last.l_gcn:.6f}, "
            f"l_adv {last.l_adv:.6f}"
        )
    print(f"wrote checkpoint and embeddings to {args.out}")
    return 0


def _evaluate_checkpoint(pair, labels_a, labels_b, checkpoint, classifier_options):
    """Both transfer directions plus the distribution distance."""
    config = checkpoint.extra.get("config", {})
    activation = config.get("hidden_activation", "relu")
    v_a, v_b = encode_pair(checkpoint.encoder, pair, activation)
    seeds = derive_seeds(checkpoint.seed)
    clf_a = ev.train_classifier(v_a, labels_a, seed=seeds.classifier, **classifier_options)
    report_ab = ev.evaluate_transfer(clf_a, v_b, labels_b, direction="A->B")
    clf_b = ev.train_classifier(v_b, labels_b, seed=seeds.classifier, **classifier_options)
    report_ba = ev.evaluate_transfer(clf_b, v_a, labels_a, direction="B->A")
    mmd2 = ev.distribution_distance(v_a, v_b)
    return v_a, v_b, report_ab, report_ba, mmd2


def _write_projection(path, v_a, v_b, labels_a, labels_b) -> None:
    projected = ev.project_2d(np.vstack([v_a, v_b]))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", "x", "y", "graph_tag", "label"])
        row = 0
        for tag, v, labels in (("a", v_a, labels_a), ("b", v_b, labels_b)):
            for node in range(v.shape[0]):
                names = (
                    ",".join(labels.names_for(node))
                    if node in labels.assignments
                    else ""
                )
                writer.writerow(
                    [node, repr(projected[row, 0]), repr(projected[row, 1]), tag, names]
                )
                row += 1


def cmd_eval(args) -> int:
    _require_dir(args.data)
    pair = _load_pair(args.data)
    labels_a, labels_b = _load_pair_labels(args.data)
    checkpoint = load_checkpoint(args.checkpoint)
    options = _classifier_options(args)
    v_a, v_b, report_ab, report_ba, mmd2 = _evaluate_checkpoint(
        pair, labels_a, labels_b, checkpoint, options
    )
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report_a2b.json"), "w", encoding="utf-8") as fh:
        fh.write(report_ab.to_json() + "\n")
    with open(os.path.join(args.out, "report_b2a.json"), "w", encoding="utf-8") as fh:
        fh.write(report_ba.to_json() + "\n")
    _write_projection(os.path.join(args.out, "projection.csv"), v_a, v_b, labels_a, labels_b)
    for report in (report_ab, report_ba):
        print(
            f"{report.direction}: micro_f1 {report.micro_f1:.4f} "
            f"macro_f1 {report.macro_f1:.4f} gap {report.gap:.4f}"
        )
    print(f"distribution distance (squared) {mmd2:.6f}")
    print(f"wrote reports and projection to {args.out}")
    return 0


def cmd_ablate(args) -> int:
    _require_dir(args.data)
    pair = _load_pair(args.data)
    labels_a, labels_b = _load_pair_labels(args.data)
    cfg = _train_config(args)
    if cfg.adv_weight == 0.0:
        raise DaneError("ablate needs a non-zero adv_weight to compare against")
    options = _classifier_options(args)
    summary = {"adv_weight": cfg.adv_weight, "seed": cfg.seed}
    results = {}
    for name, run_cfg in (
        ("adversarial", cfg),
        ("baseline", with_adv_weight(cfg, 0.0)),
    ):
        out_dir = os.path.join(args.out, name)
        _run_training(pair, run_cfg, out_dir)
        checkpoint = load_checkpoint(os.path.join(out_dir, "checkpoint.json"))
        _, _, report_ab, report_ba, mmd2 = _evaluate_checkpoint(
            pair, labels_a, labels_b, checkpoint, options
        )
        with open(os.path.join(out_dir, "report_a2b.json"), "w", encoding="utf-8") as fh:
            fh.write(report_ab.to_json() + "\n")
        with open(os.path.join(out_dir, "report_b2a.json"), "w", encoding="utf-8") as fh:
            fh.write(report_ba.to_json() + "\n")
        results[name] = {
            "micro_f1": report_ab.micro_f1,
            "macro_f1": report_ab.macro_f1,
            "gap": report_ab.gap,
            "mmd2": mmd2,
        }
        print(
            f"{name}: micro_f1 {report_ab.micro_f1:.4f} "
            f"macro_f1 {report_ab.macro_f1:.4f} mmd2 {mmd2:.6f}"
        )
    summary.update(results)
    summary["delta"] = {
        key: results["adversarial"][key] - results["baseline"][key]
        for key in ("micro_f1", "macro_f1", "gap", "mmd2")
    }
    with open(os.path.join(args.out, "ablation.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"wrote ablation summary to {args.out}")
    return 0


# --- argument plumbing ------------------------------------------------------------


def _add_common_flags(sub) -> None:
    sub.add_argument("--config", help="JSON config file; flags override its values")
    sub.add_argument("--seed", type=int, default=None, help="run seed")


def _add_train_flags(sub) -> None:
    sub.add_argument(
        "--lambda", dest="adv_weight", type=float, default=None,
        help="adversarial loss weight",
    )
    sub.add_argument("--epochs", type=int, default=None)
    sub.add_argument("--disc-steps", dest="disc_steps", type=int, default=None,
                     help="discriminator updates per encoder update")
    sub.add_argument("--dim", dest="embedding_dim", type=int, default=None,
                     help="embedding width")
    sub.add_argument("--neg-samples", dest="negative_samples", type=int, default=None,
                     help="negatives per edge")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dane",
        description="domain-adaptive node embeddings for graph pairs",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="draw a synthetic graph pair")
    _add_common_flags(p)
    p.add_argument("--divergence", type=float, default=None,
                   help="domain shift strength for the second graph")
    p.add_argument("--out", required=True, help="data directory to create")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="fit the embedder on a graph pair")
    _add_common_flags(p)
    _add_train_flags(p)
    p.add_argument("--data", required=True, help="data directory from generate")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="transfer-evaluate a trained checkpoint")
    _add_common_flags(p)
    p.add_argument("--data", required=True, help="data directory from generate")
    p.add_argument("--checkpoint", required=True, help="checkpoint.json from train")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train with and without the adversary")
    _add_common_flags(p)
    _add_train_flags(p)
    p.add_argument("--data", required=True, help="data directory from generate")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except NonFiniteLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (DaneError, ValueError, TypeError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
