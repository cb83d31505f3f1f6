"""Command-line operator surface.

Subcommands: ``prepare`` (dataset conversion and synthetic fixtures),
``train`` (joint pretraining), ``eval`` (linear probe / SVM protocols),
``diagnose`` (factor and disentanglement diagnostics), and ``ablate-k``
(factor-count sweep). Every report is written as delimited text with a
matching figure rendered next to it.

Configuration is flat ``key = value`` text validated against a typed
schema; unknown keys are rejected and all violations are reported at
once. ``DIGGR_DATA_DIR`` provides the dataset root when ``data_dir`` is
not set. Exit codes: 0 success, 2 configuration error, 3 runtime or
numeric error.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .data import (
    LoadError,
    FormatError,
    GraphDataset,
    PLANETOID_NAMES,
    degree_onehot_features,
    generate_sbm,
    load_graph_npz,
    load_planetoid,
    load_ppi,
    load_tu_dataset,
    save_graph_npz,
)
from .factor_model import NumericError
from .training import ConfigError, TrainConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class _Key:
    def __init__(self, kind, default, help_text, choices=None):
        self.kind = kind
        self.default = default
        self.help = help_text
        self.choices = choices


def _train_schema():
    base = TrainConfig()
    helps = {
        "mask_rate": "fraction of each factor's nodes masked per step",
        "hidden_size": "total autoencoder hidden width (split across factors)",
        "max_epoch": "training epochs (no early stopping)",
        "learning_rate": "initial Adam learning rate, cosine-decayed",
        "weight_decay": "Adam weight decay",
        "lambda_d": "weight of the factor-path reconstruction loss",
        "lambda_g": "weight of the graph-level reconstruction loss",
        "lambda_z": "weight of the factor-model loss",
        "factor_num": "number of latent factors K",
        "batch_size": "graphs per batch (graph-level tasks)",
        "pooling": "graph readout",
        "gamma_sce": "scaled-cosine-error exponent",
        "seed": "global seed",
        "backbone": "autoencoder layer kind",
        "global_mask_mode": "how the graph-level mask is drawn",
        "edge_factorization": "weighted (trainable) or cut edge split",
        "num_layers": "encoder depth",
        "num_heads": "attention heads (gat)",
        "decoder_layers": "decoder depth",
        "factor_hidden": "hidden width of the factor-model encoder",
        "factor_init_gain": "init gain of the factor-model encoder",
        "prior_alpha": "Gamma prior shape",
        "prior_beta": "Gamma prior rate (or scale, see prior_convention)",
        "prior_convention": "how prior_beta is read",
        "train_gamma": "learn factor activation levels (else fixed at 1)",
        "soft_tau": "relative threshold for soft factor membership",
        "remask": "zero masked rows again before decoding",
        "dtype": "training precision",
        "grad_clip": "global gradient-norm clip (0 disables)",
        "neg_sampling": "non-edge term: auto, full, or sampled",
        "neg_ratio": "sampled non-edges per edge",
        "deterministic": "single-threaded bitwise-reproducible mode",
    }
    choices = {
        "pooling": ("mean", "max", "sum"),
        "backbone": ("gcn", "gat", "gin"),
        "global_mask_mode": ("fresh_uniform", "union_of_factors"),
        "edge_factorization": ("weighted", "cut"),
        "prior_convention": ("shape_rate", "shape_scale"),
        "dtype": ("float32", "float64"),
        "neg_sampling": ("auto", "full", "sampled"),
    }
    schema = {}
    for field in dataclasses.fields(TrainConfig):
        schema[field.name] = _Key(
            field.type if isinstance(field.type, type) else type(field.default),
            getattr(base, field.name),
            helps.get(field.name, field.name),
            choices.get(field.name),
        )
    return schema


SCHEMA = _train_schema()
SCHEMA.update(
    {
        "dataset": _Key(str, "", "dataset name (planetoid/TU/ppi) or .npz fixture path"),
        "data_dir": _Key(str, "", "dataset root; falls back to $DIGGR_DATA_DIR"),
        "task": _Key(str, "node", "downstream task kind", ("node", "graph")),
        "embed_mode": _Key(
            str, "auto", "representation fed to evaluation", ("auto", "H_d", "H_g", "concat")
        ),
        "max_degree": _Key(int, 400, "degree clamp for one-hot features"),
        "probe_runs": _Key(int, 5, "linear-probe repetitions"),
        "probe_epochs": _Key(int, 300, "linear-probe epochs"),
        "probe_lr": _Key(float, 0.01, "linear-probe learning rate"),
        "probe_weight_decay": _Key(float, 1e-4, "linear-probe weight decay"),
        "svm_runs": _Key(int, 5, "SVM shuffles"),
        "svm_folds": _Key(int, 10, "SVM cross-validation folds"),
        "diag_tau": _Key(float, 0.5, "soft-membership threshold for diagnostics"),
        "diag_hops": _Key(int, 1, "hop radius for subgraph-overlap statistics"),
    }
)

TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}


def default_config():
    return {name: key.default for name, key in SCHEMA.items()}


def _coerce(name, raw):
    key = SCHEMA[name]
    raw = raw.strip()
    if key.kind is bool or isinstance(key.default, bool):
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got '{raw}'")
    if isinstance(key.default, int) and not isinstance(key.default, bool):
        try:
            return int(raw)
        except ValueError:
            raise ValueError(f"{name}: expected an integer, got '{raw}'") from None
    if isinstance(key.default, float):
        try:
            return float(raw)
        except ValueError:
            raise ValueError(f"{name}: expected a number, got '{raw}'") from None
    if key.choices and raw not in key.choices:
        raise ValueError(f"{name}: expected one of {key.choices}, got '{raw}'")
    return raw


def parse_config_text(text, source="<config>"):
    """Parse flat key=value lines; returns (values, error list)."""
    values, errors = {}, []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            errors.append(f"{source}:{lineno}: expected 'key = value', got '{stripped}'")
            continue
        name, raw = (part.strip() for part in stripped.split("=", 1))
        if name not in SCHEMA:
            errors.append(f"{source}:{lineno}: unknown config key '{name}'")
            continue
        try:
            values[name] = _coerce(name, raw)
        except ValueError as exc:
            errors.append(f"{source}:{lineno}: {exc}")
    return values, errors


def preset_path(name):
    pkg = resources.files("diggr") / "presets" / f"{name.lower()}.preset"
    return pkg if pkg.is_file() else None


def available_presets():
    pkg = resources.files("diggr") / "presets"
    return sorted(p.name[: -len(".preset")] for p in pkg.iterdir() if p.name.endswith(".preset"))


def build_config(config_arg, overrides, seed=None):
    """Resolve a config file or preset name plus --set overrides."""
    values = default_config()
    errors = []
    if config_arg:
        path = Path(config_arg)
        if path.exists():
            parsed, errs = parse_config_text(path.read_text(), str(path))
        else:
            preset = preset_path(config_arg)
            if preset is None:
                return None, [
                    f"config '{config_arg}' is neither a file nor a bundled preset "
                    f"(presets: {', '.join(available_presets())})"
                ]
            parsed, errs = parse_config_text(preset.read_text(), f"preset:{config_arg}")
        values.update(parsed)
        errors.extend(errs)
    for item in overrides or []:
        if "=" not in item:
            errors.append(f"--set '{item}': expected key=value")
            continue
        name, raw = (part.strip() for part in item.split("=", 1))
        if name not in SCHEMA:
            errors.append(f"--set: unknown config key '{name}'")
            continue
        try:
            values[name] = _coerce(name, raw)
        except ValueError as exc:
            errors.append(f"--set: {exc}")
    if seed is not None:
        values["seed"] = seed
    train_cfg = TrainConfig(**{k: values[k] for k in TRAIN_KEYS})
    errors.extend(train_cfg.problems())
    if errors:
        return None, errors
    return values, []


def train_config_from(values):
    return TrainConfig(**{k: values[k] for k in TRAIN_KEYS})


# ---------------------------------------------------------------------------
# dataset resolution
# ---------------------------------------------------------------------------


def data_root(values):
    root = values.get("data_dir") or os.environ.get("DIGGR_DATA_DIR") or "."
    return Path(root)


def load_for_run(values):
    """Load whatever `dataset` names; returns (task, data, splits_or_None)."""
    name = values["dataset"]
    if not name:
        raise ConfigError("config key 'dataset' is required")
    root = data_root(values)
    if name.endswith(".npz"):
        path = Path(name)
        if not path.is_absolute() and not path.exists():
            path = root / name
        graph, splits = load_graph_npz(path)
        return "node", graph, splits or None
    lowered = name.lower()
    if lowered in PLANETOID_NAMES:
        graph, splits = load_planetoid(root, lowered)
        return "node", graph, splits
    if lowered == "ppi":
        graph, splits = load_ppi(root if (root / "ppi-G.json").exists() else root / "ppi")
        return "node", graph, splits
    dataset = load_tu_dataset(root, name)
    if dataset.graphs[0].num_features == 0:
        dataset = degree_onehot_features(dataset, values["max_degree"])
    return "graph", dataset, None


def resolve_mode(values, task):
    mode = values.get("embed_mode", "auto")
    if mode == "auto":
        return "concat" if task == "node" else "H_d"
    return mode


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def write_columnar(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def write_report(path, report):
    lines = [f"{key},{value}" for key, value in report.rows()]
    Path(path).write_text("\n".join(lines) + "\n")


def _out_dirs(out):
    out = Path(out)
    figures = out / "figures"
    out.mkdir(parents=True, exist_ok=True)
    figures.mkdir(exist_ok=True)
    return out, figures


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_prepare(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.synthetic is not None:
        spec = {}
        for token in args.synthetic:
            if "=" not in token:
                raise ConfigError(f"--synthetic '{token}': expected key=value")
            key, raw = token.split("=", 1)
            spec[key.strip()] = raw.strip()
        unknown = set(spec) - {"blocks", "p_in", "p_out", "seed"}
        if unknown:
            raise ConfigError(f"--synthetic: unknown keys {sorted(unknown)}")
        try:
            blocks = [int(b) for b in spec.get("blocks", "50,50").split(",") if b]
            p_in = float(spec.get("p_in", "0.3"))
            p_out = float(spec.get("p_out", "0.02"))
            seed = int(spec.get("seed", "0"))
        except ValueError as exc:
            raise ConfigError(f"--synthetic: {exc}") from None
        if not 0.0 <= p_in <= 1.0:
            raise ConfigError(f"--synthetic: p_in must lie in [0, 1], got {p_in}")
        if not 0.0 <= p_out <= 1.0:
            raise ConfigError(f"--synthetic: p_out must lie in [0, 1], got {p_out}")
        graph = generate_sbm(blocks, p_in, p_out, seed)
        rng = np.random.default_rng(seed)
        order = rng.permutation(graph.num_nodes)
        n = graph.num_nodes
        splits = {
            "train": np.sort(order[: int(0.6 * n)]),
            "val": np.sort(order[int(0.6 * n) : int(0.8 * n)]),
            "test": np.sort(order[int(0.8 * n) :]),
        }
        path = out / f"sbm_{'x'.join(str(b) for b in blocks)}_seed{seed}.npz"
        save_graph_npz(graph, path, splits=splits)
        print(f"wrote {path}: {graph.num_nodes} nodes, {graph.num_edges} edges, "
              f"{len(blocks)} blocks")
        return EXIT_OK
    if args.tu_dir:
        name = args.name or Path(args.tu_dir).name
        dataset = load_tu_dataset(args.tu_dir, name)
        labels = dataset.graph_labels()
        summary = [
            ("graphs", len(dataset)),
            ("classes", dataset.num_classes),
            ("feature_dims", dataset.graphs[0].num_features),
            ("total_nodes", sum(g.num_nodes for g in dataset.graphs)),
            ("total_edges", sum(g.num_edges for g in dataset.graphs)),
            ("label_counts", "|".join(str(c) for c in np.bincount(labels))),
        ]
        write_columnar(out / f"{name}_summary.csv", ("key", "value"), summary)
        for key, value in summary:
            print(f"{key}: {value}")
        return EXIT_OK
    raise ConfigError("prepare needs --synthetic or --tu-dir")


def cmd_train(args):
    from . import reporting, training

    values, errors = build_config(args.config, args.set, args.seed)
    if errors:
        for err in errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    if args.data:
        values["data_dir"] = args.data
    task, data, splits = load_for_run(values)
    if values["task"] != task:
        print(
            f"config error: dataset '{values['dataset']}' is a {task}-level "
            f"dataset but task = {values['task']}",
            file=sys.stderr,
        )
        return EXIT_CONFIG
    out, figures = _out_dirs(args.out)
    cfg = train_config_from(values)
    result = training.train(
        data, cfg, log_every=max(1, cfg.max_epoch // 10) if args.verbose else 0
    )
    write_columnar(
        out / "history.csv",
        ("epoch", "loss_d", "loss_g", "loss_z", "total", "lr"),
        [
            (r["epoch"], r["loss_d"], r["loss_g"], r["loss_z"], r["total"], r["lr"])
            for r in result.history
        ],
    )
    reporting.save_loss_curves(result.history, figures / "loss_curves.png")
    extra = {"run_config": values}
    if splits is not None:
        extra["splits"] = {k: np.asarray(v) for k, v in splits.items()}
    training.save_checkpoint(out / "checkpoint.ckpt", result, extra=extra)
    print(f"trained {cfg.max_epoch} epochs; final total loss "
          f"{result.history[-1]['total']:.6f}")
    print(f"wrote {out / 'history.csv'} and {out / 'checkpoint.ckpt'}")
    return EXIT_OK


def _load_run(checkpoint, device="cpu"):
    from . import training

    result, payload = training.load_checkpoint(checkpoint, device=device)
    values = payload.get("run_config") or default_config()
    splits = payload.get("splits")
    return result, values, splits


def cmd_eval(args):
    from . import reporting, training
    from .evaluation import graph_classify_svm, linear_probe

    result, values, splits = _load_run(args.checkpoint)
    for item in args.set or []:
        if "=" not in item:
            print(f"config error: --set '{item}': expected key=value", file=sys.stderr)
            return EXIT_CONFIG
        name, raw = (part.strip() for part in item.split("=", 1))
        if name not in SCHEMA:
            print(f"config error: --set: unknown config key '{name}'", file=sys.stderr)
            return EXIT_CONFIG
        values[name] = _coerce(name, raw)
    task, data, fresh_splits = load_for_run(values)
    splits = splits if splits is not None else fresh_splits
    requested = args.task or values["task"]
    if requested != task:
        print(
            f"error: --task {requested} but dataset '{values['dataset']}' "
            f"is {task}-level",
            file=sys.stderr,
        )
        return EXIT_CONFIG
    mode = args.mode or resolve_mode(values, task)
    pooling = args.pooling or result.config.pooling
    out, figures = _out_dirs(args.out)

    bundle = training.embed(data, result.model, mode=mode, pooling=pooling)
    if task == "node":
        if splits is None:
            print("error: node task needs train/val/test splits", file=sys.stderr)
            return EXIT_CONFIG
        labels = data.node_labels if hasattr(data, "node_labels") else None
        report = linear_probe(
            bundle.select(mode),
            labels,
            splits,
            runs=values["probe_runs"],
            epochs=values["probe_epochs"],
            lr=values["probe_lr"],
            weight_decay=values["probe_weight_decay"],
            seed=result.config.seed,
        )
    else:
        report = graph_classify_svm(
            bundle.pooled,
            data.graph_labels(),
            folds=values["svm_folds"],
            runs=values["svm_runs"],
            seed=result.config.seed,
        )
    report.protocol["mode"] = mode
    if task == "graph":
        report.protocol["pooling"] = pooling
    write_report(out / "report.csv", report)
    reporting.save_run_scores(report, figures / "score_runs.png")
    print(f"{task} {report.metric_name}: {report.mean:.4f} +/- {report.std:.4f} "
          f"({len(report.per_run)} runs, mode {mode})")
    print(f"wrote {out / 'report.csv'}")
    return EXIT_OK


def cmd_diagnose(args):
    from . import reporting, training
    from .evaluation import (
        correlation_matrix,
        export_embeddings,
        factor_label_nmi,
        factor_overlap_score,
        subgraph_overlap_stats,
    )
    from .factorization import factorize_edges_weighted, soft_assign

    result, values, _ = _load_run(args.checkpoint)
    task, data, _ = load_for_run(values)
    out, figures = _out_dirs(args.out)
    tau = args.tau if args.tau is not None else values["diag_tau"]
    hops = args.hops if args.hops is not None else values["diag_hops"]
    mode = resolve_mode(values, task)

    bundle = training.embed(data, result.model, mode=mode)
    graphs = [data] if not isinstance(data, GraphDataset) else data.graphs
    gamma = result.model.gamma().detach().cpu().numpy()

    # per-node partition dump
    write_columnar(
        out / "partition.csv",
        ("node_id", "factor"),
        list(enumerate(bundle.hard_labels.tolist())),
    )

    # per-edge factor weights, node offsets follow dataset order
    k = result.config.factor_num
    edge_rows = []
    offset = 0
    for g in graphs:
        fact = factorize_edges_weighted(
            g, bundle.factors[offset : offset + g.num_nodes], gamma
        )
        for u, v in g.edges:
            for fk in range(k):
                edge_rows.append(
                    (int(u) + offset, int(v) + offset, fk,
                     float(fact.weighted_adjacencies[fk][u, v]))
                )
        offset += g.num_nodes
    write_columnar(out / "edge_factors.csv", ("u", "v", "k", "weight"), edge_rows)

    diag_rows = []
    node_labels = np.concatenate(
        [g.node_labels for g in graphs]
    ) if all(g.node_labels is not None for g in graphs) else None
    if node_labels is not None and node_labels.ndim == 1:
        label_nmi = factor_label_nmi(bundle.hard_labels, node_labels)
        diag_rows.append(("factor_label_nmi", label_nmi))
    else:
        print("warning: no single-label node labels; skipping factor/label NMI",
              file=sys.stderr)

    if k >= 2:
        import torch

        from .factorization import affiliation_scores

        offset = 0
        overlap_nmis, overlap_jaccards = [], []
        for g in graphs:
            idx = torch.as_tensor(g.directed_edges())
            z_g = torch.as_tensor(bundle.factors[offset : offset + g.num_nodes])
            s = affiliation_scores(
                z_g, torch.as_tensor(gamma, dtype=z_g.dtype), idx, g.num_nodes
            )
            sets = soft_assign(s.numpy(), tau)
            score = factor_overlap_score(sets, g.num_nodes)
            overlap_nmis.append(score.nmi)
            overlap_jaccards.append(score.jaccard)
            offset += g.num_nodes
        diag_rows.append(("overlap_nmi", float(np.mean(overlap_nmis))))
        diag_rows.append(("overlap_jaccard", float(np.mean(overlap_jaccards))))
        diag_rows.append(("overlap_tau", tau))

    # correlation structure of the evaluation representation
    rep = bundle.select(mode)
    corr = correlation_matrix(rep)
    write_columnar(
        out / "correlation.csv",
        tuple(f"e{i}" for i in range(corr.shape[1])),
        [tuple(float(v) for v in row) for row in corr],
    )
    reporting.save_correlation_heatmap(corr, figures / "correlation.png")

    # subgraph-overlap statistics on the first graph
    g0 = graphs[0]
    fact0 = factorize_edges_weighted(g0, bundle.factors[: g0.num_nodes], gamma)
    stats = subgraph_overlap_stats(
        g0.adjacency(), fact0.weighted_adjacencies, hops=hops
    )
    write_columnar(
        out / "subgraph_overlap.csv",
        ("key", "value"),
        [
            ("hops", stats["hops"]),
            ("original_mean", stats["original_mean"]),
            ("factorized_mean", stats["factorized_mean"]),
            ("ratio", stats["ratio"]),
        ]
        + [(f"factor_{i}_mean", m) for i, m in enumerate(stats["factor_means"])],
    )

    write_columnar(out / "diagnostics.csv", ("key", "value"), diag_rows)

    labels_for_export = (
        node_labels if node_labels is not None and node_labels.ndim == 1
        else np.full(rep.shape[0], -1)
    )
    export_embeddings(
        rep,
        out / "embeddings.csv",
        labels=labels_for_export,
        factors=bundle.hard_labels,
    )
    reporting.save_factor_sizes(bundle.hard_labels, k, figures / "factor_sizes.png")
    reporting.save_embedding_scatter(
        rep, labels_for_export, figures / "embedding_pca.png"
    )
    for key, value in diag_rows:
        print(f"{key}: {value}")
    print(f"wrote diagnostics under {out}")
    return EXIT_OK


def cmd_ablate_k(args):
    from . import reporting, training
    from .evaluation import graph_classify_svm, linear_probe

    values, errors = build_config(args.config, args.set, args.seed)
    if errors:
        for err in errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        k_list = [int(k) for k in args.k_list.split(",") if k]
    except ValueError:
        print(f"config error: --k-list '{args.k_list}' must be comma-separated "
              f"integers", file=sys.stderr)
        return EXIT_CONFIG
    bad = [
        k for k in k_list
        if k < 1 or values["hidden_size"] % k != 0
        or (values["backbone"] == "gat"
            and (values["hidden_size"] // k) % values["num_heads"] != 0)
    ]
    if bad:
        print(
            f"config error: hidden_size {values['hidden_size']} cannot be split "
            f"over K in {bad} (divisibility, heads)",
            file=sys.stderr,
        )
        return EXIT_CONFIG
    task, data, splits = load_for_run(values)
    out, figures = _out_dirs(args.out)
    mode = resolve_mode(values, task)
    rows = []
    for k in k_list:
        cfg = train_config_from({**values, "factor_num": k})
        result = training.train(data, cfg)
        bundle = training.embed(data, result.model, mode=mode, pooling=cfg.pooling)
        if task == "node":
            report = linear_probe(
                bundle.select(mode),
                data.node_labels,
                splits,
                runs=values["probe_runs"],
                epochs=values["probe_epochs"],
                lr=values["probe_lr"],
                weight_decay=values["probe_weight_decay"],
                seed=cfg.seed,
            )
        else:
            report = graph_classify_svm(
                bundle.pooled,
                data.graph_labels(),
                folds=values["svm_folds"],
                runs=values["svm_runs"],
                seed=cfg.seed,
            )
        rows.append((k, report.mean, report.std))
        print(f"K={k}: {report.mean:.4f} +/- {report.std:.4f}")
    baseline = next((m for k, m, _ in rows if k == 1), None)
    table = [
        (k, mean, std, (mean - baseline) if baseline is not None else float("nan"))
        for k, mean, std in rows
    ]
    write_columnar(
        out / "k_sweep.csv", ("factor_num", "mean", "std", "gain_vs_k1"), table
    )
    reporting.save_k_sweep(
        [r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows],
        figures / "k_sweep.png",
    )
    print(f"wrote {out / 'k_sweep.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _schema_epilog():
    lines = ["config keys (flat 'key = value' files; override with --set):"]
    for name, key in SCHEMA.items():
        choice = f" {key.choices}" if key.choices else ""
        lines.append(f"  {name} = {key.default!r}{choice}  -- {key.help}")
    lines.append("")
    lines.append(f"bundled presets: {', '.join(available_presets())}")
    return "\n".join(lines)


def make_parser():
    parser = argparse.ArgumentParser(
        prog="diggr",
        description=(
            "Disentangled generative graph representation learning: "
            "factor-guided masked-autoencoder pretraining and evaluation."
        ),
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=_schema_epilog(),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="convert raw datasets or generate fixtures")
    p.add_argument("--synthetic", nargs="+", metavar="KEY=VALUE",
                   help="generate a planted-partition fixture "
                        "(blocks=100,100 p_in=0.3 p_out=0.02 seed=7)")
    p.add_argument("--tu-dir", help="directory holding a TU-format dataset")
    p.add_argument("--name", help="dataset name inside --tu-dir")
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser(
        "train",
        help="joint pretraining",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=_schema_epilog(),
    )
    p.add_argument("--config", required=True,
                   help="config file path or bundled preset name")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--out", default="runs/latest", help="output directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--data", help="dataset root override")
    p.add_argument("--verbose", action="store_true", help="log training progress")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run the downstream evaluation protocol")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", choices=("node", "graph"))
    p.add_argument("--mode", choices=("H_d", "H_g", "concat"))
    p.add_argument("--pooling", choices=("mean", "max", "sum"))
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", default="runs/latest", help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("diagnose", help="factor and disentanglement diagnostics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tau", type=float, help="soft-membership threshold")
    p.add_argument("--hops", type=int, help="subgraph-overlap hop radius")
    p.add_argument("--out", default="runs/latest", help="output directory")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("ablate-k", help="accuracy sweep over the factor count")
    p.add_argument("--config", required=True)
    p.add_argument("--k-list", default="1,2,4,8")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", default="runs/latest", help="output directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_ablate_k)
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, LoadError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
