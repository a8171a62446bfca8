"""Command-line pipeline: gen, train, attack, eval, verify.

Exit codes are a stable scripting contract: 0 success, 2 usage or
configuration error, 3 numerical failure.  Every command is
deterministic given its config and seed, including output bytes; the
only nondeterministic output is the timing sidecar written next to
training reports.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import datagen, nn, robust, verify
from ._backend import BACKEND
from .config import KeyReader, parse_kv_file
from .errors import ConfigError, NumericalError
from .loss import LossSpec, Sample as LossSample, stack_samples

MODES = ("robust", "erm", "mlp6", "mlp8")

ARCH_KEYS = ("k_taps", "hidden_dim", "n_layers")


def _fmt(value):
    """Deterministic shortest-exact float formatting for CSV cells."""
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def _write_csv(path, header, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(cell) for cell in row) + "\n")


def _write_json(path, doc, indent=1):
    with open(path, "w", newline="\n") as fh:
        json.dump(doc, fh, indent=indent)
        fh.write("\n")


# ---------------------------------------------------------------------------
# gen


def _manifest_from_config(path, seed_override=None):
    reader = KeyReader(parse_kv_file(path), source=str(path))
    manifest = datagen.DatasetManifest(
        n_nodes=reader.get_int("n_nodes"),
        n_features=reader.get_int("n_features"),
        n_samples=reader.get_int("n_samples"),
        observed_fraction=reader.get_float("observed_fraction", 0.3),
        noise_sigma=reader.get_float("noise_sigma", 0.05),
        seed=reader.get_int("seed", 0),
        graph_kind=reader.get_choice("graph_kind", ("grid2d", "geometric"), "grid2d"),
        graph_param=reader.get_float("graph_param", 0.35),
        mask_mode=reader.get_choice("mask_mode", ("per_sample", "fixed"), "per_sample"),
        train_fraction=reader.get_float("train_fraction", 0.8),
    )
    reader.finish()
    if seed_override is not None:
        manifest.seed = seed_override
    try:
        manifest.validate()
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return manifest


def cmd_gen(args):
    manifest = _manifest_from_config(args.config, args.seed)
    g, samples = datagen.generate_dataset(manifest)
    datagen.write_dataset(args.out, manifest, g, samples)
    print(
        f"wrote dataset: {manifest.n_samples} samples on {manifest.n_nodes} nodes "
        f"({len(manifest.train_indices)} train / {len(manifest.test_indices)} test) -> {args.out}"
    )
    return 0


# ---------------------------------------------------------------------------
# train


def _split_train_config(path):
    """Separate architecture keys from the training-loop keys."""
    mapping = parse_kv_file(path)
    arch = {k: mapping.pop(k) for k in ARCH_KEYS if k in mapping}
    reader = KeyReader(arch, source=str(path))
    arch_values = {
        "k_taps": reader.get_int("k_taps", 2),
        "hidden_dim": reader.get_int("hidden_dim", 8),
        "n_layers": reader.get_int("n_layers", 2),
    }
    reader.finish()
    try:
        cfg = robust.robust_config_from_mapping(mapping, source=str(path))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from exc
    return cfg, arch_values


def _build_model(mode, n_features, arch, seed):
    if mode in ("robust", "erm"):
        specs = nn.gnn_architecture(
            n_features, k_taps=arch["k_taps"], hidden_dim=arch["hidden_dim"],
            n_layers=arch["n_layers"],
        )
    else:
        depth = 6 if mode == "mlp6" else 8
        specs = nn.mlp_architecture(n_features, hidden_dim=arch["hidden_dim"], n_layers=depth)
    return nn.init_model(specs, seed)


def _report_docs(report, seed):
    epochs = [
        {
            "epoch": e.epoch,
            "objective": e.objective,
            "gamma": e.gamma,
            "mean_inner_improvement": e.mean_inner_improvement,
            "mean_transport_cost": e.mean_transport_cost,
        }
        for e in report.epochs
    ]
    doc = {
        "mode": report.mode,
        "seed": seed,
        "final_gamma": report.final_gamma,
        "epochs": epochs,
    }
    rows = [
        (e.epoch, e.objective, e.gamma, e.mean_inner_improvement, e.mean_transport_cost)
        for e in report.epochs
    ]
    timing = {
        "wall_clock_per_epoch": [e.wall_clock for e in report.epochs],
        "total": sum(e.wall_clock for e in report.epochs),
    }
    return doc, rows, timing


def cmd_train(args):
    cfg, arch = _split_train_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    manifest, g, train, _ = datagen.load_dataset(args.data)
    model_init = _build_model(args.mode, manifest.n_features, arch, cfg.seed)
    if args.mode == "robust":
        model, _, report = robust.robust_train(train, g, model_init, cfg)
    else:
        model, report = robust.erm_train(train, g, model_init, cfg)
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, "checkpoint.json")
    nn.save_checkpoint(model, ckpt, meta={"seed": cfg.seed, "trained_epochs": cfg.epochs})
    doc, rows, timing = _report_docs(report, cfg.seed)
    doc["checkpoint"] = "checkpoint.json"
    _write_json(os.path.join(args.out, "report.json"), doc)
    _write_csv(
        os.path.join(args.out, "report.csv"),
        ("epoch", "objective", "gamma", "mean_inner_improvement", "mean_transport_cost"),
        rows,
    )
    _write_json(os.path.join(args.out, "timing.json"), timing)
    last = report.epochs[-1].objective
    print(f"trained {args.mode} ({BACKEND} kernels): final objective {last:.6g} -> {ckpt}")
    return 0


# ---------------------------------------------------------------------------
# attack


def _predict_stack(model, g, feats_stack):
    out, _ = nn.forward_stack(model, g, feats_stack)
    preds = out[:, :, 0]
    if not np.isfinite(preds).all():
        raise NumericalError("non-finite predictions")
    return preds


def _rmse_unobserved(preds, labels, observed):
    unobs = ~observed
    if unobs.any():
        return float(np.sqrt(np.mean((preds[unobs] - labels[unobs]) ** 2)))
    return float(np.sqrt(np.mean((preds - labels) ** 2)))


def cmd_attack(args):
    model, _ = nn.load_checkpoint(args.checkpoint)
    manifest, g, _, test = datagen.load_dataset(args.data)
    if not test:
        raise ConfigError("dataset has no test split to attack")
    spec = LossSpec(kind="squared")
    feats, labels, observed = stack_samples(test)
    # the attack targets the evaluation loss: squared error at every node
    # with a finite label, so graph-blind models are not trivially immune
    eval_mask = np.isfinite(labels)
    if not eval_mask.any():
        raise ConfigError("test labels are all missing; nothing to attack")
    gamma = args.gamma
    if gamma is None:
        probe_set = [
            LossSample(s.features, s.labels, np.isfinite(s.labels))
            for s in test[: min(8, len(test))]
        ]
        estimate = robust.curvature_probe(model, g, probe_set, spec, probes=3, seed=args.seed)
        gamma = 2.0 * max(estimate, 0.5) + 1.0
    res = robust.ascend_batch(
        model, g, feats, labels, eval_mask, gamma, args.rho, spec,
        steps=args.steps, step_size=1.0 / (2.0 * gamma),
    )
    deltas = res.xi - feats
    avg_cost = float((deltas**2).sum(axis=(0, 2)).mean())
    if avg_cost > 0.0:
        scale = float(np.sqrt(args.rho / avg_cost))
    else:
        scale = 0.0
        if args.rho > 0:
            print(
                "warning: ascent produced no perturbation; budget cannot be met",
                file=sys.stderr,
            )
    perturbed = feats + scale * deltas
    achieved = float(((perturbed - feats) ** 2).sum(axis=(0, 2)).mean())

    preds = _predict_stack(model, g, perturbed)
    sqerr = (preds - labels) ** 2
    os.makedirs(args.out, exist_ok=True)
    _write_json(
        os.path.join(args.out, "perturbed.json"),
        {
            "rho": args.rho,
            "gamma": gamma,
            "avg_cost": achieved,
            "features": [perturbed[:, b, :].ravel().tolist() for b in range(perturbed.shape[1])],
        },
        indent=None,
    )
    rows = []
    for b in range(preds.shape[1]):
        for node in range(preds.shape[0]):
            rows.append((b, node, sqerr[node, b], int(observed[node, b])))
    rmse = _rmse_unobserved(preds, labels, observed)
    rows.append(("RMSE_unobserved", "", rmse, ""))
    _write_csv(
        os.path.join(args.out, "attack_metrics.csv"),
        ("sample_index", "node_index", "squared_error", "observed_flag"),
        rows,
    )
    _write_json(
        os.path.join(args.out, "attack_summary.json"),
        {
            "target_rho": args.rho,
            "gamma": gamma,
            "avg_cost": achieved,
            "rmse_unobserved": rmse,
        },
    )
    print(f"attack budget {args.rho}: mean cost {achieved:.6g}, unobserved RMSE {rmse:.6g}")
    return 0


# ---------------------------------------------------------------------------
# eval


def _load_perturbed(path, n_nodes, n_features, n_samples):
    try:
        with open(path) as fh:
            doc = json.load(fh)
        feats = [
            np.array(flat, dtype=np.float64).reshape(n_nodes, n_features)
            for flat in doc["features"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed perturbed set ({exc})") from exc
    if len(feats) != n_samples:
        raise ConfigError(f"{path}: has {len(feats)} samples, expected {n_samples}")
    return np.ascontiguousarray(np.stack(feats, axis=1))


def cmd_eval(args):
    model, _ = nn.load_checkpoint(args.checkpoint)
    manifest, g, _, test = datagen.load_dataset(args.data)
    if not test:
        raise ConfigError("dataset has no test split to evaluate")
    feats, labels, observed = stack_samples(test)
    if args.perturbed:
        feats = _load_perturbed(args.perturbed, manifest.n_nodes, manifest.n_features, len(test))
    preds = _predict_stack(model, g, feats)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for b in range(preds.shape[1]):
        for node in range(preds.shape[0]):
            rows.append((b, node, labels[node, b], preds[node, b], int(observed[node, b])))
    rmse = _rmse_unobserved(preds, labels, observed)
    rows.append(("RMSE_unobserved", "", "", rmse, ""))
    _write_csv(
        os.path.join(args.out, "metrics.csv"),
        ("sample_index", "node_index", "truth", "prediction", "observed_flag"),
        rows,
    )
    if args.nodes:
        for node in _parse_nodes(args.nodes, g.n_nodes):
            series = [(b, labels[node, b], preds[node, b]) for b in range(preds.shape[1])]
            _write_csv(
                os.path.join(args.out, f"series_node_{node}.csv"),
                ("sample_index", "truth", "prediction"),
                series,
            )
    print(f"evaluated {preds.shape[1]} samples: unobserved RMSE {rmse:.6g}")
    return 0


def _parse_nodes(text, n_nodes):
    try:
        nodes = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"--nodes: {exc}") from exc
    for node in nodes:
        if not 0 <= node < n_nodes:
            raise ConfigError(f"--nodes: index {node} out of range")
    return nodes


# ---------------------------------------------------------------------------
# verify


def cmd_verify(args):
    report = verify.run_all(seed=args.seed)
    width = max(len(c.name) for c in report.checks)
    for check in report.checks:
        status = "PASS" if check.passed else "FAIL"
        print(f"{check.name:<{width}}  {status}")
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    _write_json(os.path.join(out_dir, "verify_report.json"), report.to_json())
    if not report.passed:
        print("verification FAILED", file=sys.stderr)
        return 3
    print("all checks passed")
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    parser = argparse.ArgumentParser(
        prog="graphdro",
        description="Robust graph-network node regression: data, training, attacks, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", required=True, choices=MODES)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="generate worst-case test perturbations")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--steps", type=int, default=80)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("eval", help="evaluate a checkpoint on clean or perturbed data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--perturbed", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--nodes", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the numerical oracle battery")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
