"""Command-line entry point.

Subcommands: synth (generate cluster fixtures), train, encode, eval,
sweep, structure.  Exit codes: 0 success, 2 input or contract error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import filecmp
import itertools
import json
import sys
from pathlib import Path

import numpy as np

from .components import build_structure
from .data import FeatureSet, synthetic_clusters
from .encoder import encode_binary, encode_relaxed, load_model, save_model
from .errors import ContractError, NumericError, TrainingDivergedError
from .io import RunConfig, read_codes, read_features, read_labels, write_codes, write_features, write_labels
from .retrieval import evaluate, map_at_k
from .training import TrainConfig, run_em

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3


def _require(value, what: str):
    if value is None:
        raise ContractError(f"{what} not given on the command line or in the config")
    return value


def _write_log(path, records, log_timings: bool) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            if not log_timings:
                rec = {**rec, "estep_seconds": 0.0, "mstep_seconds": 0.0}
            fh.write(json.dumps(rec, sort_keys=True))
            fh.write("\n")


def cmd_train(args) -> int:
    cfg = RunConfig.from_json(args.config)
    features = read_features(_require(args.features or cfg.features, "feature file"))
    train_cfg = TrainConfig(**cfg.train_fields())
    try:
        result = run_em(FeatureSet(features), train_cfg)
    except TrainingDivergedError as exc:
        dump = Path(args.log).with_suffix(".diverged.json")
        dump.write_text(
            json.dumps(
                {"epoch": exc.epoch, "batch_indices": exc.batch_indices, "loss": exc.loss},
                sort_keys=True,
            )
        )
        raise
    save_model(result.model, args.out)
    _write_log(args.log, result.log, cfg.log_timings)
    return EXIT_OK


def cmd_encode(args) -> int:
    model = load_model(args.model)
    features = read_features(args.features)
    write_codes(args.out, encode_binary(model, features))
    return EXIT_OK


def _common_width(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c = max(a.shape[1], b.shape[1])
    pad = lambda m: np.pad(m, ((0, 0), (0, c - m.shape[1])))
    return pad(a), pad(b)


def cmd_eval(args) -> int:
    query_codes = read_codes(args.query_codes)
    db_codes = read_codes(args.db_codes)
    query_labels, db_labels = _common_width(read_labels(args.query_labels), read_labels(args.db_labels))
    if query_labels.shape[0] != query_codes.count or db_labels.shape[0] != db_codes.count:
        raise ContractError("label row counts do not match code counts")
    exclude_self = filecmp.cmp(args.query_codes, args.db_codes, shallow=False) and filecmp.cmp(
        args.query_labels, args.db_labels, shallow=False
    )
    precision_ks = [int(v) for v in args.precision_ks.split(",")] if args.precision_ks else None
    report = evaluate(
        query_codes,
        query_labels,
        db_codes,
        db_labels,
        k=args.k,
        precision_ks=precision_ks,
        exclude_self=exclude_self,
    )
    out = Path(args.out)
    out.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    base = out.with_suffix("") if out.suffix == ".json" else out
    with open(f"{base}.pr.csv", "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh)
        w.writerow(["recall", "precision"])
        w.writerows(report.pr_curve)
    with open(f"{base}.precision.csv", "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "precision"])
        w.writerows(report.precision_at_k)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = RunConfig.from_json(args.config)
    with open(args.grid, "r", encoding="utf-8") as fh:
        grid = json.load(fh)
    unknown = sorted(set(grid) - {"fine_components", "coarse_ratio", "component_weight"})
    if unknown:
        raise ContractError(f"unknown grid keys: {', '.join(unknown)}")
    m1_values = grid.get("fine_components", [cfg.fine_components])
    ratio_values = grid.get("coarse_ratio", [cfg.coarse_components / cfg.fine_components])
    weight_values = grid.get("component_weight", [cfg.component_weight])

    features = read_features(_require(args.features or cfg.features, "feature file"))
    db_labels = read_labels(_require(cfg.labels, "database label file"))
    query_features = read_features(_require(cfg.query_features, "query feature file"))
    query_labels = read_labels(_require(cfg.query_labels, "query label file"))
    query_labels, db_labels = _common_width(query_labels, db_labels)
    k = cfg.eval_k[0]

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for m1, ratio, weight in itertools.product(m1_values, ratio_values, weight_values):
        m2 = min(max(1, round(ratio * m1)), m1)
        row = {
            "fine_components": m1,
            "coarse_ratio": ratio,
            "coarse_components": m2,
            "component_weight": weight,
            "map_at_k": "",
            "status": "ok",
        }
        try:
            train_cfg = TrainConfig(
                **{
                    **cfg.train_fields(),
                    "fine_components": m1,
                    "coarse_components": m2,
                    "component_weight": weight,
                }
            )
            result = run_em(FeatureSet(features), train_cfg)
            query_codes = encode_binary(result.model, query_features)
            row["map_at_k"] = map_at_k(query_codes, query_labels, result.codes, db_labels, k=k)
        except (ContractError, NumericError) as exc:
            row["status"] = f"failed: {type(exc).__name__}: {exc}"
        rows.append(row)

    with open(out_dir / "results.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)
    return EXIT_OK


def cmd_structure(args) -> int:
    model = load_model(args.model)
    features = read_features(args.features)
    cfg = RunConfig.from_json(args.config)
    codes = encode_relaxed(model, features)
    structure = build_structure(codes, cfg.fine_components, cfg.coarse_components, cfg.seed)
    P1 = structure.fine_assignments
    top = min(5, P1.shape[1])
    order = np.argsort(-P1, axis=1, kind="stable")[:, :top]
    doc = {
        "fine": {
            "priors": structure.fine.priors.tolist(),
            "means": structure.fine.means.tolist(),
        },
        "coarse": {
            "priors": structure.coarse.priors.tolist(),
            "means": structure.coarse.means.tolist(),
            "membership": structure.coarse.membership.tolist(),
        },
        "samples": [
            {"top_fine": [[int(j), float(P1[i, j])] for j in order[i]]} for i in range(P1.shape[0])
        ],
    }
    if args.include_covariances:
        doc["fine"]["covariances"] = structure.fine.covariances.tolist()
    Path(args.out).write_text(json.dumps(doc, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_synth(args) -> int:
    train, query = synthetic_clusters(args.clusters, args.train_n, args.query_n, args.dim, args.sigma, args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_features(out_dir / "train.feat", train.features)
    write_labels(out_dir / "train.labels", train.labels)
    write_features(out_dir / "query.feat", query.features)
    write_labels(out_dir / "query.labels", query.labels)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dsch", description="Semantic-component hashing toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a hash model")
    p.add_argument("--features", help="feature file (overrides the config path)")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--log", required=True, help="JSON-lines training log to write")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="encode features to packed binary codes")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("eval", help="evaluate query codes against a database")
    p.add_argument("--query-codes", required=True)
    p.add_argument("--query-labels", required=True)
    p.add_argument("--db-codes", required=True)
    p.add_argument("--db-labels", required=True)
    p.add_argument("--k", type=int, default=5000)
    p.add_argument("--precision-ks", help="comma-separated precision cutoffs")
    p.add_argument("--out", required=True, help="JSON report path (CSV curves written alongside)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="grid of training+eval runs")
    p.add_argument("--features", help="feature file (overrides the config path)")
    p.add_argument("--config", required=True)
    p.add_argument("--grid", required=True, help="JSON grid of fine_components / coarse_ratio / component_weight")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("structure", help="dump the component structure for inspection")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--include-covariances", action="store_true")
    p.set_defaults(func=cmd_structure)

    p = sub.add_parser("synth", help="generate Gaussian-cluster fixtures")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--clusters", type=int, default=3)
    p.add_argument("--train-n", type=int, default=600)
    p.add_argument("--query-n", type=int, default=150)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--sigma", type=float, default=0.15)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ContractError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
