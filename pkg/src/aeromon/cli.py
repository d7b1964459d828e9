"""Command-line front end.

Subcommands mirror the pipeline stages and can be run standalone against the
same output directory; `run` executes the whole chain. Exit codes: 0 success,
2 configuration error, 3 data error, 4 numeric/degeneracy error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from .baselines import CLASSIFIER_KINDS, cross_validate, save_model, select_model
from .config import PipelineConfig, default_config, load_config
from .dataset import MinMaxScaler, apply_scaler, load_csv
from .errors import ConfigError, ToolkitError
from .numerics import derive_seed
from .pipeline import (
    _OutputDir,
    run_pipeline,
    stage_calibrate,
    stage_compare,
    stage_evaluate,
    stage_fit_scalers,
    stage_histogram,
    stage_ingest,
    stage_score,
    stage_split,
    stage_train_ae,
    thread_cap,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aeromon",
        description="Engine-telemetry anomaly detection: reconstruction scorer plus supervised baselines.",
    )
    parser.add_argument("--config", help="path to the flat JSON config (defaults apply if omitted)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="override the config output directory")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("generate", help="materialize data.csv from the configured source")
    sub.add_parser("split", help="stratified test holdout plus reconstruction training splits")
    sub.add_parser("fit-scalers", help="fit the normals-only and full-train min-max scalers")
    sub.add_parser("train-ae", help="train the reconstruction network (needs fit-scalers)")
    sub.add_parser("calibrate", help="calibrate the anomaly threshold on healthy training scores")

    p_score = sub.add_parser("score", help="score a feature-only CSV (never reads labels)")
    p_score.add_argument("--input", default="test_features.csv", help="feature CSV inside the output directory")

    p_clf = sub.add_parser("train-clf", help="train one supervised baseline standalone")
    p_clf.add_argument("--kind", required=True, choices=CLASSIFIER_KINDS)
    p_clf.add_argument("--cv", action="store_true", help="select over the grid flags by cross-validated F1")
    p_clf.add_argument("--k", default=None, help="k-NN neighbour count (comma grid with --cv)")
    p_clf.add_argument("--l2", default=None, help="logreg L2 strength (comma grid with --cv)")
    p_clf.add_argument("--lr", type=float, default=None, help="learning rate (logreg/mlp)")
    p_clf.add_argument("--epochs", type=int, default=None, help="training epochs (logreg/mlp)")
    p_clf.add_argument("--trees", type=int, default=None, help="forest size")
    p_clf.add_argument("--features-per-split", type=int, default=None)
    p_clf.add_argument("--max-depth", type=int, default=None, help="0 means unbounded")
    p_clf.add_argument("--min-leaf", type=int, default=None)
    p_clf.add_argument("--hidden-units", type=int, default=None)
    p_clf.add_argument("--batch-size", type=int, default=None)

    sub.add_parser("evaluate", help="evaluate the scorer and every configured baseline on the test set")
    sub.add_parser("compare", help="assemble the per-model comparison CSV")

    p_hist = sub.add_parser("histogram", help="per-channel class-conditional histogram export")
    p_hist.add_argument("--input", default="data.csv", help="labelled CSV inside the output directory")

    sub.add_parser("run", help="execute the full pipeline")
    return parser


def _resolve(args) -> PipelineConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.config is not None:
        return load_config(args.config, overrides)
    return default_config(overrides)


def _grid(raw: str | None, default: list, cast):
    if raw is None:
        return default
    try:
        values = [cast(t.strip()) for t in raw.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"invalid grid value {raw!r}") from None
    if not values:
        raise ConfigError("grid flag names no values")
    return values


def _train_clf_command(cfg: PipelineConfig, out: _OutputDir, args) -> None:
    base = cfg.baseline_candidates(args.kind)[0]
    kw = {}
    if args.lr is not None:
        kw["learning_rate"] = args.lr
    if args.epochs is not None:
        kw["epochs"] = args.epochs
    if args.trees is not None:
        kw["n_trees"] = args.trees
    if args.features_per_split is not None:
        kw["features_per_split"] = args.features_per_split
    if args.max_depth is not None:
        kw["max_depth"] = args.max_depth or None
    if args.min_leaf is not None:
        kw["min_leaf"] = args.min_leaf
    if args.hidden_units is not None:
        kw["hidden_units"] = args.hidden_units
    if args.batch_size is not None:
        kw["batch_size"] = args.batch_size

    ks = _grid(args.k, [base.k], int)
    l2s = _grid(args.l2, [base.l2_strength], float)
    if args.kind == "knn":
        candidates = [replace(base, k=k, **kw) for k in ks]
    elif args.kind == "logreg":
        candidates = [replace(base, l2_strength=lam, **kw) for lam in l2s]
    else:
        candidates = [replace(base, **kw)]
    if not args.cv and len(candidates) > 1:
        raise ConfigError("multiple grid values need --cv")

    supervised = load_csv(out.file("supervised_train.csv"), has_labels=True)
    scaler = MinMaxScaler.from_dict(
        json.loads(out.file("scaler_supervised.json").read_text(encoding="utf-8"))
    )
    scaled = apply_scaler(scaler, supervised)
    seed = derive_seed(cfg.seed, 90)
    threads = thread_cap()
    if args.cv:
        for cand in candidates:
            mean_f1, per_fold = cross_validate(cand, scaled, folds=cfg["cv_folds"], seed=seed, threads=threads)
            print(f"{cand.kind} {cand}: mean F1 {mean_f1:.4f} per-fold {[round(f, 4) for f in per_fold]}")
    best, model = select_model(candidates, scaled, seed=seed, folds=cfg["cv_folds"], threads=threads)
    model = replace(model, scaler_ref="scaler_supervised.json")
    save_model(model, out.file(f"clf_{args.kind}.json"))
    print(f"wrote clf_{args.kind}.json (selected {best})")


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _resolve(args)
        out = _OutputDir(args.out if args.out is not None else cfg.out_dir)
        if args.command == "run":
            manifest = run_pipeline(cfg, out_dir=out.path, quiet=args.quiet)
            if not args.quiet:
                print(f"config hash {manifest.config_hash}")
            return 0
        if args.command == "generate":
            written = stage_ingest(cfg, out)
        elif args.command == "split":
            written = stage_split(cfg, out)
        elif args.command == "fit-scalers":
            written = stage_fit_scalers(cfg, out)
        elif args.command == "train-ae":
            written = stage_train_ae(cfg, out)
        elif args.command == "calibrate":
            written = stage_calibrate(cfg, out)
        elif args.command == "score":
            written = stage_score(cfg, out, input_name=args.input)
        elif args.command == "train-clf":
            _train_clf_command(cfg, out, args)
            return 0
        elif args.command == "evaluate":
            written = stage_evaluate(cfg, out)
        elif args.command == "compare":
            written = stage_compare(cfg, out)
        elif args.command == "histogram":
            written = stage_histogram(cfg, out, input_name=args.input)
        else:  # pragma: no cover
            raise ConfigError(f"unknown command {args.command}")
        if not args.quiet:
            print(f"wrote {', '.join(written)}")
        return 0
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
