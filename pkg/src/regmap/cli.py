"""Command-line interface.

Stages communicate through files so any single stage can be replaced by an
external tool (e.g. displacement fields from another registration package).

Exit codes: 0 success, 2 argument errors (argparse), 3 missing input files,
4 schema/model mismatch, 5 invalid configuration.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__, forest as rf, pipeline

EXIT_MISSING_INPUT = 3
EXIT_SCHEMA = 4
EXIT_CONFIG = 5


def _load_config(args) -> pipeline.E2EConfig:
    values = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise pipeline.MissingInputError(str(path))
        try:
            values = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise pipeline.ConfigError(f"{path}: {exc}") from exc
    forest_values = values.pop("forest", {})
    known = {f.name for f in dataclasses.fields(pipeline.E2EConfig)}
    unknown = set(values) - known
    if unknown:
        raise pipeline.ConfigError(f"unknown config keys: {sorted(unknown)}")
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        values["threads"] = args.threads
    if getattr(args, "schema", None) is not None:
        values["schema"] = args.schema
    if getattr(args, "pairs", None) is not None:
        values["pairs"] = args.pairs
    if getattr(args, "dims", None) is not None:
        values["dims"] = args.dims
    if "budgets" in values:
        values["budgets"] = tuple(values["budgets"])
    try:
        forest_cfg = rf.ForestConfig(**forest_values)
        if "seed" in values and "seed" not in forest_values:
            forest_cfg = dataclasses.replace(forest_cfg, seed=values["seed"])
        return pipeline.E2EConfig(forest=forest_cfg, **values)
    except (TypeError, ValueError) as exc:
        raise pipeline.ConfigError(str(exc)) from exc


def _add_common(p, schema=True):
    p.add_argument("--config", help="TOML configuration file")
    p.add_argument("--seed", type=int, help="master random seed")
    p.add_argument("--threads", type=int,
                   help="worker processes (default: REGMAP_THREADS or cpu count)")
    if schema:
        p.add_argument("--schema", help="feature schema name")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="regmap",
                                 description="Voxel-wise registration error "
                                             "prediction")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic image pairs")
    _add_common(p, schema=False)
    p.add_argument("--pairs", type=int, help="number of synthetic pairs")
    p.add_argument("--dims", type=int, help="cubic volume size in voxels")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("register", help="register a pair and build ensembles")
    _add_common(p, schema=False)
    p.add_argument("pair_dir", help="directory with fixed.mhd and moving.mhd")
    p.add_argument("--no-ensembles", action="store_true",
                   help="skip the perturbation ensembles")

    p = sub.add_parser("features", help="extract a feature/target table")
    _add_common(p)
    p.add_argument("pair_dir")
    p.add_argument("--budget", type=int, default=0,
                   help="iteration-budget index of the registration to use")
    p.add_argument("--out", required=True, help="output table (.csv)")

    p = sub.add_parser("train", help="train a regression forest")
    _add_common(p)
    p.add_argument("table", help="sample table (.csv or binary basename)")
    p.add_argument("--out", required=True, help="model file")

    p = sub.add_parser("predict", help="apply a trained model to a table")
    _add_common(p, schema=False)
    p.add_argument("model")
    p.add_argument("table")
    p.add_argument("--out", required=True, help="predictions CSV")

    p = sub.add_parser("evaluate", help="pair-level cross-validated metrics")
    _add_common(p, schema=False)
    p.add_argument("table")
    p.add_argument("--folds", type=int, default=3)
    p.add_argument("--out", required=True, help="report directory")

    p = sub.add_parser("importance", help="permutation feature importance")
    _add_common(p, schema=False)
    p.add_argument("model")
    p.add_argument("table", help="the table the model was trained on")
    p.add_argument("--out", required=True, help="importance CSV")

    p = sub.add_parser("e2e", help="full pipeline on synthetic data")
    _add_common(p)
    p.add_argument("--pairs", type=int, help="number of synthetic pairs")
    p.add_argument("--dims", type=int, help="cubic volume size in voxels")
    p.add_argument("--out", required=True, help="output directory")
    return ap


def _dispatch(args) -> None:
    cfg = _load_config(args)
    if args.command == "synth":
        pipeline.stage_synth(cfg, args.out)
    elif args.command == "register":
        pipeline.stage_register(cfg, args.pair_dir,
                                with_ensembles=not args.no_ensembles)
    elif args.command == "features":
        pipeline.stage_features(cfg, args.pair_dir, args.budget, args.out)
    elif args.command == "train":
        pipeline.stage_train(args.table, cfg.schema, cfg.forest, args.out)
    elif args.command == "predict":
        pipeline.stage_predict(args.model, args.table, args.out)
    elif args.command == "evaluate":
        agg = pipeline.stage_evaluate(args.table, cfg.forest, args.folds,
                                      cfg.seed, args.out)
        print(f"mae={agg['mae']:.3f} accuracy={agg['accuracy']:.3f}")
    elif args.command == "importance":
        pipeline.stage_importance(args.model, args.table, args.out)
    elif args.command == "e2e":
        agg = pipeline.run_e2e(cfg, args.out)
        print(f"mae={agg['mae']:.3f} accuracy={agg['accuracy']:.3f}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _dispatch(args)
    except pipeline.MissingInputError as exc:
        print(f"regmap: missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except FileNotFoundError as exc:
        print(f"regmap: missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except pipeline.SchemaError as exc:
        print(f"regmap: schema mismatch: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (pipeline.ConfigError, ValueError) as exc:
        print(f"regmap: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
