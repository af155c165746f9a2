"""Command-line entry point: generate / train / eval / ablate / booking.

Every run writes its outputs plus a `manifest.json` describing the
subcommand, seeds, inputs, and tool version, so output directories are
self-describing. Exit codes: 0 success, 2 config error, 3 data error,
4 numeric/training failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import distributions as dist
from . import evaluate as ev
from . import features as feat
from . import train as tr
from .data import filter_records, read_corpus_csv, read_truth_csv, split_records, \
    write_corpus_csv, write_truth_csv
from .exceptions import ConfigError, DataError, SurgdurError
from .generator import EffectScales, GeneratorConfig, generate

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _load_config_file(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return doc


def _write_manifest(out_dir, subcommand, args_dict, outputs, extra=None):
    doc = {
        "tool": "surgdur",
        "tool_version": __version__,
        "subcommand": subcommand,
        "config": args_dict,
        "outputs": sorted(outputs),
    }
    if extra:
        doc.update(extra)
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _build_dataclass(cls, overrides, context):
    valid = {f.name for f in fields(cls)}
    unknown = set(overrides) - valid
    if unknown:
        raise ConfigError(f"unknown {context} field(s): {', '.join(sorted(unknown))}")
    return cls(**overrides)


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def cmd_generate(args):
    overrides = _load_config_file(args.config)
    if "effects" in overrides:
        overrides["effects"] = _build_dataclass(EffectScales, overrides["effects"],
                                                "effect scales")
    overrides.setdefault("n_records", args.n)
    overrides.setdefault("seed", args.seed)
    if args.hetero_strength is not None:
        overrides["hetero_strength"] = args.hetero_strength
    if overrides.get("n_records") is None:
        raise ConfigError("n_records is required (use --n or the config file)")
    config = _build_dataclass(GeneratorConfig, overrides, "generator config")

    corpus = generate(config)
    out = _out_dir(args)
    write_corpus_csv(out / "corpus.csv", corpus.records)
    write_truth_csv(out / "ground_truth.csv", corpus.truth)
    manifest_cfg = asdict(config)
    _write_manifest(out, "generate", manifest_cfg,
                    ["corpus.csv", "ground_truth.csv"],
                    extra={"provenance": corpus.provenance})
    print(f"wrote {len(corpus.records)} records to {out / 'corpus.csv'}")
    return 0


# ---------------------------------------------------------------------------
# shared corpus preparation
# ---------------------------------------------------------------------------

def _prepare_splits(corpus_path, split_seed, schema=None, min_category_count=1):
    corpus = read_corpus_csv(corpus_path)
    kept = filter_records(corpus.records).kept
    if not kept:
        raise DataError("no records survive the duration filter")
    split = split_records(kept, seed=split_seed)
    if schema is None:
        schema = feat.fit_schema(split.train, min_category_count=min_category_count)
    return split, schema


def _encode_splits(schema, split):
    return (feat.encode_matrix(schema, split.train),
            feat.encode_matrix(schema, split.valid),
            feat.encode_matrix(schema, split.test))


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _train_config_from(args, overrides):
    overrides = dict(overrides)
    overrides.setdefault("seed", args.seed)
    if args.family is not None:
        overrides["family"] = args.family
    if args.heteroscedastic:
        overrides["heteroscedastic"] = True
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    cfg = _build_dataclass(tr.TrainConfig, overrides, "train config")
    cfg.validate()
    return cfg


def _write_training_log(path, history):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "lr", "train_loss", "valid_nll"])
        for h in history:
            w.writerow([h.epoch, repr(h.lr), repr(h.train_loss), repr(h.valid_nll)])


def cmd_train(args):
    overrides = _load_config_file(args.config)
    split, schema = _prepare_splits(args.corpus, args.seed,
                                    min_category_count=args.min_category_count)
    outputs = ["model.json"]
    out = _out_dir(args)

    if args.model == "mlp":
        cfg = _train_config_from(args, overrides)
        (train_xy, valid_xy, _) = _encode_splits(schema, split)
        if args.grid:
            model, results = tr.grid_search(cfg.family, cfg.heteroscedastic,
                                            train_xy, valid_xy, base_config=cfg)
            with open(out / "grid_results.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["hidden_layers", "hidden_width", "seed", "valid_nll"])
                for row in results:
                    w.writerow([row["hidden_layers"], row["hidden_width"],
                                row["seed"], repr(row["valid_nll"])])
            outputs.append("grid_results.csv")
        else:
            model = tr.train_mlp(cfg, train_xy, valid_xy)
        _write_training_log(out / "training_log.csv", model.history)
        outputs.append("training_log.csv")
    elif args.model == "linear":
        cfg = _train_config_from(args, overrides)
        (train_xy, valid_xy, _) = _encode_splits(schema, split)
        model = tr.train_linear(train_xy, valid_xy, cfg)
        _write_training_log(out / "training_log.csv", model.history)
        coeffs = tr.linear_coefficients(model, schema)
        with open(out / "coefficients.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["feature", "weight"])
            for name, weight in coeffs:
                w.writerow([name, repr(weight)])
        outputs.extend(["training_log.csv", "coefficients.csv"])
    elif args.model == "procedure_means":
        model = tr.train_procedure_means(split.train)
    elif args.model == "current":
        model = tr.current_method_model()
    else:
        raise ConfigError(f"unknown model kind {args.model!r}")

    # MLP/linear training already fits the constant scale; the record-level
    # baselines still need theirs.
    if not model.heteroscedastic and model.constant_scale is None:
        _, yv = feat.encode_matrix(schema, split.valid)
        tr.fit_point_model_scale(model, valid_records=split.valid, valid_y=yv)

    tr.save_bundle(out / "model.json", model, schema, args.seed, __version__)
    _write_manifest(out, "train",
                    {"model": args.model, "seed": args.seed,
                     "corpus": str(args.corpus), "config": overrides,
                     "grid": bool(args.grid)},
                    outputs, extra={"schema_hash": feat.schema_hash(schema)})
    print(f"trained {args.model} -> {out / 'model.json'}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _current_method_nll(split, y_valid, y_test, test_records):
    cur = tr.current_method_model()
    tr.fit_point_model_scale(cur, valid_records=split.valid, valid_y=y_valid)
    family, params = tr.predict_params(cur, records=test_records)
    return float(np.mean(dist.family_nll(family, y_test, params)))


def cmd_eval(args):
    model, schema, split_seed = tr.load_bundle(args.model)
    split, _ = _prepare_splits(args.corpus, split_seed, schema=schema)
    x_test, y_test = feat.encode_matrix(schema, split.test)
    _, y_valid = feat.encode_matrix(schema, split.valid)

    baseline_nll = _current_method_nll(split, y_valid, y_test, split.test)
    strategies = tuple(args.booking) if args.booking else ()
    report = ev.evaluate_model(model, x_test, split.test, y_test,
                               baseline_nll=baseline_nll,
                               booking_strategies=strategies)

    out = _out_dir(args)
    ev.write_report_json(out / "report.json", report)
    ev.write_calibration_csv(out / "calibration.csv", report.calibration_bins)
    outputs = ["report.json", "calibration.csv"]
    if report.qq_pairs:
        ev.write_qq_csv(out / "qq.csv", report.qq_pairs)
        outputs.append("qq.csv")
    if report.booking:
        ev.write_booking_csv(out / "booking_curve.csv", report.booking)
        outputs.append("booking_curve.csv")
    family, params = tr.predict_params(model, x=x_test, records=split.test)
    ev.write_errors_csv(out / "errors.csv", [r.record_id for r in split.test],
                        y_test, family, params)
    outputs.append("errors.csv")

    _write_manifest(out, "eval",
                    {"model": str(args.model), "corpus": str(args.corpus),
                     "split_seed": split_seed, "booking": list(strategies)},
                    outputs)
    m = report.metrics
    print(f"{report.model_kind} ({report.family}, het={report.heteroscedastic}): "
          f"RMSE {m.rmse_minutes:.2f} min, MAE {m.mae_minutes:.2f} min, "
          f"NLL {m.nll_nats:.4f} nats, delta vs current {m.nll_delta_vs_baseline:+.4f}")
    return 0


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------

def cmd_ablate(args):
    overrides = _load_config_file(args.config)
    cfg = _train_config_from(args, overrides)
    split, schema = _prepare_splits(args.corpus, args.seed,
                                    min_category_count=args.min_category_count)
    train_xy, valid_xy, test_xy = _encode_splits(schema, split)
    groups = feat.feature_groups(schema)
    base, rows = ev.ablation(cfg, train_xy, valid_xy, test_xy, groups)

    out = _out_dir(args)
    ev.write_ablation_csv(out / "ablation.csv", rows)
    _write_manifest(out, "ablate",
                    {"seed": args.seed, "corpus": str(args.corpus),
                     "config": overrides},
                    ["ablation.csv"],
                    extra={"full_model_rmse_minutes": base.rmse_minutes,
                           "full_model_nll_nats": base.nll_nats})
    worst = max(rows, key=lambda r: r.rmse_delta_minutes)
    print(f"ablation over {len(rows)} groups; largest RMSE increase: "
          f"{worst.group} (+{worst.rmse_delta_minutes:.2f} min)")
    return 0


# ---------------------------------------------------------------------------
# booking
# ---------------------------------------------------------------------------

def cmd_booking(args):
    model, schema, split_seed = tr.load_bundle(args.model)
    split, _ = _prepare_splits(args.corpus, split_seed, schema=schema)
    x_test, y_test = feat.encode_matrix(schema, split.test)
    family, params = tr.predict_params(model, x=x_test, records=split.test)

    curve = ev.booking_curve(family, params, y_test, args.strategy)
    out = _out_dir(args)
    ev.write_booking_csv(out / "booking_curve.csv", {args.strategy: curve})
    best = ev.optimal_knob(curve, cost_over=args.cost_over, cost_under=args.cost_under)
    summary = {
        "strategy": args.strategy,
        "cost_over": args.cost_over,
        "cost_under": args.cost_under,
        "optimal_knob": best,
    }
    with open(out / "booking_summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
        fh.write("\n")
    _write_manifest(out, "booking",
                    {"model": str(args.model), "corpus": str(args.corpus),
                     "strategy": args.strategy, "cost_over": args.cost_over,
                     "cost_under": args.cost_under},
                    ["booking_curve.csv", "booking_summary.json"])
    print(f"{args.strategy} booking: optimal knob {best} at costs "
          f"over={args.cost_over} under={args.cost_under}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="surgdur",
        description="Surgery-duration prediction with heteroscedastic MLP heads.")
    parser.add_argument("--version", action="version", version=f"surgdur {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("generate", help="write a synthetic surgery-log corpus")
    p.add_argument("--n", type=int, default=None, help="number of records")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", type=Path, default=None, help="generator config JSON")
    p.add_argument("--hetero-strength", type=float, default=None,
                   dest="hetero_strength",
                   help="ratio of max to min conditional sigma (1 = homoscedastic)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model and write its bundle")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--model", choices=tr.MODEL_KINDS, default="mlp")
    p.add_argument("--family", choices=dist.FAMILIES, default=None)
    p.add_argument("--heteroscedastic", action="store_true")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--grid", action="store_true",
                   help="grid-search layers x widths, keep the best")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", type=Path, default=None, help="train config JSON")
    p.add_argument("--min-category-count", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model bundle on the test split")
    p.add_argument("--model", type=Path, required=True, help="model.json bundle")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--booking", action="append", choices=ev.BOOKING_STRATEGIES,
                   default=None, help="also write a booking curve (repeatable)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="per-feature-group ablation with retraining")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--family", choices=dist.FAMILIES, default=None)
    p.add_argument("--heteroscedastic", action="store_true")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--min-category-count", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("booking", help="booking curve + optimal knob for a model")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--strategy", choices=ev.BOOKING_STRATEGIES, default="percentile")
    p.add_argument("--cost-over", type=float, default=1.0)
    p.add_argument("--cost-under", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_booking)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SurgdurError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
