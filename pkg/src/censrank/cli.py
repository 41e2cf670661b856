"""Command-line interface.

    censrank synth             write a synthetic survival CSV plus schema
    censrank km                Kaplan-Meier curve of a dataset
    censrank train             train one model and save a checkpoint
    censrank evaluate          concordance of a checkpoint on a dataset
    censrank cv                k-fold cross-validation report
    censrank ablate-censoring  censoring-handling comparison table
    censrank sweep-censoring   C-index versus training censoring fraction

Every failure exits nonzero after printing one JSON object
{"error": <type>, "message": <text>} to stderr.
"""

import argparse
import csv
import json
import sys

import numpy as np

from . import harness, pipeline
from .core import Dataset, build_time_grid
from .errors import CensrankError
from .estimators import kaplan_meier
from .metrics import acceptable_pairs, c_index_from_pairs
from .neural import load_checkpoint, save_checkpoint

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(json.dumps({"error": "UsageError", "message": message}), file=sys.stderr)
        raise SystemExit(2)


def _hinge_clip(text):
    if text.lower() in ("none", "off"):
        return None
    return float(text)


def _dims(text):
    return tuple(int(part) for part in text.split(",") if part)


def _fractions(text):
    return [float(part) for part in text.split(",") if part]


def _emit_line(payload):
    print(json.dumps(payload))


def _add_data_args(p):
    p.add_argument("--dataset", required=True, help="CSV file")
    p.add_argument("--schema", required=True, help="schema JSON file")
    p.add_argument("--on-bad-rows", choices=("error", "drop"), default="error")


def _add_out_args(p, required=True):
    p.add_argument("--out", required=required, help="output file path")
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def _add_train_knobs(p):
    p.add_argument("--hidden-dims", type=_dims, default=(100, 100, 100),
                   help="comma-separated layer widths")
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--epochs", type=int, default=200, help="max training epochs")
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--wm-smoothing", type=float, default=1.0)
    p.add_argument("--wm-l", type=float, default=1.5)
    p.add_argument("--wm-score", choices=("mean", "median"), default="mean")
    p.add_argument("--km-impute", choices=("conditional", "global"), default="conditional")
    p.add_argument("--rank-sign", choices=("concordant", "literal"), default="concordant")
    p.add_argument("--hinge-clip", type=_hinge_clip, default=1.0,
                   help="hinge surrogate ceiling; 'none' disables")


def _add_cv_args(p):
    p.add_argument("--bin-width", type=float, required=True, help="time-grid bin width")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", help="JSON grid file; see load_grid")
    p.add_argument("--n-jobs", type=int, default=1)


def _template_from(args, loss):
    return harness.TrainRun(
        loss=loss,
        hidden_dims=args.hidden_dims,
        dropout=args.dropout,
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        patience=args.patience,
        wm_smoothing=args.wm_smoothing,
        wm_l=args.wm_l,
        wm_score=args.wm_score,
        km_impute=args.km_impute,
        rank_sign=args.rank_sign,
        hinge_clip=args.hinge_clip,
        seed=args.seed,
    )


def load_grid(path):
    """Grid file: either {"learning_rate": [...], "l2": [...]} (cross
    product, in listed order) or an explicit list of [lr, l2] pairs."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if isinstance(doc, dict):
        return [(lr, l2) for lr in doc["learning_rate"] for l2 in doc["l2"]]
    return [(float(lr), float(l2)) for lr, l2 in doc]


def _load_table(args):
    schema = pipeline.load_schema(args.schema)
    return pipeline.load_csv(args.dataset, schema, on_bad_rows=args.on_bad_rows)


# ---------------------------------------------------------------------------
# Commands


def _cmd_synth(args):
    dataset = pipeline.generate_synthetic(
        args.n, args.num_features, args.censor_fraction, args.tie_density, args.seed
    )
    csv_path = args.out + ".csv"
    schema_path = args.out + ".schema.json"
    pipeline.save_csv(dataset, csv_path)
    names = [f"f{i}" for i in range(dataset.n_features)]
    pipeline.save_schema(pipeline.schema_for_features(names), schema_path)
    _emit_line(
        {
            "csv": csv_path,
            "schema": schema_path,
            "n": len(dataset),
            "censored_fraction": dataset.censored_fraction,
            "num_bins": dataset.grid.num_bins,
        }
    )
    return 0


def _cmd_km(args):
    table = _load_table(args)
    dataset, _ = pipeline.table_to_dataset(table, args.bin_width)
    km = kaplan_meier(dataset)
    edges = km.grid.left_edges()
    if args.format == "json":
        doc = {
            "bin_width": km.grid.bin_width,
            "bins": [
                {
                    "bin": i,
                    "left_edge": float(edges[i]),
                    "events": int(km.event_counts[i]),
                    "at_risk": int(km.at_risk[i]),
                    "survival": float(km.survival[i]),
                }
                for i in range(km.grid.num_bins)
            ],
        }
        text = json.dumps(doc, indent=2) + "\n"
    else:
        lines = ["bin,left_edge,events,at_risk,survival"]
        for i in range(km.grid.num_bins):
            lines.append(
                f"{i},{float(edges[i])!r},{int(km.event_counts[i])},"
                f"{int(km.at_risk[i])},{float(km.survival[i])!r}"
            )
        text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _stats_to_doc(stats):
    return {
        "continuous": {k: [lo, hi] for k, (lo, hi) in stats.continuous.items()},
        "categorical": {k: list(v) for k, v in stats.categorical.items()},
        "has_missing": dict(stats.has_missing),
    }


def _stats_from_doc(doc):
    return pipeline.PreprocessStats(
        continuous={k: (float(lo), float(hi)) for k, (lo, hi) in doc["continuous"].items()},
        categorical={k: tuple(v) for k, v in doc["categorical"].items()},
        has_missing={k: bool(v) for k, v in doc["has_missing"].items()},
    )


def _cmd_train(args):
    table = _load_table(args)
    tr, va, te = harness.cv_splits(len(table), args.k, args.val_fraction, args.seed)[0]
    grid = build_time_grid(table.times, args.bin_width)
    fit = pipeline.preprocess(table, rows=tr)
    va_res = pipeline.preprocess(table, stats=fit.stats, rows=va)
    te_res = pipeline.preprocess(table, stats=fit.stats, rows=te)
    train = Dataset(fit.features, fit.times, fit.observed, grid)
    val = Dataset(va_res.features, va_res.times, va_res.observed, grid)
    test = Dataset(te_res.features, te_res.times, te_res.observed, grid)
    run = harness.TrainRun(
        loss=args.loss,
        learning_rate=args.learning_rate,
        l2=args.l2,
        hidden_dims=args.hidden_dims,
        dropout=args.dropout,
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        patience=args.patience,
        wm_smoothing=args.wm_smoothing,
        wm_l=args.wm_l,
        wm_score=args.wm_score,
        km_impute=args.km_impute,
        rank_sign=args.rank_sign,
        hinge_clip=args.hinge_clip,
        seed=args.seed,
    )
    net, history = harness.train_model(run, train, val)
    scores = harness.eval_scores(run, net.forward(test.features, train=False))
    test_c = c_index_from_pairs(acceptable_pairs(test, resolution="time"), scores)
    save_checkpoint(net, args.checkpoint)
    meta = {
        "loss": run.loss,
        "wm_score": run.wm_score,
        "feature_names": list(fit.feature_names),
        "stats": _stats_to_doc(fit.stats),
    }
    with open(args.checkpoint + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    _emit_line(
        {
            "checkpoint": args.checkpoint,
            "best_epoch": history["best_epoch"],
            "stopped_epoch": history["stopped_epoch"],
            "val_c_index": history["best_val_c_index"],
            "test_c_index": test_c,
        }
    )
    return 0


def _read_scores(path):
    values = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            cell = row[0].strip()
            if not values and cell.lower() in ("score", "scores"):
                continue
            values.append(float(cell))
    if not values:
        raise ValueError(f"no scores found in {path}")
    return np.asarray(values, dtype=np.float64)


def _cmd_evaluate(args):
    if (args.checkpoint is None) == (args.scores is None):
        raise ValueError("pass exactly one of --checkpoint or --scores")
    table = _load_table(args)
    if args.scores is not None:
        scores = _read_scores(args.scores)
        if scores.shape[0] != len(table):
            raise ValueError(
                f"{scores.shape[0]} scores for {len(table)} dataset rows"
            )
        times, observed = table.times, table.observed
        features = np.zeros((len(table), 1))
    else:
        with open(args.checkpoint + ".meta.json", "r", encoding="utf-8") as fh:
            meta = json.load(fh)
        result = pipeline.preprocess(table, stats=_stats_from_doc(meta["stats"]))
        if list(result.feature_names) != meta["feature_names"]:
            raise ValueError(
                "dataset columns encode differently from the checkpoint's training data"
            )
        net = load_checkpoint(args.checkpoint)
        run = harness.TrainRun(loss=meta["loss"], wm_score=meta["wm_score"])
        scores = harness.eval_scores(run, net.forward(result.features, train=False))
        times, observed, features = result.times, result.observed, result.features
    grid = build_time_grid(times, float(max(times.max(), 1.0)))
    dataset = Dataset(features, times, observed, grid)
    c = c_index_from_pairs(acceptable_pairs(dataset, resolution="time"), scores)
    payload = {
        "c_index": c,
        "n": len(dataset),
        "censored_fraction": dataset.censored_fraction,
    }
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    _emit_line(payload)
    return 0


def _cmd_cv(args):
    table = _load_table(args)
    report = harness.run_cv(
        table,
        args.loss,
        k=args.k,
        grid=load_grid(args.grid) if args.grid else None,
        seed=args.seed,
        val_fraction=args.val_fraction,
        bin_width=args.bin_width,
        template=_template_from(args, args.loss),
        n_jobs=args.n_jobs,
    )
    harness.emit_report(report, args.out, format=args.format)
    _emit_line(
        {
            "loss": report.loss,
            "mean_test_c_index": report.mean_test_c_index,
            "stderr_test_c_index": report.stderr_test_c_index,
            "out": args.out,
        }
    )
    return 0


def _cmd_ablate(args):
    table = _load_table(args)
    losses = [part for part in args.losses.split(",") if part]
    result = harness.censoring_ablation(
        table,
        losses=losses,
        k=args.k,
        grid=load_grid(args.grid) if args.grid else None,
        seed=args.seed,
        val_fraction=args.val_fraction,
        bin_width=args.bin_width,
        template=_template_from(args, losses[0]),
        n_jobs=args.n_jobs,
    )
    harness.emit_report(result, args.out, format=args.format)
    _emit_line({"cells": len(result.cells), "out": args.out})
    return 0


def _cmd_sweep(args):
    table = _load_table(args)
    result = harness.censoring_sweep(
        table,
        args.loss,
        args.fractions,
        k=args.k,
        grid=load_grid(args.grid) if args.grid else None,
        seed=args.seed,
        val_fraction=args.val_fraction,
        bin_width=args.bin_width,
        template=_template_from(args, args.loss),
        n_jobs=args.n_jobs,
    )
    harness.emit_report(result, args.out, format=args.format)
    _emit_line(
        {
            "loss": result.loss,
            "points": [
                {"fraction": p.fraction, "mean": p.report.mean_test_c_index}
                for p in result.points
            ],
            "out": args.out,
        }
    )
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser():
    parser = _Parser(prog="censrank", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic survival dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--num-features", type=int, default=10)
    p.add_argument("--censor-fraction", type=float, default=0.3)
    p.add_argument("--tie-density", type=float, default=1.0 / 128.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="path prefix for .csv and .schema.json")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("km", help="Kaplan-Meier curve")
    _add_data_args(p)
    p.add_argument("--bin-width", type=float, required=True)
    _add_out_args(p, required=False)
    p.set_defaults(func=_cmd_km)

    p = sub.add_parser("train", help="train one model and save a checkpoint")
    _add_data_args(p)
    p.add_argument("--loss", choices=harness.LOSSES, required=True)
    p.add_argument("--bin-width", type=float, required=True)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--l2", type=float, default=0.0)
    p.add_argument("--k", type=int, default=5, help="split arithmetic: fold 0 of k is used")
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    _add_train_knobs(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint output path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="concordance of a checkpoint or a scores file")
    _add_data_args(p)
    p.add_argument("--checkpoint", help="checkpoint produced by the train command")
    p.add_argument("--scores", help="CSV of precomputed scores, one per dataset row")
    p.add_argument("--out", help="optional JSON output path")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("cv", help="k-fold cross-validation")
    _add_data_args(p)
    p.add_argument("--loss", choices=harness.LOSSES, required=True)
    _add_cv_args(p)
    _add_train_knobs(p)
    _add_out_args(p)
    p.set_defaults(func=_cmd_cv)

    p = sub.add_parser("ablate-censoring", help="censoring-handling comparison")
    _add_data_args(p)
    p.add_argument("--losses", default="wm,rank-sigmoid,cox-efron",
                   help="comma-separated loss names")
    _add_cv_args(p)
    _add_train_knobs(p)
    _add_out_args(p)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("sweep-censoring", help="C-index vs censoring fraction")
    _add_data_args(p)
    p.add_argument("--loss", choices=harness.LOSSES, required=True)
    p.add_argument("--fractions", type=_fractions, required=True,
                   help="comma-separated censoring fractions")
    _add_cv_args(p)
    _add_train_knobs(p)
    _add_out_args(p)
    p.set_defaults(func=_cmd_sweep)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CensrankError, ValueError, TypeError, OSError) as err:
        print(json.dumps({"error": type(err).__name__, "message": str(err)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
