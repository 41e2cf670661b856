"""Experiment orchestration: early-stopped training, per-fold grid search,
k-fold cross-validation, censoring-handling comparisons, and report files.

Seeding uses one documented counter scheme: every sub-experiment's seed is
`derived_seed(master, *parts)` where the parts name the sub-experiment
("fold", index, "grid", index, ...), so any piece can be re-run in
isolation and a full run is reproducible byte for byte.  Fold x grid-point
jobs are independent; with n_jobs > 1 they run in a process pool and are
reduced in deterministic fold order, so serial and parallel runs emit
identical reports.
"""

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from zlib import crc32

import numpy as np

from .core import Dataset, build_time_grid
from .errors import ExperimentFailedError, TrainingDivergedError, UndefinedMetricError
from .estimators import kaplan_meier, target_cdf_matrix
from .losses import bin_weights, cox_nll_with_grad, ranking_loss_with_grad, wm_batch_with_grad
from .metrics import AcceptablePairSet, _enumerate_pairs, acceptable_pairs, c_index_from_pairs
from .neural import Adam, Network, NetworkConfig
from .pipeline import RawTable, kfold_split, preprocess

__all__ = [
    "LOSSES",
    "CENSORING_MODES",
    "TrainRun",
    "FoldSelection",
    "FoldResult",
    "ExperimentReport",
    "AblationCell",
    "AblationResult",
    "SweepPoint",
    "SweepResult",
    "derived_seed",
    "cv_splits",
    "train_model",
    "grid_search",
    "run_cv",
    "apply_censoring_mode",
    "censoring_ablation",
    "censoring_sweep",
    "emit_report",
]

LOSSES = (
    "cox",
    "cox-efron",
    "rank-sigmoid",
    "rank-logsigmoid",
    "rank-hinge",
    "rank-exp",
    "wm",
)
CENSORING_MODES = ("with_censored", "no_censored", "death_at_censoring")
DEFAULT_GRID = tuple(
    (lr, l2) for lr in (1e-2, 1e-3, 1e-4) for l2 in (0.0, 1e-4, 1e-3, 1e-2)
)

_RANK_KINDS = {
    "rank-sigmoid": "sigmoid",
    "rank-logsigmoid": "log_sigmoid",
    "rank-hinge": "hinge",
    "rank-exp": "exponential",
}
_COX_TIES = {"cox": "breslow", "cox-efron": "efron"}


def derived_seed(master, *parts):
    """Deterministic child seed: master entropy plus crc32 of each part."""
    seq = np.random.SeedSequence(
        [int(master)] + [crc32(str(p).encode("utf-8")) for p in parts]
    )
    return int(seq.generate_state(1, np.uint32)[0])


def cv_splits(n, k, val_fraction, master_seed):
    """The exact train/val/test index triples run_cv uses for this seed."""
    return kfold_split(n, k, val_fraction, derived_seed(master_seed, "split"))


@dataclass(frozen=True)
class TrainRun:
    """One training configuration: loss choice plus its options, network
    and optimizer settings, and the stopping rule."""

    loss: str
    learning_rate: float = 1e-3
    l2: float = 0.0
    hidden_dims: tuple = (100, 100, 100)
    dropout: float = 0.5
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    wm_l: float = 1.5
    wm_smoothing: float = 1.0
    km_impute: str = "conditional"
    rank_sign: str = "concordant"
    hinge_clip: float = 1.0
    wm_score: str = "mean"  # validation/test score: expected bin or median bin

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}; choose one of {LOSSES}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch norm needs 2 rows)")
        if not (self.learning_rate > 0):
            raise ValueError("learning_rate must be positive")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        if self.wm_score not in ("mean", "median"):
            raise ValueError(f"wm_score must be 'mean' or 'median', got {self.wm_score!r}")
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))


def _network_for(run: TrainRun, train: Dataset) -> Network:
    if run.loss == "wm":
        head, outputs = "softmax", train.grid.num_bins
    else:
        head, outputs = "scalar_linear", 1
    return Network(
        NetworkConfig(
            input_dim=train.n_features,
            hidden_dims=run.hidden_dims,
            head=head,
            num_outputs=outputs,
            dropout_rate=run.dropout,
            l2_coefficient=run.l2,
            seed=derived_seed(run.seed, "init"),
        )
    )


def eval_scores(run: TrainRun, outputs):
    """Map network outputs to C-index scores (higher = later event).

    Cox outputs rank hazard, so they are negated; ranking outputs are used
    raw; a pmf head scores by its expected bin index (or the median bin).
    """
    if run.loss in _COX_TIES:
        return -outputs
    if run.loss in _RANK_KINDS:
        return outputs
    if run.wm_score == "median":
        return np.argmax(np.cumsum(outputs, axis=1) >= 0.5, axis=1).astype(np.float64)
    return outputs @ np.arange(outputs.shape[1], dtype=np.float64)


def _check_trainable(run: TrainRun, train: Dataset):
    # Degenerate training signals (e.g. a fully censored training fold)
    # must raise, not silently train on nothing.
    if run.loss in _COX_TIES and not train.observed.any():
        raise UndefinedMetricError(
            f"{run.loss}: the training set has no observed events"
        )
    if run.loss in _RANK_KINDS:
        bins = train.binned_times()
        obs_bins = bins[train.observed]
        if obs_bins.size == 0 or obs_bins.min() >= bins.max():
            raise UndefinedMetricError(
                f"{run.loss}: the training set admits no acceptable pairs"
            )


def train_model(run: TrainRun, train: Dataset, val: Dataset):
    """Minibatch training with early stopping on the validation C-index.

    Returns (network at the best validation epoch, history).  History maps
    "train_loss" and "val_c_index" to per-epoch lists and records the
    1-based best and stopped epoch.  Raises TrainingDivergedError (with the
    epoch) on a non-finite loss or gradient, and UndefinedMetricError when
    the validation set has no acceptable pairs or the loss has no training
    signal at all.
    """
    if len(train) < 2:
        raise ValueError("training set needs at least 2 records")
    val_pairs = acceptable_pairs(val, resolution="time")
    if len(val_pairs) == 0:
        raise UndefinedMetricError("validation set has no acceptable pairs")
    _check_trainable(run, train)

    net = _network_for(run, train)
    adam = Adam(run.learning_rate)
    batch_rng = np.random.default_rng(derived_seed(run.seed, "batches"))
    n = len(train)

    tie_method = _COX_TIES.get(run.loss)
    rank_kind = _RANK_KINDS.get(run.loss)
    if run.loss == "wm":
        km = kaplan_meier(train)
        targets = target_cdf_matrix(train, km, mode=run.km_impute)
        weights = bin_weights(train, run.wm_smoothing).weights
    if rank_kind is not None:
        train_bins = train.binned_times().astype(np.float64)

    history = {"train_loss": [], "val_c_index": []}
    best_c = -np.inf
    best_snapshot = None
    best_epoch = 0
    since_best = 0
    epoch = 0
    for epoch in range(1, run.max_epochs + 1):
        perm = batch_rng.permutation(n)
        batch_losses = []
        for start in range(0, n, run.batch_size):
            idx = perm[start : start + run.batch_size]
            if len(idx) < 2:  # batch norm cannot standardize a single row
                continue
            if tie_method is not None:
                sub = train.subset(idx)
                if not sub.observed.any():
                    continue
            elif rank_kind is not None:
                bi, bj = _enumerate_pairs(train_bins[idx], train.observed[idx])
                if len(bi) == 0:
                    continue
                batch_pairs = AcceptablePairSet(i=bi, j=bj, num_records=len(idx))
            out = net.forward(train.features[idx], train=True)
            if not np.all(np.isfinite(out)):
                raise TrainingDivergedError("non-finite network outputs", epoch=epoch)
            if tie_method is not None:
                value, grad_out = cox_nll_with_grad(out, sub, tie_method)
                events = int(sub.observed.sum())
                # per-event scaling keeps the learning-rate grid comparable
                # across batch compositions; the optimum is unchanged
                value /= events
                grad_out = grad_out / events
            elif rank_kind is not None:
                value, grad_out = ranking_loss_with_grad(
                    out, batch_pairs, rank_kind, run.rank_sign, run.hinge_clip
                )
            else:
                value, grad_out = wm_batch_with_grad(
                    out, targets[idx], weights, run.wm_l
                )
            if not math.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite training loss {value!r}", epoch=epoch
                )
            try:
                adam.step(net.params, net.backward(grad_out))
            except TrainingDivergedError as err:
                raise TrainingDivergedError(str(err), epoch=epoch) from None
            batch_losses.append(value)
        history["train_loss"].append(
            float(np.mean(batch_losses)) if batch_losses else float("nan")
        )
        val_out = net.forward(val.features, train=False)
        if not np.all(np.isfinite(val_out)):
            raise TrainingDivergedError("non-finite validation outputs", epoch=epoch)
        val_c = c_index_from_pairs(val_pairs, eval_scores(run, val_out))
        history["val_c_index"].append(val_c)
        if val_c > best_c:
            best_c = val_c
            best_snapshot = net.snapshot()
            best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= run.patience:
                break
    net.restore(best_snapshot)
    history["best_epoch"] = best_epoch
    history["best_val_c_index"] = best_c
    history["stopped_epoch"] = epoch
    return net, history


# ---------------------------------------------------------------------------
# Grid search over (learning rate, l2)


@dataclass(frozen=True)
class FoldSelection:
    fold: int
    learning_rate: float
    l2: float
    val_c_index: float
    network: Network
    history: dict
    diverged: tuple  # (learning_rate, l2) pairs that diverged on this fold
    seconds: float


def _fit_job(args):
    run, train, val = args
    started = time.perf_counter()
    try:
        net, history = train_model(run, train, val)
    except TrainingDivergedError as err:
        return {"diverged": True, "error": str(err), "seconds": time.perf_counter() - started}
    return {
        "diverged": False,
        "val_c": history["best_val_c_index"],
        "history": history,
        "config": net.config,
        "snapshot": net.snapshot(),
        "seconds": time.perf_counter() - started,
    }


def grid_search(folds, grid, template: TrainRun, n_jobs=1):
    """Train every (learning rate, l2) point on every fold; pick per fold.

    `folds` is a sequence of (train, val) or (train, val, test) tuples;
    extra members are ignored.  Selection is by best validation C-index,
    ties broken by lower l2 then lower learning rate.  Diverged points are
    skipped; a fold where every point diverged raises ExperimentFailedError.
    """
    grid = [(float(lr), float(l2)) for lr, l2 in grid]
    if not grid:
        raise ValueError("the grid must contain at least one point")
    jobs = []
    for fi, fold in enumerate(folds):
        train, val = fold[0], fold[1]
        for gi, (lr, l2) in enumerate(grid):
            run = replace(
                template,
                learning_rate=lr,
                l2=l2,
                seed=derived_seed(template.seed, "fold", fi, "grid", gi),
            )
            jobs.append((run, train, val))
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_fit_job, jobs, chunksize=1))
    else:
        results = [_fit_job(job) for job in jobs]

    selections = []
    per_fold = len(grid)
    for fi in range(len(jobs) // per_fold):
        fold_results = results[fi * per_fold : (fi + 1) * per_fold]
        alive = [(gi, r) for gi, r in enumerate(fold_results) if not r["diverged"]]
        if not alive:
            raise ExperimentFailedError(
                f"fold {fi}: all {per_fold} grid points diverged"
            )
        gi, best = min(alive, key=lambda item: (-item[1]["val_c"], grid[item[0]][1], grid[item[0]][0]))
        network = Network(best["config"])
        network.restore(best["snapshot"])
        selections.append(
            FoldSelection(
                fold=fi,
                learning_rate=grid[gi][0],
                l2=grid[gi][1],
                val_c_index=best["val_c"],
                network=network,
                history=best["history"],
                diverged=tuple(grid[gj] for gj, r in enumerate(fold_results) if r["diverged"]),
                seconds=sum(r["seconds"] for r in fold_results),
            )
        )
    return selections


# ---------------------------------------------------------------------------
# Cross-validation


@dataclass(frozen=True)
class FoldResult:
    fold: int
    learning_rate: float
    l2: float
    val_c_index: float
    test_c_index: float
    seconds: float


@dataclass(frozen=True)
class ExperimentReport:
    loss: str
    k: int
    seed: int
    folds: tuple
    mean_test_c_index: float
    stderr_test_c_index: float

    def __post_init__(self):
        object.__setattr__(self, "folds", tuple(self.folds))
        if len(self.folds) != self.k:
            raise ValueError(f"expected {self.k} fold results, got {len(self.folds)}")
        tests = [f.test_c_index for f in self.folds]
        if not (min(tests) - 1e-12 <= self.mean_test_c_index <= max(tests) + 1e-12):
            raise ValueError("mean lies outside the fold range")


def _fold_datasets(data, splits, bin_width):
    """Materialize (train, val, test) Dataset triples for every split.

    RawTable input is re-encoded per fold with training-fold statistics;
    Dataset input is subset as-is (its features must already be fold-free,
    e.g. synthetic draws).  All folds share one grid over the full table's
    time range so bin semantics stay comparable.
    """
    if isinstance(data, Dataset):
        return [(data.subset(tr), data.subset(va), data.subset(te)) for tr, va, te in splits]
    if not isinstance(data, RawTable):
        raise TypeError(f"expected a Dataset or RawTable, got {type(data).__name__}")
    if bin_width is None:
        raise ValueError("bin_width is required when cross-validating a raw table")
    grid = build_time_grid(data.times, bin_width)
    folds = []
    for tr, va, te in splits:
        fit = preprocess(data, rows=tr)
        va_res = preprocess(data, stats=fit.stats, rows=va)
        te_res = preprocess(data, stats=fit.stats, rows=te)
        folds.append(
            (
                Dataset(fit.features, fit.times, fit.observed, grid),
                Dataset(va_res.features, va_res.times, va_res.observed, grid),
                Dataset(te_res.features, te_res.times, te_res.observed, grid),
            )
        )
    return folds


def run_cv(
    data,
    loss,
    k=5,
    grid=None,
    seed=0,
    val_fraction=0.2,
    bin_width=None,
    template=None,
    n_jobs=1,
    train_modifier=None,
):
    """k-fold cross-validation of one loss; returns an ExperimentReport.

    `data` is a Dataset (used as-is) or a RawTable (encoded per fold with
    training-fold statistics; requires bin_width).  `train_modifier`, when
    given, maps (train Dataset, fold rng) to a replacement training set and
    is the hook the censoring experiments use; validation and test folds
    are never modified.
    """
    grid = DEFAULT_GRID if grid is None else grid
    template = TrainRun(loss=loss, seed=seed) if template is None else replace(
        template, loss=loss, seed=seed
    )
    splits = cv_splits(len(data), k, val_fraction, seed)
    folds = _fold_datasets(data, splits, bin_width)
    if train_modifier is not None:
        folds = [
            (
                train_modifier(train, np.random.default_rng(derived_seed(seed, "modify", fi))),
                val,
                test,
            )
            for fi, (train, val, test) in enumerate(folds)
        ]
    selections = grid_search(folds, grid, template, n_jobs=n_jobs)
    fold_results = []
    for sel, (train, val, test) in zip(selections, folds):
        scores = eval_scores(template, sel.network.forward(test.features, train=False))
        test_c = c_index_from_pairs(acceptable_pairs(test, resolution="time"), scores)
        fold_results.append(
            FoldResult(
                fold=sel.fold,
                learning_rate=sel.learning_rate,
                l2=sel.l2,
                val_c_index=sel.val_c_index,
                test_c_index=test_c,
                seconds=sel.seconds,
            )
        )
    tests = np.array([f.test_c_index for f in fold_results])
    return ExperimentReport(
        loss=loss,
        k=k,
        seed=seed,
        folds=tuple(fold_results),
        mean_test_c_index=float(tests.mean()),
        stderr_test_c_index=float(tests.std(ddof=1) / math.sqrt(k)),
    )


# ---------------------------------------------------------------------------
# Censoring experiments


def apply_censoring_mode(train: Dataset, mode) -> Dataset:
    """Transform a TRAINING set per the censoring-handling mode."""
    if mode == "with_censored":
        return train
    if mode == "no_censored":
        return train.subset(np.nonzero(train.observed)[0])
    if mode == "death_at_censoring":
        return Dataset(
            train.features, train.times, np.ones(len(train), dtype=bool), train.grid
        )
    raise ValueError(f"unknown censoring mode {mode!r}; choose one of {CENSORING_MODES}")


@dataclass(frozen=True)
class AblationCell:
    loss: str
    mode: str
    report: ExperimentReport


@dataclass(frozen=True)
class AblationResult:
    cells: tuple

    def cell(self, loss, mode):
        for c in self.cells:
            if c.loss == loss and c.mode == mode:
                return c
        raise KeyError((loss, mode))


def censoring_ablation(
    data,
    losses=("wm", "rank-sigmoid", "cox-efron"),
    modes=CENSORING_MODES,
    k=5,
    grid=None,
    seed=0,
    val_fraction=0.2,
    bin_width=None,
    template=None,
    n_jobs=1,
):
    """Each loss under each censoring-handling mode, same folds throughout.

    One master seed drives every cell, so validation and test folds are
    identical across the whole table; only the training sets differ.
    """
    if not np.any(~data.observed):
        raise ValueError("the censoring comparison needs a dataset with censored records")
    cells = []
    for loss in losses:
        for mode in modes:
            if mode not in CENSORING_MODES:
                raise ValueError(f"unknown censoring mode {mode!r}")
            report = run_cv(
                data,
                loss,
                k=k,
                grid=grid,
                seed=seed,
                val_fraction=val_fraction,
                bin_width=bin_width,
                template=template,
                n_jobs=n_jobs,
                train_modifier=lambda train, rng, _mode=mode: apply_censoring_mode(train, _mode),
            )
            cells.append(AblationCell(loss=loss, mode=mode, report=report))
    return AblationResult(cells=tuple(cells))


@dataclass(frozen=True)
class SweepPoint:
    fraction: float
    report: ExperimentReport


@dataclass(frozen=True)
class SweepResult:
    loss: str
    seed: int
    points: tuple


def _sweep_modifier(fraction):
    def modify(train: Dataset, rng) -> Dataset:
        need = math.ceil(fraction * len(train))
        have = int(np.count_nonzero(~train.observed))
        extra = need - have
        if extra <= 0:
            return train
        candidates = np.nonzero(train.observed)[0]
        picked = rng.choice(candidates, size=extra, replace=False)
        times = train.times.copy()
        observed = train.observed.copy()
        times[picked] = times[picked] * rng.random(extra)  # censor before the event
        observed[picked] = False
        return Dataset(train.features, times, observed, train.grid)

    return modify


def censoring_sweep(
    data,
    loss,
    fractions,
    k=5,
    grid=None,
    seed=0,
    val_fraction=0.2,
    bin_width=None,
    template=None,
    n_jobs=1,
):
    """Re-run CV at increasing training censoring fractions.

    Observed training records are converted to censored-at-a-uniform-time-
    before-their-event until each requested fraction is met; fractions at
    or below the dataset's native fraction leave the data untouched (and
    below-native requests are rejected).  Validation and test folds are
    never modified.
    """
    observed = data.observed
    native = float(np.count_nonzero(~observed)) / len(observed)
    points = []
    for fraction in fractions:
        fraction = float(fraction)
        if fraction < native - 1e-12:
            raise ValueError(
                f"requested censoring fraction {fraction} is below the native {native:.4f}"
            )
        if fraction > 1.0:
            raise ValueError(f"censoring fraction must be <= 1, got {fraction}")
        modifier = None if fraction <= native + 1e-12 else _sweep_modifier(fraction)
        report = run_cv(
            data,
            loss,
            k=k,
            grid=grid,
            seed=seed,
            val_fraction=val_fraction,
            bin_width=bin_width,
            template=template,
            n_jobs=n_jobs,
            train_modifier=modifier,
        )
        points.append(SweepPoint(fraction=fraction, report=report))
    return SweepResult(loss=loss, seed=seed, points=tuple(points))


# ---------------------------------------------------------------------------
# Report files


def _fmt(x):
    return repr(float(x))


def _report_rows(report: ExperimentReport, include_timing):
    header = ["row", "fold", "learning_rate", "l2", "val_c_index", "test_c_index", "stderr"]
    if include_timing:
        header.append("seconds")
    rows = [header]
    for f in report.folds:
        row = ["fold", str(f.fold), _fmt(f.learning_rate), _fmt(f.l2),
               _fmt(f.val_c_index), _fmt(f.test_c_index), ""]
        if include_timing:
            row.append(_fmt(f.seconds))
        rows.append(row)
    agg = ["aggregate", "", "", "", "", _fmt(report.mean_test_c_index),
           _fmt(report.stderr_test_c_index)]
    if include_timing:
        agg.append("")
    rows.append(agg)
    return rows


def _report_json(report: ExperimentReport, include_timing):
    folds = []
    for f in report.folds:
        entry = {
            "fold": f.fold,
            "learning_rate": f.learning_rate,
            "l2": f.l2,
            "val_c_index": f.val_c_index,
            "test_c_index": f.test_c_index,
        }
        if include_timing:
            entry["seconds"] = f.seconds
        folds.append(entry)
    return {
        "loss": report.loss,
        "k": report.k,
        "seed": report.seed,
        "folds": folds,
        "mean_test_c_index": report.mean_test_c_index,
        "stderr_test_c_index": report.stderr_test_c_index,
    }


def emit_report(report, path, format="csv", include_timing=False):
    """Write a report file with a deterministic layout.

    Accepts an ExperimentReport (fold rows + one aggregate row), a
    SweepResult (plot-ready fraction,mean,stderr rows), or an
    AblationResult (loss,mode,mean,stderr rows).  CSV and JSON carry the
    same numbers at full precision.  Wall-clock columns are opt-in so that
    fixed-seed runs stay byte-identical.
    """
    if format not in ("csv", "json"):
        raise ValueError(f"format must be 'csv' or 'json', got {format!r}")
    if isinstance(report, ExperimentReport):
        rows = _report_rows(report, include_timing)
        doc = _report_json(report, include_timing)
    elif isinstance(report, SweepResult):
        rows = [["fraction", "mean", "stderr"]] + [
            [_fmt(p.fraction), _fmt(p.report.mean_test_c_index), _fmt(p.report.stderr_test_c_index)]
            for p in report.points
        ]
        doc = {
            "loss": report.loss,
            "seed": report.seed,
            "points": [
                {
                    "fraction": p.fraction,
                    "mean": p.report.mean_test_c_index,
                    "stderr": p.report.stderr_test_c_index,
                }
                for p in report.points
            ],
        }
    elif isinstance(report, AblationResult):
        rows = [["loss", "mode", "mean", "stderr"]] + [
            [c.loss, c.mode, _fmt(c.report.mean_test_c_index), _fmt(c.report.stderr_test_c_index)]
            for c in report.cells
        ]
        doc = {
            "cells": [
                {
                    "loss": c.loss,
                    "mode": c.mode,
                    "mean": c.report.mean_test_c_index,
                    "stderr": c.report.stderr_test_c_index,
                }
                for c in report.cells
            ]
        }
    else:
        raise TypeError(f"cannot emit a report of type {type(report).__name__}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if format == "csv":
            fh.write("\n".join(",".join(row) for row in rows) + "\n")
        else:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
    return path
