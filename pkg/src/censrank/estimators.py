"""Kaplan-Meier estimation and per-record target CDFs over the time grid.

The product-limit estimate is computed on grid bins: every record leaves
the risk set after its own bin, all events inside one bin share a single
multiplicative step ``1 - d_k/n_k`` with the at-risk count taken before
any of them leave.

Targets for training the CDF-matching loss: an observed record becomes a
Dirac step at its event bin; a censored record is imputed from the curve,
either conditionally on having survived its censoring bin (default) or by
literally clamping ``1 - survival`` to zero through the censoring bin
("global").  Either way a censored record's target is exactly zero at and
before its censoring bin.
"""

import math
from dataclasses import dataclass

import numpy as np

from .core import Dataset, TimeGrid

__all__ = [
    "KaplanMeierCurve",
    "TargetDistribution",
    "kaplan_meier",
    "impute_target_cdf",
    "target_cdf_matrix",
]


@dataclass(frozen=True)
class KaplanMeierCurve:
    """Step-function survival estimate on a grid.

    survival[k] is the estimate at bin k's right edge; event_counts and
    at_risk hold the per-bin d_k and n_k of the product-limit formula.
    """

    grid: TimeGrid
    survival: np.ndarray
    event_counts: np.ndarray
    at_risk: np.ndarray

    def __post_init__(self):
        for name, dtype in (
            ("survival", np.float64),
            ("event_counts", np.int64),
            ("at_risk", np.int64),
        ):
            arr = np.ascontiguousarray(getattr(self, name), dtype=dtype)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


def kaplan_meier(dataset: Dataset) -> KaplanMeierCurve:
    """Product-limit survival estimate of `dataset` over its grid bins."""
    if len(dataset) == 0:
        raise ValueError("cannot estimate a survival curve from an empty dataset")
    if not dataset.fits_grid:
        raise ValueError(
            "dataset times exceed the grid; Kaplan-Meier must be fit on data "
            "that maps into the grid without clamping"
        )
    num_bins = dataset.grid.num_bins
    bins = dataset.binned_times(clamp=False)
    events = np.bincount(bins[dataset.observed], minlength=num_bins)
    leaving = np.bincount(bins, minlength=num_bins)
    # n_k = records still present just before bin k.
    at_risk = len(dataset) - np.concatenate(([0], np.cumsum(leaving)[:-1]))
    # The running product is kept as an exact integer ratio (gcd-reduced so
    # consecutive factors telescope); each emitted value is one correctly
    # rounded division.  Without censoring the ratio reduces to
    # survivors/n, so the curve equals the empirical survival function
    # bit for bit.  A float prefactor absorbs the ratio if it ever grows
    # past 512 bits (only reachable with censoring).
    survival = np.empty(num_bins)
    num, den, pre = 1, 1, 1.0
    for k in range(num_bins):
        n_k, d_k = int(at_risk[k]), int(events[k])
        if n_k > 0 and d_k > 0:
            num *= n_k - d_k
            den *= n_k
            g = math.gcd(num, den)
            num //= g
            den //= g
            if den.bit_length() > 512:
                pre *= num / den
                num, den = 1, 1
        survival[k] = pre * (num / den)
    return KaplanMeierCurve(
        grid=dataset.grid, survival=survival, event_counts=events, at_risk=at_risk
    )


@dataclass(frozen=True)
class TargetDistribution:
    """Target CDF over the grid for one record; is_imputed marks censored records."""

    cdf: np.ndarray
    is_imputed: bool

    def __post_init__(self):
        arr = np.ascontiguousarray(self.cdf, dtype=np.float64)
        arr.flags.writeable = False
        object.__setattr__(self, "cdf", arr)


def _imputed_cdf(censor_bin, survival, mode):
    num_bins = len(survival)
    cdf = np.zeros(num_bins)
    if censor_bin + 1 >= num_bins:
        return cdf
    tail = survival[censor_bin + 1 :]
    if mode == "conditional":
        s_at = survival[censor_bin]
        cdf[censor_bin + 1 :] = 1.0 if s_at <= 0.0 else 1.0 - tail / s_at
    elif mode == "global":
        cdf[censor_bin + 1 :] = np.maximum.accumulate(1.0 - tail)
    else:
        raise ValueError(f"unknown imputation mode {mode!r}")
    return cdf


def impute_target_cdf(record, km: KaplanMeierCurve, mode="conditional") -> TargetDistribution:
    """Target CDF for one record.

    Observed records get a Dirac step at the event bin.  Censored records
    at bin k get zero mass through bin k and, beyond it, the renormalized
    curve 1 - S(t)/S(k) ("conditional") or the clamped raw curve 1 - S(t)
    ("global").
    """
    k = int(km.grid.bin_indices(np.asarray([record.time]), clamp=False)[0])
    if record.observed:
        cdf = np.zeros(km.grid.num_bins)
        cdf[k:] = 1.0
        return TargetDistribution(cdf=cdf, is_imputed=False)
    return TargetDistribution(cdf=_imputed_cdf(k, km.survival, mode), is_imputed=True)


def target_cdf_matrix(dataset: Dataset, km: KaplanMeierCurve, mode="conditional"):
    """Stacked target CDFs for a whole dataset, shape (n, num_bins).

    Row order follows the dataset; censored rows are imputed from `km`,
    which must come from the training fold only.
    """
    num_bins = km.grid.num_bins
    bins = km.grid.bin_indices(dataset.times, clamp=False)
    targets = np.zeros((len(dataset), num_bins))
    column = np.arange(num_bins)
    obs = dataset.observed
    targets[obs] = (column[None, :] >= bins[obs, None]).astype(np.float64)
    for row in np.nonzero(~obs)[0]:
        targets[row] = _imputed_cdf(int(bins[row]), km.survival, mode)
    return targets
