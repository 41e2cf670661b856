"""Training objectives: Cox partial likelihood, pairwise ranking
surrogates, and the CDF-matching (discrete Wasserstein) loss.

Every objective is a pure function of the raw network outputs and ships
with an analytic gradient (`*_with_grad`) so the fixed-architecture
network can backpropagate without an autodiff engine.  Risk sets and
ranking ties follow grid-binned times: records sharing a bin are tied.
"""

from dataclasses import dataclass

import numpy as np

from .core import Dataset, TimeGrid
from .metrics import AcceptablePairSet

__all__ = [
    "PHI_KINDS",
    "phi",
    "phi_prime",
    "cox_nll",
    "cox_nll_with_grad",
    "ranking_loss",
    "ranking_loss_with_grad",
    "GroundWeights",
    "bin_weights",
    "PredictedDistribution",
    "wm_loss",
    "wm_batch_with_grad",
]

PHI_KINDS = ("sigmoid", "log_sigmoid", "hinge", "exponential")


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _log_sigmoid(z):
    # -softplus(-z), split for stability at both tails
    out = np.where(z > 0, -np.log1p(np.exp(-np.abs(z))), z - np.log1p(np.exp(-np.abs(z))))
    return out


def phi(kind, z, hinge_clip=1.0):
    """Pairwise concordance surrogate phi(z), elementwise.

    kinds: "sigmoid" sigma(z); "log_sigmoid" log sigma(z); "hinge"
    max(0, z-1), optionally clipped at `hinge_clip` so the maximization
    target stays bounded (None disables); "exponential" 1 - exp(-z).
    """
    z = np.asarray(z, dtype=np.float64)
    if kind == "sigmoid":
        return _sigmoid(z)
    if kind == "log_sigmoid":
        return _log_sigmoid(z)
    if kind == "hinge":
        raw = np.maximum(0.0, z - 1.0)
        return raw if hinge_clip is None else np.minimum(raw, hinge_clip)
    if kind == "exponential":
        return 1.0 - np.exp(-z)
    raise ValueError(f"unknown phi kind {kind!r}; choose from {PHI_KINDS}")


def phi_prime(kind, z, hinge_clip=1.0):
    """d phi/dz, elementwise (subgradient 0 at hinge kinks)."""
    z = np.asarray(z, dtype=np.float64)
    if kind == "sigmoid":
        s = _sigmoid(z)
        return s * (1.0 - s)
    if kind == "log_sigmoid":
        return _sigmoid(-z)
    if kind == "hinge":
        active = z > 1.0
        if hinge_clip is not None:
            active &= z - 1.0 < hinge_clip
        return active.astype(np.float64)
    if kind == "exponential":
        return np.exp(-z)
    raise ValueError(f"unknown phi kind {kind!r}; choose from {PHI_KINDS}")


# ---------------------------------------------------------------------------
# Cox partial likelihood


def _cox_groups(dataset: Dataset):
    """Sorted bins, observed flags and per-unique-event-bin bookkeeping."""
    bins = dataset.binned_times()
    observed = dataset.observed
    if not np.any(observed):
        raise ValueError("Cox partial likelihood needs at least one observed event")
    return bins, observed


def _cox_core(scores, dataset, tie_method, want_grad):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if len(scores) != len(dataset):
        raise ValueError("one score per record is required")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if tie_method not in ("breslow", "efron"):
        raise ValueError(f"tie_method must be 'breslow' or 'efron', got {tie_method!r}")
    bins, observed = _cox_groups(dataset)

    shift = scores.max()
    w = np.exp(scores - shift)  # shift cancels in every log-ratio below

    order = np.argsort(bins, kind="stable")
    sorted_bins = bins[order]
    sorted_w = w[order]
    # suffix_w[p] = sum of w over positions p.. in sorted order
    suffix_w = np.concatenate((np.cumsum(sorted_w[::-1])[::-1], [0.0]))
    unique_bins, first_pos = np.unique(sorted_bins, return_index=True)
    risk_sum_at = {int(b): suffix_w[p] for b, p in zip(unique_bins, first_pos)}

    event_bins = np.unique(bins[observed])
    loglik = float(np.sum(scores[observed] - shift))
    grad_factor = np.zeros(len(scores)) if want_grad else None  # sum of 1/denominator terms
    tied_extra = np.zeros(len(scores)) if want_grad else None

    running = 0.0  # cumulative d_g/S_g (or Efron analogue) over event bins so far
    per_bin_running = {}
    for b in event_bins:
        tied_idx = np.nonzero(observed & (bins == b))[0]
        m = len(tied_idx)
        risk = risk_sum_at[int(b)]
        if tie_method == "breslow":
            loglik -= m * np.log(risk)
            if want_grad:
                running += m / risk
        else:
            tied_sum = float(w[tied_idx].sum())
            ranks = np.arange(m) / m
            denoms = risk - ranks * tied_sum
            loglik -= float(np.log(denoms).sum())
            if want_grad:
                inv = 1.0 / denoms
                running += float(inv.sum())
                tied_extra[tied_idx] = float((ranks * inv).sum())
        if want_grad:
            per_bin_running[int(b)] = running

    nll = -loglik
    if not want_grad:
        return nll, None

    # grad of loglik: obs_k - w_k * (sum over event bins <= bin_k of inverse
    # denominators) + w_k * tied-correction (Efron only, own event bin).
    cum_at_bin = np.zeros(len(scores))
    if len(event_bins) > 0:
        keys = np.array(sorted(per_bin_running))
        vals = np.array([per_bin_running[int(k)] for k in keys])
        pos = np.searchsorted(keys, bins, side="right")
        has_any = pos > 0
        cum_at_bin[has_any] = vals[pos[has_any] - 1]
    grad_loglik = observed.astype(np.float64) - w * cum_at_bin
    if tie_method == "efron":
        grad_loglik += w * tied_extra
    return nll, -grad_loglik


def cox_nll(scores, dataset: Dataset, tie_method="breslow"):
    """Negative Cox partial log-likelihood of `scores` (f = exp(score)).

    Risk sets are taken over grid-binned times, so records in one bin are
    tied; "breslow" evaluates the plain formula on ties, "efron" applies
    the averaged tie correction.  The value is a sum over observed events
    and is invariant to adding a constant to all scores.
    """
    value, _ = _cox_core(scores, dataset, tie_method, want_grad=False)
    return value


def cox_nll_with_grad(scores, dataset: Dataset, tie_method="breslow"):
    """(value, d value/d scores) of `cox_nll`."""
    return _cox_core(scores, dataset, tie_method, want_grad=True)


# ---------------------------------------------------------------------------
# Pairwise ranking


def _pair_margins(scores, pairs, sign):
    if sign == "concordant":
        return scores[pairs.j] - scores[pairs.i], +1.0
    if sign == "literal":
        return scores[pairs.i] - scores[pairs.j], -1.0
    raise ValueError(f"rank sign must be 'concordant' or 'literal', got {sign!r}")


def ranking_loss(scores, pairs: AcceptablePairSet, kind, sign="concordant", hinge_clip=1.0):
    """Negated mean surrogate over acceptable pairs.

    Returns -(1/|A|) sum phi(score(j) - score(i)); with sign="literal" the
    margin is score(i) - score(j) instead, which anti-ranks and exists only
    for comparison.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if len(pairs) == 0:
        raise ValueError("ranking loss is undefined on an empty pair set")
    z, _ = _pair_margins(scores, pairs, sign)
    return float(-np.mean(phi(kind, z, hinge_clip)))


def ranking_loss_with_grad(scores, pairs, kind, sign="concordant", hinge_clip=1.0):
    """(value, d value/d scores) of `ranking_loss`."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if len(pairs) == 0:
        raise ValueError("ranking loss is undefined on an empty pair set")
    z, direction = _pair_margins(scores, pairs, sign)
    value = float(-np.mean(phi(kind, z, hinge_clip)))
    per_pair = -phi_prime(kind, z, hinge_clip) / len(pairs)
    grad = np.zeros_like(scores)
    np.add.at(grad, pairs.j, direction * per_pair)
    np.add.at(grad, pairs.i, -direction * per_pair)
    return value, grad


# ---------------------------------------------------------------------------
# CDF-matching (discrete Wasserstein) loss


@dataclass(frozen=True)
class GroundWeights:
    """Per-bin weights of the CDF-difference norm: smoothed, normalized
    training-fold event counts (the transport ground distance)."""

    weights: np.ndarray
    smoothing: float

    def __post_init__(self):
        arr = np.ascontiguousarray(self.weights, dtype=np.float64)
        arr.flags.writeable = False
        object.__setattr__(self, "weights", arr)
        if abs(float(arr.sum()) - 1.0) > 1e-12:
            raise ValueError("ground weights must sum to 1")
        if np.any(arr < 0):
            raise ValueError("ground weights must be non-negative")

    @classmethod
    def uniform(cls, num_bins):
        """Plain 1/T weighting (the smoothing -> infinity limit)."""
        return cls(weights=np.full(num_bins, 1.0 / num_bins), smoothing=np.inf)


def bin_weights(train: Dataset, smoothing) -> GroundWeights:
    """Observed-event counts per bin plus `smoothing`, normalized to sum 1."""
    if not (smoothing > 0):
        raise ValueError(f"smoothing must be positive, got {smoothing}")
    counts = np.bincount(
        train.binned_times()[train.observed], minlength=train.grid.num_bins
    ).astype(np.float64)
    counts += smoothing
    return GroundWeights(weights=counts / counts.sum(), smoothing=float(smoothing))


@dataclass(frozen=True)
class PredictedDistribution:
    """Softmax output (pmf) and its running sum (cdf) for one record."""

    pmf: np.ndarray
    cdf: np.ndarray

    def __post_init__(self):
        pmf = np.ascontiguousarray(self.pmf, dtype=np.float64)
        cdf = np.ascontiguousarray(self.cdf, dtype=np.float64)
        if pmf.shape != cdf.shape:
            raise ValueError("pmf and cdf must have equal length")
        if np.any(pmf < 0) or abs(float(pmf.sum()) - 1.0) > 1e-6:
            raise ValueError("pmf entries must be >= 0 and sum to 1")
        if np.any(np.diff(cdf) < -1e-12) or abs(float(cdf[-1]) - 1.0) > 1e-6:
            raise ValueError("cdf must be non-decreasing with final entry 1")
        pmf.flags.writeable = False
        cdf.flags.writeable = False
        object.__setattr__(self, "pmf", pmf)
        object.__setattr__(self, "cdf", cdf)

    @classmethod
    def from_pmf(cls, pmf):
        pmf = np.asarray(pmf, dtype=np.float64)
        return cls(pmf=pmf, cdf=np.cumsum(pmf))


def wm_loss(pred: PredictedDistribution, target, weights: GroundWeights, l=1.5):
    """Weighted l-th power CDF mismatch: sum_t w[t] * |pred_cdf - target_cdf|^l.

    With uniform weights this is the plain (1/T) * sum |diff|^l objective.
    Symmetric, non-negative, zero iff the CDFs agree on every positively
    weighted bin.
    """
    if l < 1:
        raise ValueError(f"the exponent l must be >= 1, got {l}")
    target_cdf = target.cdf if hasattr(target, "cdf") else np.asarray(target, np.float64)
    if not (len(pred.cdf) == len(target_cdf) == len(weights.weights)):
        raise ValueError("pred, target and weights must share one grid length")
    return float(np.sum(weights.weights * np.abs(pred.cdf - target_cdf) ** l))


def wm_batch_with_grad(pmf, target_cdf, weights, l=1.5):
    """Mean CDF-matching loss of a batch and its gradient w.r.t. the pmfs.

    pmf: (batch, T) rows from the softmax head; target_cdf: (batch, T);
    weights: (T,).  Returns (value, gradient of the same shape as pmf).
    """
    pmf = np.asarray(pmf, dtype=np.float64)
    target_cdf = np.asarray(target_cdf, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if pmf.ndim != 2 or pmf.shape != target_cdf.shape or pmf.shape[1] != len(weights):
        raise ValueError("pmf and target_cdf must be (batch, T) with T matching weights")
    if l < 1:
        raise ValueError(f"the exponent l must be >= 1, got {l}")
    batch = pmf.shape[0]
    diff = np.cumsum(pmf, axis=1) - target_cdf
    value = float(np.sum(weights * np.abs(diff) ** l) / batch)
    # d|d_t|^l / d d_t = l |d_t|^(l-1) sign(d_t); pmf_s feeds every cdf_t with t >= s
    inner = weights * l * np.abs(diff) ** (l - 1.0) * np.sign(diff) / batch
    grad = np.cumsum(inner[:, ::-1], axis=1)[:, ::-1]
    return value, grad
