"""Bootstrap-weight variance estimation for the balanced imputation.

With-replacement resamples rescale the design weights (finite-population
correction included); each replicate deterministically re-evaluates the
expected imputed estimators with the rescaled weights, so no random
re-imputation happens on the replicate path. The replicate variance with
divisor C-1 estimates the variance of the imputed point estimators, and
percentile intervals come from the replicate order statistics.

Replicate statistics are computed by a vectorized pass shared across all
replicates; replicate c draws its resample from the substream with id c, so
results do not depend on execution order or batching.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import SurveyDataset
from .errors import DataError, EstimationError
from .estimators import build_indexer
from .rng import RngStream

__all__ = [
    "BootstrapConfig",
    "BootstrapReplicate",
    "BootstrapVarianceResult",
    "rwy_weights",
    "rescaled_weights",
    "bootstrap_variance",
    "percentile_ci",
    "PARAMETERS",
]

PARAMETERS = ("p_x1", "p_y1", "p_11", "odds_ratio")


@dataclass(frozen=True)
class BootstrapConfig:
    """Bootstrap settings: replicate count C, resample size n' (defaults to
    n), and the per-tail alpha for percentile intervals."""

    replicates: int
    sample_size: int | None = None
    alpha: float = 0.025

    def __post_init__(self):
        if self.replicates < 2:
            raise DataError("bootstrap needs at least 2 replicates")
        if self.sample_size is not None and self.sample_size < 1:
            raise DataError("bootstrap sample size must be positive")
        if not 0.0 < self.alpha < 0.5:
            raise DataError("alpha must lie in (0, 0.5)")


@dataclass(frozen=True)
class BootstrapReplicate:
    """One resample: multiplicities, rescaled weights, optional statistics."""

    multiplicities: np.ndarray
    weights: np.ndarray
    statistics: dict[str, float] | None = None


def _common_weight(data: SurveyDataset) -> float:
    w = data.weights
    if not np.all(w == w[0]):
        raise DataError("bootstrap weights require an equal-weight sample")
    return float(w[0])


def _rescale_constant(n: int, n_prime: int, population_size: int) -> float:
    if n < 2:
        raise DataError("bootstrap rescaling needs a sample of at least 2 units")
    return n_prime * (1.0 - n / population_size) / (n - 1)


def _draw_multiplicities(n: int, n_prime: int, stream: RngStream) -> np.ndarray:
    picks = stream.generator().integers(0, n, size=n_prime)
    return np.bincount(picks, minlength=n)


def rescaled_weights(base_weight: float, n: int, n_prime: int,
                     population_size: int, multiplicities) -> np.ndarray:
    """Replicate weights from resample multiplicities:
    w * (1 + sqrt(c) * (n*m/n' - 1)), c = n'(1 - n/N)/(n - 1)."""
    m = np.asarray(multiplicities, dtype=float)
    c = _rescale_constant(n, n_prime, population_size)
    return base_weight * (1.0 + np.sqrt(c) * (n * m / n_prime - 1.0))


def rwy_weights(data: SurveyDataset, config: BootstrapConfig,
                rng: RngStream) -> BootstrapReplicate:
    """Draw one with-replacement resample and its rescaled weights.

    The rescaled weight is w * (1 + sqrt(c) * (n*m/n' - 1)) with
    c = n'(1 - n/N)/(n - 1); weights may come out negative and are not
    clamped.
    """
    n = data.n
    w = _common_weight(data)
    n_prime = config.sample_size or n
    c = _rescale_constant(n, n_prime, data.population_size)
    m = _draw_multiplicities(n, n_prime, rng)
    weights = w * (1.0 + np.sqrt(c) * (n * m / n_prime - 1.0))
    return BootstrapReplicate(multiplicities=m, weights=weights)


def percentile_ci(replicate_stats, alpha: float) -> tuple[float, float]:
    """Percentile interval from replicate order statistics.

    With B replicates the endpoints are the order statistics of 1-based
    ranks ceil(alpha*B) and floor((1-alpha)*B).
    """
    stats = np.asarray(replicate_stats, dtype=float)
    b = stats.size
    if b < 1.0 / alpha:
        raise DataError(f"need at least {int(np.ceil(1/alpha))} replicates for alpha={alpha}")
    lo_rank = int(np.ceil(alpha * b))
    hi_rank = int(np.floor((1.0 - alpha) * b))
    ordered = np.sort(stats)
    return float(ordered[lo_rank - 1]), float(ordered[hi_rank - 1])


# -- vectorized replicate statistics ----------------------------------------

def _safe_div(num, den, fallback):
    out = np.broadcast_to(fallback, num.shape).copy()
    np.divide(num, den, out=out, where=(den != 0.0))
    return out


def batch_tilde_statistics(data: SurveyDataset, weight_matrix: np.ndarray):
    """Expected-imputed-estimator statistics for many weight vectors at once.

    ``weight_matrix`` is (C, n). Returns (joint (C, K, L), dropped (C,)):
    a replicate is dropped when some class needs a complete-pair law that no
    class can supply under its weights (the fallback ladder bottomed out).
    Mirrors the scalar tilde computation exactly.
    """
    idx = build_indexer(data)
    n_c = weight_matrix.shape[0]
    g, k, l = idx.n_classes, idx.x_categories, idx.y_categories
    n_buckets = idx.n_buckets
    flat = np.zeros((n_c, n_buckets))
    buckets = idx.buckets
    for c in range(n_c):
        flat[c] = np.bincount(buckets, weights=weight_matrix[c],
                              minlength=n_buckets)
    o1 = g * k * l
    o2 = o1 + g * k
    o3 = o2 + g * l
    rr = flat[:, :o1].reshape(n_c, g, k, l)
    rm_x = flat[:, o1:o2].reshape(n_c, g, k)
    mr_y = flat[:, o2:o3].reshape(n_c, g, l)
    mm = flat[:, o3:o3 + g]

    n_rr = rr.sum(axis=(2, 3))                      # (C, G)
    pooled = rr.sum(axis=1)                         # (C, K, L)
    pooled_mass = pooled.sum(axis=(1, 2))           # (C,)
    uniform = np.full((k, l), 1.0 / (k * l))
    pooled_law = _safe_div(pooled, pooled_mass[:, None, None],
                           uniform[None, :, :])
    joint_cc = _safe_div(rr, n_rr[:, :, None, None],
                         pooled_law[:, None, :, :])

    exhausted = (n_rr == 0.0) & (pooled_mass[:, None] == 0.0)
    needed = (rm_x.sum(axis=2) != 0.0) | (mr_y.sum(axis=2) != 0.0) | (mm != 0.0)
    dropped = (exhausted & needed).any(axis=1)

    marg_x_cc = joint_cc.sum(axis=3)                # (C, G, K)
    marg_y_cc = joint_cc.sum(axis=2)                # (C, G, L)
    col_mass = rr.sum(axis=2)                       # (C, G, L)
    cond_x_given_y = _safe_div(rr, col_mass[:, :, None, :],
                               marg_x_cc[:, :, :, None])
    row_mass = rr.sum(axis=3)                       # (C, G, K)
    cond_y_given_x = _safe_div(rr, row_mass[:, :, :, None],
                               marg_y_cc[:, :, None, :])

    joint = ((n_rr + mm)[:, :, None, None] * joint_cc
             + mr_y[:, :, None, :] * cond_x_given_y
             + rm_x[:, :, :, None] * cond_y_given_x).sum(axis=1)
    joint /= data.population_size
    return joint, dropped


@dataclass(frozen=True)
class BootstrapVarianceResult:
    """Per-parameter replicate variances, kept replicate statistics, and
    drop accounting. ``unreliable`` marks runs where more than 1% of
    replicates were dropped by the fallback ladder."""

    variances: dict[str, float]
    statistics: dict[str, np.ndarray]
    n_replicates: int
    n_dropped: int
    n_or_undefined: int
    unreliable: bool

    def percentile_interval(self, parameter: str,
                            alpha: float) -> tuple[float, float]:
        return percentile_ci(self.statistics[parameter], alpha)


def bootstrap_variance(data: SurveyDataset, config: BootstrapConfig,
                       rng: RngStream) -> BootstrapVarianceResult:
    """Replicate-weight variance estimates for the imputed estimators.

    Each replicate recomputes the deterministic expected-imputed estimators
    (and the plug-in odds ratio) under its rescaled weights; the variance
    over replicates uses divisor C-1. Replicates whose fallback ladder
    bottoms out are dropped and counted; replicates with an undefined odds
    ratio are excluded from the odds-ratio statistics only.
    """
    if data.x_categories != 2 or data.y_categories != 2:
        raise EstimationError("bootstrap variance is defined for 2 x 2 tables")
    n = data.n
    w = _common_weight(data)
    n_prime = config.sample_size or n
    c_resc = _rescale_constant(n, n_prime, data.population_size)
    n_rep = config.replicates

    weight_matrix = np.empty((n_rep, n))
    for c in range(n_rep):
        m = _draw_multiplicities(n, n_prime, rng.child(c))
        weight_matrix[c] = w * (1.0 + np.sqrt(c_resc) * (n * m / n_prime - 1.0))

    joint, dropped = batch_tilde_statistics(data, weight_matrix)
    keep = ~dropped
    p_x1 = joint[:, 1, :].sum(axis=1)
    p_y1 = joint[:, :, 1].sum(axis=1)
    p_11 = joint[:, 1, 1]
    or_den = joint[:, 1, 0] * joint[:, 0, 1]
    or_defined = keep & (or_den != 0.0)
    odds = np.full(n_rep, np.nan)
    np.divide(joint[:, 1, 1] * joint[:, 0, 0], or_den,
              out=odds, where=or_defined)

    stats = {
        "p_x1": p_x1[keep],
        "p_y1": p_y1[keep],
        "p_11": p_11[keep],
        "odds_ratio": odds[or_defined],
    }
    variances = {}
    for name, vals in stats.items():
        # a parameter with fewer than 2 usable replicates (e.g. an odds
        # ratio undefined under every resample) gets a NaN variance rather
        # than failing the other parameters
        variances[name] = float(vals.var(ddof=1)) if vals.size >= 2 else float("nan")
    n_dropped = int(dropped.sum())
    return BootstrapVarianceResult(
        variances=variances,
        statistics=stats,
        n_replicates=n_rep,
        n_dropped=n_dropped,
        n_or_undefined=int(keep.sum() - or_defined.sum()),
        unreliable=n_dropped > 0.01 * n_rep,
    )


def replicate_statistics(data: SurveyDataset,
                         weights: np.ndarray) -> dict[str, float]:
    """Scalar-path statistics for one weight vector; cross-checks the
    vectorized replicate path."""
    from .estimators import tilde_estimators
    from .popgen import odds_ratio

    table = tilde_estimators(data, weights=weights)
    out = {
        "p_x1": float(table.marginal_x[1]),
        "p_y1": float(table.marginal_y[1]),
        "p_11": float(table.joint[1, 1]),
    }
    den = table.joint[1, 0] * table.joint[0, 1]
    out["odds_ratio"] = float(table.joint[1, 1] * table.joint[0, 0] / den) if den != 0 else float("nan")
    return out
