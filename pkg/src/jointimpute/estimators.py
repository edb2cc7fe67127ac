"""Point estimators of marginal and joint proportions under nonresponse.

Families implemented here:

* complete-data and imputed estimators (weighted proportions against the
  known population size);
* complete-case (CC), adjusted complete-case (ACC), available-case (AC) and
  adjusted available-case (AAC) estimators;
* per-class cell estimates (joint, marginal, conditional) with a documented
  zero-denominator fallback ladder, shared by the imputation procedures;
* the deterministic expectation of the jointly imputed estimators given the
  realized response sets ("tilde" estimators), used for bootstrap variance;
* closed-form bias approximations for the CC, AC and marginal hot-deck
  procedures, evaluated exactly from a population spec.

Everything is a pure function of the dataset (and optionally a replacement
weight vector), so replicate-level parallelism is safe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import (
    DenominatorScale,
    ProportionTable,
    SurveyDataset,
)
from .errors import EstimationError, NoDonorInformationError
from .popgen import PopulationSpec, odds_ratio

__all__ = [
    "CellEstimates",
    "FallbackFlag",
    "BiasTable",
    "cell_estimates",
    "ht_proportions",
    "imputed_proportions",
    "cc_estimators",
    "acc_estimators",
    "ac_estimators",
    "aac_estimators",
    "tilde_estimators",
    "or_plugin",
    "bias_cc",
    "bias_ac",
    "bias_rhdi",
]

# Pattern codes used throughout: 0 = rr, 1 = rm, 2 = mr, 3 = mm.
RR, RM, MR, MM = 0, 1, 2, 3


# -- weighted cell totals ---------------------------------------------------

@dataclass(frozen=True)
class CellIndexer:
    """Maps each unit to a bucket so that all per-class weighted totals an
    estimator needs come out of a single ``bincount`` over the weights.

    Bucket layout: complete pairs by (class, x, y); x-only respondents by
    (class, x); y-only respondents by (class, y); full nonrespondents by
    class.
    """

    buckets: np.ndarray
    n_classes: int
    x_categories: int
    y_categories: int

    @property
    def n_buckets(self) -> int:
        g, k, l = self.n_classes, self.x_categories, self.y_categories
        return g * (k * l + k + l + 1)

    def totals(self, weights: np.ndarray) -> "WeightedTotals":
        flat = np.bincount(self.buckets, weights=weights,
                           minlength=self.n_buckets)
        return self.totals_from_flat(flat)

    def totals_from_flat(self, flat: np.ndarray) -> "WeightedTotals":
        g, k, l = self.n_classes, self.x_categories, self.y_categories
        o1 = g * k * l
        o2 = o1 + g * k
        o3 = o2 + g * l
        return WeightedTotals(
            rr=flat[:o1].reshape(g, k, l),
            rm_x=flat[o1:o2].reshape(g, k),
            mr_y=flat[o2:o3].reshape(g, l),
            mm=flat[o3:o3 + g],
        )


@dataclass(frozen=True)
class WeightedTotals:
    """Per-class weighted counts by response pattern.

    ``rr[g, k, l]`` sums weights of complete pairs in class g+1 with
    (x, y) = (k, l); ``rm_x[g, k]`` sums weights over units with y missing
    by their observed x; ``mr_y[g, l]`` symmetrically; ``mm[g]`` sums
    weights of units missing both items.
    """

    rr: np.ndarray
    rm_x: np.ndarray
    mr_y: np.ndarray
    mm: np.ndarray

    @property
    def n_rr(self) -> np.ndarray:
        return self.rr.sum(axis=(1, 2))

    @property
    def n_rm(self) -> np.ndarray:
        return self.rm_x.sum(axis=1)

    @property
    def n_mr(self) -> np.ndarray:
        return self.mr_y.sum(axis=1)

    @property
    def n_mm(self) -> np.ndarray:
        return self.mm

    @property
    def n_class(self) -> np.ndarray:
        return self.n_rr + self.n_rm + self.n_mr + self.n_mm

    @property
    def x_available(self) -> np.ndarray:
        """(G, K) weighted x counts over all units with x observed."""
        return self.rr.sum(axis=2) + self.rm_x

    @property
    def y_available(self) -> np.ndarray:
        """(G, L) weighted y counts over all units with y observed."""
        return self.rr.sum(axis=1) + self.mr_y


def build_indexer(data: SurveyDataset) -> CellIndexer:
    if data.has_z:
        raise EstimationError("two-variable estimators on a three-variable dataset")
    g = data.n_groups
    k, l = data.x_categories, data.y_categories
    gi = data.groups - 1
    codes = data.pattern_codes()
    buckets = np.empty(data.n, dtype=np.int64)
    o1, o2, o3 = g * k * l, g * (k * l + k), g * (k * l + k + l)
    m = codes == RR
    buckets[m] = gi[m] * (k * l) + data.x[m] * l + data.y[m]
    m = codes == RM
    buckets[m] = o1 + gi[m] * k + data.x[m]
    m = codes == MR
    buckets[m] = o2 + gi[m] * l + data.y[m]
    m = codes == MM
    buckets[m] = o3 + gi[m]
    return CellIndexer(buckets=buckets, n_classes=g,
                       x_categories=k, y_categories=l)


def weighted_totals(data: SurveyDataset,
                    weights: np.ndarray | None = None) -> WeightedTotals:
    idx = build_indexer(data)
    return idx.totals(data.weights if weights is None else np.asarray(weights, float))


# -- fallback ladder --------------------------------------------------------

RUNG_CLASS_MARGINAL = "class-marginal"
RUNG_POOLED = "pooled"
RUNG_UNIFORM = "uniform"


@dataclass(frozen=True)
class FallbackFlag:
    """Record of one zero-denominator fallback: which class, which estimate,
    which ladder rung supplied the value."""

    group: int
    estimate: str
    rung: str
    detail: str = ""


def _resolve_family(per_class: np.ndarray, class_mass: np.ndarray,
                    pooled: np.ndarray, pooled_mass: float,
                    uniform_value: float, estimate: str,
                    flags: list[FallbackFlag]) -> tuple[np.ndarray, np.ndarray]:
    """Resolve per-class ratio estimates with the pooled/uniform ladder.

    Returns the resolved (G, ...) array and a (G,) boolean marking classes
    whose value bottomed out at the uniform rung (no pooled mass either).
    """
    n_classes = per_class.shape[0]
    resolved = np.empty_like(per_class, dtype=float)
    exhausted = np.zeros(n_classes, dtype=bool)
    if pooled_mass != 0.0:
        pooled_law = pooled / pooled_mass
    else:
        pooled_law = np.full(per_class.shape[1:], uniform_value)
    for g in range(n_classes):
        if class_mass[g] != 0.0:
            resolved[g] = per_class[g] / class_mass[g]
        elif pooled_mass != 0.0:
            resolved[g] = pooled_law
            flags.append(FallbackFlag(g + 1, estimate, RUNG_POOLED))
        else:
            resolved[g] = uniform_value
            exhausted[g] = True
            flags.append(FallbackFlag(g + 1, estimate, RUNG_UNIFORM))
    return resolved, exhausted


@dataclass(frozen=True)
class CellEstimates:
    """Per-class building blocks for imputation and the tilde estimators.

    All ratio estimates are resolved through the fallback ladder
    (class value, then pooled across classes, then uniform), with every
    fallback recorded in ``flags``. ``exhausted_*`` mark classes whose
    value came from the uniform rung, i.e. carry no donor information.
    """

    n_classes: int
    x_categories: int
    y_categories: int
    joint_cc: np.ndarray            # (G, K, L)
    marginal_x_cc: np.ndarray       # (G, K) row sums of joint_cc
    marginal_y_cc: np.ndarray       # (G, L)
    marginal_x_ac: np.ndarray       # (G, K)
    marginal_y_ac: np.ndarray       # (G, L)
    cond_x_given_y: np.ndarray      # (G, K, L); [:, :, l] is a law over x
    cond_y_given_x: np.ndarray      # (G, K, L); [:, k, :] is a law over y
    n_hat: np.ndarray               # per-class weighted totals
    n_hat_rr: np.ndarray
    n_hat_rdot: np.ndarray
    n_hat_dotr: np.ndarray
    n_hat_rm: np.ndarray
    n_hat_mr: np.ndarray
    n_hat_mm: np.ndarray
    exhausted_cc: np.ndarray        # (G,) bool
    exhausted_ac_x: np.ndarray
    exhausted_ac_y: np.ndarray
    flags: tuple[FallbackFlag, ...]
    totals: WeightedTotals


def cell_estimates(data: SurveyDataset,
                   weights: np.ndarray | None = None) -> CellEstimates:
    """Compute all per-class cell estimates with the fallback ladder.

    Raises
    ------
    NoDonorInformationError
        If some class contains units missing both items while no complete
        pair exists in any class, so the joint law cannot be estimated at
        all.
    """
    totals = weighted_totals(data, weights)
    return cell_estimates_from_totals(totals)


def cell_estimates_from_totals(totals: WeightedTotals) -> CellEstimates:
    n_classes, k, l = totals.rr.shape
    flags: list[FallbackFlag] = []

    n_rr = totals.n_rr
    pooled_rr = totals.rr.sum(axis=0)
    pooled_rr_mass = float(pooled_rr.sum())
    joint_cc, exhausted_cc = _resolve_family(
        totals.rr, n_rr, pooled_rr, pooled_rr_mass, 1.0 / (k * l),
        "joint-cc", flags)

    if np.any(exhausted_cc & (totals.mm != 0)):
        g = int(np.flatnonzero(exhausted_cc & (totals.mm != 0))[0]) + 1
        raise NoDonorInformationError(g, "no complete pair anywhere")

    marginal_x_cc = joint_cc.sum(axis=2)
    marginal_y_cc = joint_cc.sum(axis=1)

    x_avail = totals.x_available
    n_rdot = x_avail.sum(axis=1)
    pooled_x = x_avail.sum(axis=0)
    marginal_x_ac, exhausted_ac_x = _resolve_family(
        x_avail, n_rdot, pooled_x, float(pooled_x.sum()), 1.0 / k,
        "marginal-x-ac", flags)

    y_avail = totals.y_available
    n_dotr = y_avail.sum(axis=1)
    pooled_y = y_avail.sum(axis=0)
    marginal_y_ac, exhausted_ac_y = _resolve_family(
        y_avail, n_dotr, pooled_y, float(pooled_y.sum()), 1.0 / l,
        "marginal-y-ac", flags)

    # Conditional laws: columns (rows) of the complete-pair table, falling
    # back to the class's resolved marginal when the conditioning cell has
    # no mass. The marginal already sits on the right ladder rung.
    cond_x_given_y = np.empty((n_classes, k, l))
    cond_y_given_x = np.empty((n_classes, k, l))
    for g in range(n_classes):
        if n_rr[g] != 0.0:
            col_mass = totals.rr[g].sum(axis=0)  # (L,)
            for col in range(l):
                if col_mass[col] != 0.0:
                    cond_x_given_y[g, :, col] = totals.rr[g, :, col] / col_mass[col]
                else:
                    cond_x_given_y[g, :, col] = marginal_x_cc[g]
                    flags.append(FallbackFlag(g + 1, "cond-x-given-y",
                                              RUNG_CLASS_MARGINAL, f"y={col}"))
            row_mass = totals.rr[g].sum(axis=1)  # (K,)
            for row in range(k):
                if row_mass[row] != 0.0:
                    cond_y_given_x[g, row, :] = totals.rr[g, row, :] / row_mass[row]
                else:
                    cond_y_given_x[g, row, :] = marginal_y_cc[g]
                    flags.append(FallbackFlag(g + 1, "cond-y-given-x",
                                              RUNG_CLASS_MARGINAL, f"x={row}"))
        else:
            # whole class fell back: conditioning adds nothing on top of the
            # pooled (or uniform) marginal already recorded above
            cond_x_given_y[g] = marginal_x_cc[g][:, None]
            cond_y_given_x[g] = marginal_y_cc[g][None, :]

    return CellEstimates(
        n_classes=n_classes, x_categories=k, y_categories=l,
        joint_cc=joint_cc,
        marginal_x_cc=marginal_x_cc, marginal_y_cc=marginal_y_cc,
        marginal_x_ac=marginal_x_ac, marginal_y_ac=marginal_y_ac,
        cond_x_given_y=cond_x_given_y, cond_y_given_x=cond_y_given_x,
        n_hat=totals.n_class, n_hat_rr=n_rr,
        n_hat_rdot=n_rdot, n_hat_dotr=n_dotr,
        n_hat_rm=totals.n_rm, n_hat_mr=totals.n_mr, n_hat_mm=totals.mm,
        exhausted_cc=exhausted_cc,
        exhausted_ac_x=exhausted_ac_x, exhausted_ac_y=exhausted_ac_y,
        flags=tuple(flags),
        totals=totals,
    )


# -- estimator families -----------------------------------------------------

def ht_proportions(data: SurveyDataset,
                   population_size: int | None = None) -> ProportionTable:
    """Weighted joint proportions of a fully observed dataset against the
    known population size (design-unbiased under the sampling design)."""
    if not data.is_complete:
        raise EstimationError("complete-data estimator on data with missing values")
    n_pop = data.population_size if population_size is None else population_size
    joint = np.zeros((data.x_categories, data.y_categories))
    np.add.at(joint, (data.x, data.y), data.weights)
    return ProportionTable(joint / n_pop, DenominatorScale.POPULATION_SIZE)


def imputed_proportions(completed: SurveyDataset,
                        population_size: int | None = None) -> ProportionTable:
    """Proportions of an imputed dataset: identical computation to the
    complete-data estimator once imputed values fill the gaps."""
    if not completed.is_complete:
        raise EstimationError("imputed estimator on data with residual missing values")
    return ht_proportions(completed, population_size)


def cc_estimators(data: SurveyDataset) -> ProportionTable:
    """Complete-case estimators: proportions among units responding to both
    items, pooled over classes."""
    totals = weighted_totals(data)
    pooled = totals.rr.sum(axis=0)
    mass = pooled.sum()
    if mass == 0.0:
        raise EstimationError("complete-case estimator: no complete pair")
    return ProportionTable(pooled / mass, DenominatorScale.ESTIMATED_POPULATION_SIZE)


def acc_estimators(data: SurveyDataset,
                   population_size: int | None = None) -> ProportionTable:
    """Adjusted complete-case estimators: class-level complete-case tables
    weighted by estimated class sizes against the true population size."""
    n_pop = data.population_size if population_size is None else population_size
    est = cell_estimates(data)
    if np.any(est.exhausted_cc & (est.n_hat != 0)):
        raise EstimationError("adjusted complete-case estimator: no complete pair")
    joint = (est.n_hat[:, None, None] * est.joint_cc).sum(axis=0) / n_pop
    return ProportionTable(joint, DenominatorScale.POPULATION_SIZE)


def ac_estimators(data: SurveyDataset) -> ProportionTable:
    """Available-case estimators: each marginal from all respondents to its
    own item; the joint table coincides with the complete-case table."""
    totals = weighted_totals(data)
    pooled_x = totals.x_available.sum(axis=0)
    pooled_y = totals.y_available.sum(axis=0)
    if pooled_x.sum() == 0.0 or pooled_y.sum() == 0.0:
        raise EstimationError("available-case estimator: an item has no respondent")
    pooled_rr = totals.rr.sum(axis=0)
    if pooled_rr.sum() == 0.0:
        raise EstimationError("available-case estimator: no complete pair for the joint")
    return ProportionTable(
        pooled_rr / pooled_rr.sum(),
        DenominatorScale.ESTIMATED_POPULATION_SIZE,
        marginal_x_component=pooled_x / pooled_x.sum(),
        marginal_y_component=pooled_y / pooled_y.sum(),
    )


def aac_estimators(data: SurveyDataset,
                   population_size: int | None = None) -> ProportionTable:
    """Adjusted available-case estimators: class-level available-case
    marginals (and complete-case joint) weighted by estimated class sizes
    against the true population size."""
    n_pop = data.population_size if population_size is None else population_size
    est = cell_estimates(data)
    live = est.n_hat != 0
    if np.any((est.exhausted_cc | est.exhausted_ac_x | est.exhausted_ac_y) & live):
        raise EstimationError("adjusted available-case estimator: no respondent anywhere")
    joint = (est.n_hat[:, None, None] * est.joint_cc).sum(axis=0) / n_pop
    marg_x = (est.n_hat[:, None] * est.marginal_x_ac).sum(axis=0) / n_pop
    marg_y = (est.n_hat[:, None] * est.marginal_y_ac).sum(axis=0) / n_pop
    return ProportionTable(joint, DenominatorScale.POPULATION_SIZE,
                           marginal_x_component=marg_x,
                           marginal_y_component=marg_y)


def tilde_estimators(data: SurveyDataset,
                     population_size: int | None = None,
                     weights: np.ndarray | None = None) -> ProportionTable:
    """Expected imputed estimators given sample and response sets, under the
    joint (conditional-law) hot-deck procedures.

    This is the deterministic closed form the bootstrap re-evaluates per
    replicate; under exact balancing it coincides with the realized imputed
    estimators.
    """
    n_pop = data.population_size if population_size is None else population_size
    est = cell_estimates(data, weights)
    needy = (est.totals.n_rm != 0) | (est.totals.n_mr != 0) | (est.totals.mm != 0)
    if np.any(needy & est.exhausted_cc):
        g = int(np.flatnonzero(needy & est.exhausted_cc)[0]) + 1
        raise NoDonorInformationError(g, "nonrespondents with no complete pair anywhere")
    joint = tilde_joint_from_estimates(est) / n_pop
    return ProportionTable(joint, DenominatorScale.POPULATION_SIZE)


def tilde_joint_from_estimates(est: CellEstimates) -> np.ndarray:
    """Unnormalized (K, L) tilde joint table: sum over classes of the
    observed-pair counts plus expected imputed contributions."""
    t = est.totals
    joint = ((t.n_rr + t.mm)[:, None, None] * est.joint_cc
             + t.mr_y[:, None, :] * est.cond_x_given_y
             + t.rm_x[:, :, None] * est.cond_y_given_x)
    return joint.sum(axis=0)


def tilde_marginal_components(est: CellEstimates) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalized tilde marginals computed from their own displayed forms
    (observed-item counts, expected conditional draws, joint fallback).
    Agrees with the row/column sums of the tilde joint table to float
    precision; exposed for verification."""
    t = est.totals
    marg_x = (t.x_available
              + (t.mr_y[:, None, :] * est.cond_x_given_y).sum(axis=2)
              + t.mm[:, None] * est.marginal_x_cc).sum(axis=0)
    marg_y = (t.y_available
              + (t.rm_x[:, :, None] * est.cond_y_given_x).sum(axis=1)
              + t.mm[:, None] * est.marginal_y_cc).sum(axis=0)
    return marg_x, marg_y


def or_plugin(table: ProportionTable) -> float:
    """Odds ratio of an estimated 2 x 2 joint table."""
    return odds_ratio(table)


# -- closed-form bias approximations ---------------------------------------

@dataclass(frozen=True)
class BiasTable:
    """Additive asymptotic biases of an estimator family, per parameter."""

    joint: np.ndarray       # (K, L)
    marginal_x: np.ndarray  # (K,)
    marginal_y: np.ndarray  # (L,)


def _spec_arrays(spec: PopulationSpec):
    sizes = spec.class_sizes().astype(float)
    total = sizes.sum()
    joint = spec.class_joint_tables()          # (G, 2, 2)
    marg_x = joint.sum(axis=2)                 # (G, 2)
    marg_y = joint.sum(axis=1)                 # (G, 2)
    phi = spec.pattern_prob_array()            # (G, 4) as (rr, rm, mr, mm)
    return sizes, total, joint, marg_x, marg_y, phi


def _association_bias(sizes, total, phi_resp, per_class, overall):
    """sum_g N_g (phi_g - phibar)(p_g - p) / sum_g N_g phi_g, vectorized
    over the trailing parameter axes."""
    phibar = (sizes * phi_resp).sum() / total
    num = (sizes * (phi_resp - phibar))[(...,) + (None,) * (per_class.ndim - 1)]
    num = (num * (per_class - overall)).sum(axis=0)
    den = (sizes * phi_resp).sum()
    return num / den


def bias_cc(spec: PopulationSpec) -> BiasTable:
    """Asymptotic bias of the complete-case estimators: driven by the
    association between the both-items response probability and the
    parameter across classes."""
    sizes, total, joint, marg_x, marg_y, phi = _spec_arrays(spec)
    p_joint = (sizes[:, None, None] * joint).sum(axis=0) / total
    p_x = (sizes[:, None] * marg_x).sum(axis=0) / total
    p_y = (sizes[:, None] * marg_y).sum(axis=0) / total
    phi_rr = phi[:, 0]
    return BiasTable(
        joint=_association_bias(sizes, total, phi_rr, joint, p_joint),
        marginal_x=_association_bias(sizes, total, phi_rr, marg_x, p_x),
        marginal_y=_association_bias(sizes, total, phi_rr, marg_y, p_y),
    )


def bias_ac(spec: PopulationSpec) -> BiasTable:
    """Asymptotic bias of the available-case estimators: marginals driven by
    the per-item response probabilities, joint identical to complete-case."""
    sizes, total, joint, marg_x, marg_y, phi = _spec_arrays(spec)
    p_joint = (sizes[:, None, None] * joint).sum(axis=0) / total
    p_x = (sizes[:, None] * marg_x).sum(axis=0) / total
    p_y = (sizes[:, None] * marg_y).sum(axis=0) / total
    phi_x = phi[:, 0] + phi[:, 1]  # responds to x
    phi_y = phi[:, 0] + phi[:, 2]  # responds to y
    return BiasTable(
        joint=_association_bias(sizes, total, phi[:, 0], joint, p_joint),
        marginal_x=_association_bias(sizes, total, phi_x, marg_x, p_x),
        marginal_y=_association_bias(sizes, total, phi_y, marg_y, p_y),
    )


def bias_rhdi(spec: PopulationSpec) -> BiasTable:
    """Asymptotic bias of the imputed joint proportions under marginal
    (available-case) hot-deck draws for singly missing items: attenuation of
    the within-class association, scaled by the probability of a single item
    being missing. Marginal estimators are asymptotically unbiased."""
    sizes, total, joint, marg_x, marg_y, phi = _spec_arrays(spec)
    single = phi[:, 1] + phi[:, 2]
    indep = marg_x[:, :, None] * marg_y[:, None, :]
    bias = -(sizes[:, None, None] * single[:, None, None]
             * (joint - indep)).sum(axis=0) / total
    return BiasTable(
        joint=bias,
        marginal_x=np.zeros(joint.shape[1]),
        marginal_y=np.zeros(joint.shape[2]),
    )
