"""Hot-deck imputation procedures for one, two or three categorical items.

Three procedures share the per-class cell estimates:

* marginal hot-deck (``rhdi``): singly missing items drawn from the
  available-case marginal of their own item; doubly missing pairs drawn
  jointly from the complete-case table (common donor).
* joint hot-deck (``jhdi``): singly missing items drawn from the
  complete-case law conditional on the observed item; pairs as above.
* balanced joint hot-deck (``bhdi``): the joint procedure realized by
  balanced selection over populations of cells, so that the weighted
  imputed totals reproduce their own expectation and the imputation
  variance is (near) eliminated.

Draws are category-level: selecting a donor with probability proportional
to its weight and copying its category is distributionally identical to
drawing the category from the weighted law, so donor records are not
tracked. Each (class, kind) block uses its own derived random substream,
making results independent of execution order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cube import BalancingProblem, balanced_select
from .dataset import SurveyDataset
from .errors import DataError, NoDonorInformationError
from .estimators import CellEstimates, FallbackFlag, cell_estimates
from .rng import RngStream

__all__ = [
    "CellPopulation",
    "ImputationOutcome",
    "build_cell_populations",
    "rhdi",
    "jhdi",
    "bhdi",
    "jhdi3",
]

KIND_MR, KIND_RM, KIND_MM = 0, 1, 2
KIND_NAMES = {KIND_MR: "mr", KIND_RM: "rm", KIND_MM: "mm"}


# -- cell populations -------------------------------------------------------

@dataclass(frozen=True)
class CellPopulation:
    """Population of cells for one (class, kind) block.

    One row per nonrespondent of the block's kind; one cell per candidate
    imputed value (K for a missing x, L for a missing y, K*L for a missing
    pair). Selecting exactly one cell per row realizes the imputation.

    ``cell_coords`` maps each cell to its balance coordinate: the pair cell
    (k, l) sits at coordinate k*L + l, matching the flattened joint table.
    The balance vector of a cell is its weight times its selection
    probability, one-hot at that coordinate.
    """

    kind: str
    group: int
    row_indices: np.ndarray   # dataset indices, one per row
    row_ids: np.ndarray
    row_weights: np.ndarray
    cells_per_row: int
    cell_values: np.ndarray   # per cell: category (mr/rm) or pair code (mm)
    cell_probs: np.ndarray
    cell_coords: np.ndarray   # balance coordinate per cell, in [0, K*L)
    x_categories: int
    y_categories: int

    @property
    def n_rows(self) -> int:
        return len(self.row_indices)

    @property
    def n_cells(self) -> int:
        return len(self.cell_probs)

    def cell_rows(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_rows), self.cells_per_row)

    def balance_vectors(self) -> np.ndarray:
        """(n_cells, K*L) dense matrix of per-cell balance vectors."""
        kl = self.x_categories * self.y_categories
        t = np.zeros((self.n_cells, kl))
        rows = self.cell_rows()
        t[np.arange(self.n_cells), self.cell_coords] = (
            self.row_weights[rows] * self.cell_probs)
        return t

    def balancing_problem(self) -> BalancingProblem:
        """Row-membership columns (mandatory) followed by the K*L balance
        columns in coordinate order (droppable, highest coordinate dropped
        first)."""
        kl = self.x_categories * self.y_categories
        rows = self.cell_rows()
        a = np.zeros((self.n_cells, self.n_rows + kl))
        cell_idx = np.arange(self.n_cells)
        a[cell_idx, rows] = 1.0
        a[cell_idx, self.n_rows + self.cell_coords] = self.row_weights[rows]
        never = np.zeros(self.n_rows + kl, dtype=bool)
        never[:self.n_rows] = True
        return BalancingProblem(inclusion=self.cell_probs, constraints=a,
                                never_drop=never)


def build_cell_populations(data: SurveyDataset,
                           estimates: CellEstimates | None = None
                           ) -> list[CellPopulation]:
    """One population per nonempty (class, kind) block, with selection
    probabilities given by the resolved conditional/joint laws."""
    if data.has_z:
        raise DataError("cell populations are defined for two-item datasets")
    est = cell_estimates(data) if estimates is None else estimates
    k, l = data.x_categories, data.y_categories
    codes = data.pattern_codes()
    pops = []
    for g in range(1, data.n_groups + 1):
        in_class = data.groups == g
        for kind, code in ((KIND_MR, 2), (KIND_RM, 1), (KIND_MM, 3)):
            idx = np.flatnonzero(in_class & (codes == code))
            if idx.size == 0:
                continue
            w = data.weights[idx]
            if kind == KIND_MR:
                y_obs = data.y[idx]
                values = np.tile(np.arange(k), idx.size)
                coords = values * l + np.repeat(y_obs, k)
                probs = est.cond_x_given_y[g - 1][:, y_obs].T.ravel()
                per_row = k
            elif kind == KIND_RM:
                x_obs = data.x[idx]
                values = np.tile(np.arange(l), idx.size)
                coords = np.repeat(x_obs, l) * l + values
                probs = est.cond_y_given_x[g - 1][x_obs, :].ravel()
                per_row = l
            else:
                values = np.tile(np.arange(k * l), idx.size)
                coords = values
                probs = np.tile(est.joint_cc[g - 1].ravel(), idx.size)
                per_row = k * l
            pops.append(CellPopulation(
                kind=KIND_NAMES[kind], group=g,
                row_indices=idx, row_ids=data.ids[idx], row_weights=w,
                cells_per_row=per_row, cell_values=values,
                cell_probs=probs, cell_coords=coords,
                x_categories=k, y_categories=l,
            ))
    return pops


# -- outcomes ---------------------------------------------------------------

@dataclass(frozen=True)
class ImputationOutcome:
    """A completed dataset plus the record of what was imputed.

    ``balance_residuals`` (balanced procedure only) maps (class, kind) to
    the sup-norm gap between the selected cells' balance totals and their
    targets; zero means the balancing equations held exactly.
    """

    completed: SurveyDataset
    method: str
    imputed_x: np.ndarray
    imputed_y: np.ndarray
    imputed_z: np.ndarray | None = None
    balance_residuals: dict[tuple[int, str], float] | None = None
    flags: tuple[FallbackFlag, ...] = ()


def _finish_two_var(data, method, new_x, new_y, imputed_x, imputed_y,
                    residuals=None, flags=()):
    completed = data.replace_values(
        x=new_x, x_missing=np.zeros(data.n, dtype=bool),
        y=new_y, y_missing=np.zeros(data.n, dtype=bool),
    )
    return ImputationOutcome(
        completed=completed, method=method,
        imputed_x=imputed_x, imputed_y=imputed_y,
        balance_residuals=residuals, flags=flags,
    )


def _draw_from_laws(laws: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draws: ``laws`` is (n_units, n_categories), one law per
    unit; returns one category per unit."""
    cum = np.cumsum(laws, axis=1)
    cum[:, -1] = 1.0
    u = gen.random(laws.shape[0])
    return (u[:, None] > cum).sum(axis=1)


def _class_kind_indices(data):
    codes = data.pattern_codes()
    out = {}
    for g in range(1, data.n_groups + 1):
        in_class = data.groups == g
        out[(g, KIND_MR)] = np.flatnonzero(in_class & (codes == 2))
        out[(g, KIND_RM)] = np.flatnonzero(in_class & (codes == 1))
        out[(g, KIND_MM)] = np.flatnonzero(in_class & (codes == 3))
    return out


def _check_two_var(data):
    if data.has_z:
        raise DataError("two-item imputation on a three-item dataset")


def _draw_mm_pairs(est: CellEstimates, g: int, n_units: int,
                   gen: np.random.Generator, l: int):
    """Joint draws for doubly missing units; shared by the marginal and
    joint procedures."""
    law = est.joint_cc[g - 1].ravel()
    pair = _draw_from_laws(np.broadcast_to(law, (n_units, law.size)), gen)
    return pair // l, pair % l


def rhdi(data: SurveyDataset, rng: RngStream) -> ImputationOutcome:
    """Marginal (available-case) hot-deck with a common donor for pairs.

    Within each class: a missing x is drawn from the available-case x
    marginal, a missing y symmetrically, and a doubly missing pair jointly
    from the complete-case table.
    """
    _check_two_var(data)
    est = cell_estimates(data)
    new_x, new_y = data.x.copy(), data.y.copy()
    blocks = _class_kind_indices(data)
    for g in range(1, data.n_groups + 1):
        idx = blocks[(g, KIND_MR)]
        if idx.size:
            if est.exhausted_ac_x[g - 1]:
                raise NoDonorInformationError(g, "no respondent to x anywhere")
            law = est.marginal_x_ac[g - 1]
            gen = rng.child(g, KIND_MR).generator()
            new_x[idx] = _draw_from_laws(
                np.broadcast_to(law, (idx.size, law.size)), gen)
        idx = blocks[(g, KIND_RM)]
        if idx.size:
            if est.exhausted_ac_y[g - 1]:
                raise NoDonorInformationError(g, "no respondent to y anywhere")
            law = est.marginal_y_ac[g - 1]
            gen = rng.child(g, KIND_RM).generator()
            new_y[idx] = _draw_from_laws(
                np.broadcast_to(law, (idx.size, law.size)), gen)
        idx = blocks[(g, KIND_MM)]
        if idx.size:
            gen = rng.child(g, KIND_MM).generator()
            xs, ys = _draw_mm_pairs(est, g, idx.size, gen, data.y_categories)
            new_x[idx] = xs
            new_y[idx] = ys
    return _finish_two_var(data, "rhdi", new_x, new_y,
                           data.x_missing.copy(), data.y_missing.copy(),
                           flags=est.flags)


def jhdi(data: SurveyDataset, rng: RngStream) -> ImputationOutcome:
    """Joint hot-deck: singly missing items drawn conditionally on the
    observed item from the complete-case laws; pairs drawn jointly."""
    _check_two_var(data)
    est = cell_estimates(data)
    new_x, new_y = data.x.copy(), data.y.copy()
    blocks = _class_kind_indices(data)
    for g in range(1, data.n_groups + 1):
        idx = blocks[(g, KIND_MR)]
        if idx.size:
            if est.exhausted_cc[g - 1]:
                raise NoDonorInformationError(g, "no complete pair anywhere")
            laws = est.cond_x_given_y[g - 1][:, data.y[idx]].T
            gen = rng.child(g, KIND_MR).generator()
            new_x[idx] = _draw_from_laws(laws, gen)
        idx = blocks[(g, KIND_RM)]
        if idx.size:
            if est.exhausted_cc[g - 1]:
                raise NoDonorInformationError(g, "no complete pair anywhere")
            laws = est.cond_y_given_x[g - 1][data.x[idx], :]
            gen = rng.child(g, KIND_RM).generator()
            new_y[idx] = _draw_from_laws(laws, gen)
        idx = blocks[(g, KIND_MM)]
        if idx.size:
            gen = rng.child(g, KIND_MM).generator()
            xs, ys = _draw_mm_pairs(est, g, idx.size, gen, data.y_categories)
            new_x[idx] = xs
            new_y[idx] = ys
    return _finish_two_var(data, "jhdi", new_x, new_y,
                           data.x_missing.copy(), data.y_missing.copy(),
                           flags=est.flags)


def bhdi(data: SurveyDataset, rng: RngStream) -> ImputationOutcome:
    """Balanced joint hot-deck via balanced selection over cell populations.

    Each (class, kind) population is balanced independently: one mandatory
    membership column per row (exactly one imputed value per nonrespondent)
    plus the K*L balance columns, dropped highest-coordinate-first only if
    the landing requires it. Residuals of the balance columns are reported
    per population.
    """
    _check_two_var(data)
    est = cell_estimates(data)
    if np.any(est.exhausted_cc & ((est.totals.n_mr != 0) | (est.totals.n_rm != 0))):
        g = int(np.flatnonzero(
            est.exhausted_cc & ((est.totals.n_mr != 0) | (est.totals.n_rm != 0)))[0]) + 1
        raise NoDonorInformationError(g, "no complete pair anywhere")
    new_x, new_y = data.x.copy(), data.y.copy()
    residuals: dict[tuple[int, str], float] = {}
    kind_codes = {v: c for c, v in KIND_NAMES.items()}
    for pop in build_cell_populations(data, est):
        problem = pop.balancing_problem()
        result = balanced_select(problem, rng.child(pop.group, kind_codes[pop.kind]))
        chosen = result.selected
        rows = pop.cell_rows()[chosen]
        values = pop.cell_values[chosen]
        order = np.argsort(rows)
        rows, values = rows[order], values[order]
        unit_idx = pop.row_indices[rows]
        if pop.kind == "mr":
            new_x[unit_idx] = values
        elif pop.kind == "rm":
            new_y[unit_idx] = values
        else:
            new_x[unit_idx] = values // data.y_categories
            new_y[unit_idx] = values % data.y_categories
        residuals[(pop.group, pop.kind)] = float(
            result.residuals[pop.n_rows:].max())
    return _finish_two_var(data, "bhdi", new_x, new_y,
                           data.x_missing.copy(), data.y_missing.copy(),
                           residuals=residuals, flags=est.flags)


# -- three-item joint hot-deck ----------------------------------------------

# pattern code = 4*(x missing) + 2*(y missing) + (z missing); 0 = complete
_THREE_VAR_TARGETS = {
    4: (0,),        # x missing
    2: (1,),        # y missing
    1: (2,),        # z missing
    6: (0, 1),      # x, y missing
    5: (0, 2),      # x, z missing
    3: (1, 2),      # y, z missing
    7: (0, 1, 2),   # all missing
}


def _resolve_three_var_law(counts, pooled, target_axes, obs_values):
    """Law over the target axes given observed values, with the ladder:
    class conditional, class target-marginal, pooled target-marginal,
    uniform. Returns (law over flattened target grid, rung)."""
    all_axes = (0, 1, 2)
    obs_axes = tuple(a for a in all_axes if a not in target_axes)
    slicer = [slice(None)] * 3
    for a, v in zip(obs_axes, obs_values):
        slicer[a] = v
    cond = counts[tuple(slicer)]
    mass = cond.sum()
    if mass != 0.0:
        return (cond / mass).ravel(), None
    marg = counts.sum(axis=obs_axes) if obs_axes else counts
    if marg.sum() != 0.0:
        return (marg / marg.sum()).ravel(), "class-marginal"
    pooled_marg = pooled.sum(axis=obs_axes) if obs_axes else pooled
    if pooled_marg.sum() != 0.0:
        return (pooled_marg / pooled_marg.sum()).ravel(), "pooled"
    size = pooled_marg.size
    return np.full(size, 1.0 / size), "uniform"


def jhdi3(data: SurveyDataset, rng: RngStream) -> ImputationOutcome:
    """Joint hot-deck for three items.

    Every incomplete pattern draws its missing items jointly from the
    complete-case (all three observed) law conditional on whatever the unit
    did answer, estimated within its class with the usual fallback ladder.
    """
    if not data.has_z:
        raise DataError("three-item imputation requires a z column")
    k, l, q = data.x_categories, data.y_categories, data.z_categories
    codes = data.pattern_codes()
    complete = codes == 0
    counts = np.zeros((data.n_groups, k, l, q))
    np.add.at(counts,
              (data.groups[complete] - 1, data.x[complete],
               data.y[complete], data.z[complete]),
              data.weights[complete])
    pooled = counts.sum(axis=0)
    pooled_empty = pooled.sum() == 0.0

    new_x, new_y, new_z = data.x.copy(), data.y.copy(), data.z.copy()
    flags: list[FallbackFlag] = []
    dims = (k, l, q)
    for g in range(1, data.n_groups + 1):
        in_class = data.groups == g
        for code, target_axes in _THREE_VAR_TARGETS.items():
            idx = np.flatnonzero(in_class & (codes == code))
            if idx.size == 0:
                continue
            if pooled_empty:
                raise NoDonorInformationError(g, "no complete triple anywhere")
            obs_axes = tuple(a for a in (0, 1, 2) if a not in target_axes)
            obs_cols = [(data.x, data.y, data.z)[a] for a in obs_axes]
            laws = np.empty((idx.size, int(np.prod([dims[a] for a in target_axes]))))
            for j, unit in enumerate(idx):
                obs_values = tuple(int(col[unit]) for col in obs_cols)
                law, rung = _resolve_three_var_law(
                    counts[g - 1], pooled, target_axes, obs_values)
                laws[j] = law
                if rung is not None:
                    flags.append(FallbackFlag(
                        g, f"three-var-pattern-{code}", rung,
                        f"observed={obs_values}"))
            gen = rng.child(g, 8 + code).generator()
            drawn = _draw_from_laws(laws, gen)
            target_dims = [dims[a] for a in target_axes]
            cells = np.unravel_index(drawn, target_dims)
            for axis, vals in zip(target_axes, cells):
                (new_x, new_y, new_z)[axis][idx] = vals
    completed = data.replace_values(
        x=new_x, x_missing=np.zeros(data.n, dtype=bool),
        y=new_y, y_missing=np.zeros(data.n, dtype=bool),
        z=new_z, z_missing=np.zeros(data.n, dtype=bool),
    )
    return ImputationOutcome(
        completed=completed, method="jhdi3",
        imputed_x=data.x_missing.copy(), imputed_y=data.y_missing.copy(),
        imputed_z=data.z_missing.copy(), flags=tuple(flags),
    )
