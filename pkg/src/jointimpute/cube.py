"""Balanced random selection: cube-method flight and landing phases.

Given inclusion probabilities over M cells and P linear balancing columns,
the flight phase performs a martingale random walk inside [0,1]^M that keeps
every active balance functional constant while driving coordinates to 0/1.
The landing phase finishes the job by suppressing droppable columns in
priority order (re-running the flight after each suppression) and, if
mandatory columns alone still block progress, by independent Bernoulli
rounding of whatever remains.

The flight works on a small working set of non-integral coordinates grown
just far enough that the constraints touching it admit a null direction, so
cost per step stays small even when the constraint matrix is large (for
one-selection-per-row problems the touched set is a handful of rows).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import BalanceError, DataError
from .rng import RngStream

__all__ = [
    "BalancingProblem",
    "SelectionState",
    "SelectionResult",
    "flight_phase",
    "landing_phase",
    "balanced_select",
    "INTEGRALITY_TOL",
]

INTEGRALITY_TOL = 1e-9
_NEVER_DROP_RESIDUAL_TOL = 1e-6


@dataclass(frozen=True)
class BalancingProblem:
    """Inclusion probabilities plus balancing columns.

    Parameters
    ----------
    inclusion : (M,) array in [0, 1]
        Target selection probabilities per cell.
    constraints : (M, P) array
        Column p is balanced: the selected cells' coefficient sum should
        reproduce ``inclusion @ constraints[:, p]``.
    never_drop : (P,) bool array, optional
        Columns the landing phase must honour exactly; the caller is
        responsible for their integral satisfiability.
    priority : (P,) int array, optional
        Keep-priority of droppable columns; lower priority is dropped
        first, ties dropped from the highest column index down.
    """

    inclusion: np.ndarray
    constraints: np.ndarray
    never_drop: np.ndarray | None = None
    priority: np.ndarray | None = None

    def __post_init__(self):
        pi = np.array(self.inclusion, dtype=np.float64)
        a = np.array(self.constraints, dtype=np.float64)
        if pi.ndim != 1 or pi.size == 0:
            raise DataError("inclusion probabilities must be a non-empty vector")
        if np.any((pi < 0) | (pi > 1)):
            raise DataError("inclusion probabilities must lie in [0, 1]")
        if a.ndim != 2 or a.shape[0] != pi.size:
            raise DataError("constraints must be an M x P matrix")
        if not np.all(np.isfinite(a)):
            raise DataError("non-finite constraint coefficient")
        nd = self.never_drop
        nd = np.zeros(a.shape[1], bool) if nd is None else np.array(nd, dtype=bool)
        pr = self.priority
        pr = np.zeros(a.shape[1], np.int64) if pr is None else np.array(pr, dtype=np.int64)
        if nd.shape != (a.shape[1],) or pr.shape != (a.shape[1],):
            raise DataError("never_drop/priority must have one entry per column")
        for arr in (pi, a, nd, pr):
            arr.setflags(write=False)
        object.__setattr__(self, "inclusion", pi)
        object.__setattr__(self, "constraints", a)
        object.__setattr__(self, "never_drop", nd)
        object.__setattr__(self, "priority", pr)

    @property
    def n_cells(self) -> int:
        return self.inclusion.size

    @property
    def n_columns(self) -> int:
        return self.constraints.shape[1]

    def drop_order(self) -> np.ndarray:
        """Droppable column indices, first-to-drop first."""
        droppable = np.flatnonzero(~self.never_drop)
        order = sorted(droppable, key=lambda p: (self.priority[p], -p))
        return np.array(order, dtype=np.int64)

    def targets(self) -> np.ndarray:
        return self.inclusion @ self.constraints

    def _csr(self):
        cached = getattr(self, "_csr_cache", None)
        if cached is None:
            cached = _csr(self.constraints)
            object.__setattr__(self, "_csr_cache", cached)
        return cached


@dataclass
class SelectionState:
    """Flight-phase output: partially integral vector plus bookkeeping."""

    problem: BalancingProblem
    values: np.ndarray
    frozen: np.ndarray
    active_columns: np.ndarray

    @property
    def n_fractional(self) -> int:
        return int((~self.frozen).sum())


@dataclass(frozen=True)
class SelectionResult:
    """Final 0/1 selection with per-column balance residuals."""

    selected: np.ndarray
    residuals: np.ndarray
    dropped_columns: tuple[int, ...]

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.selected)


# -- numba flight kernel ----------------------------------------------------

_DONE, _STUCK, _FAILED = 0, 1, 2


@njit(cache=True)
def _null_vector(cmat, out):
    """Null vector of a small dense matrix by column-pivoted elimination.

    Writes the vector into ``out`` and returns True, or returns False when
    the matrix has full column rank (no null direction).
    """
    n_rows, n_cols = cmat.shape
    r = np.empty((n_rows, n_cols))
    r[:, :] = cmat
    scale = 0.0
    for i in range(n_rows):
        for j in range(n_cols):
            a = abs(r[i, j])
            if a > scale:
                scale = a
    if scale == 0.0:
        for j in range(n_cols):
            out[j] = 0.0
        out[0] = 1.0
        return True
    tol = 1e-11 * scale
    piv_row_of_col = np.full(n_cols, -1, np.int64)
    rank = 0
    for c in range(n_cols):
        if rank == n_rows:
            break
        best = rank
        best_val = abs(r[rank, c])
        for i in range(rank + 1, n_rows):
            a = abs(r[i, c])
            if a > best_val:
                best_val = a
                best = i
        if best_val <= tol:
            continue  # free column
        if best != rank:
            for j in range(c, n_cols):
                tmp = r[rank, j]
                r[rank, j] = r[best, j]
                r[best, j] = tmp
        inv = 1.0 / r[rank, c]
        for i in range(n_rows):
            if i == rank:
                continue
            f = r[i, c] * inv
            if f != 0.0:
                for j in range(c, n_cols):
                    r[i, j] -= f * r[rank, j]
        piv_row_of_col[c] = rank
        rank += 1
    free = -1
    for c in range(n_cols):
        if piv_row_of_col[c] < 0:
            free = c
            break
    if free < 0:
        return False
    for j in range(n_cols):
        out[j] = 0.0
    out[free] = 1.0
    for c in range(n_cols):
        pr = piv_row_of_col[c]
        if pr >= 0:
            out[c] = -r[pr, free] / r[pr, c]
    return True


@njit(cache=True)
def _flight_kernel(values, frozen, indptr, colidx, coef, active, uniforms, tol):
    m_total = values.shape[0]
    p_total = active.shape[0]
    col_pos = np.full(p_total, -1, np.int64)
    touched = np.empty(p_total, np.int64)
    work = np.empty(m_total, np.int64)
    used = 0
    steps = 0
    max_steps = 4 * m_total + 16
    start = 0  # cells below this index are all frozen
    while True:
        while start < m_total and frozen[start]:
            start += 1
        # grow the working set until the touched active columns leave
        # a free direction (n_work > n_touched guarantees nullity >= 1)
        n_work = 0
        n_touched = 0
        exhausted = True
        for m in range(start, m_total):
            if frozen[m]:
                continue
            work[n_work] = m
            n_work += 1
            for jj in range(indptr[m], indptr[m + 1]):
                p = colidx[jj]
                if active[p] and col_pos[p] < 0:
                    col_pos[p] = n_touched
                    touched[n_touched] = p
                    n_touched += 1
            if n_work > n_touched:
                exhausted = False
                break
        if n_work == 0:
            return used, _DONE

        cmat = np.zeros((n_touched, n_work))
        for j in range(n_work):
            m = work[j]
            for jj in range(indptr[m], indptr[m + 1]):
                p = colidx[jj]
                if active[p]:
                    cmat[col_pos[p], j] = coef[jj]
        for t in range(n_touched):
            col_pos[touched[t]] = -1

        direction = np.empty(n_work)
        if n_touched == 0:
            direction[:] = 0.0
            direction[0] = 1.0
        else:
            found_dir = _null_vector(cmat, direction)
            residual_ok = False
            if found_dir:
                cscale = 0.0
                uscale = 0.0
                for j in range(n_work):
                    if abs(direction[j]) > uscale:
                        uscale = abs(direction[j])
                worst = 0.0
                for t in range(n_touched):
                    acc = 0.0
                    for j in range(n_work):
                        acc += cmat[t, j] * direction[j]
                        a = abs(cmat[t, j])
                        if a > cscale:
                            cscale = a
                    if abs(acc) > worst:
                        worst = abs(acc)
                residual_ok = worst <= 1e-8 * max(1.0, cscale) * max(1.0, uscale)
            if not (found_dir and residual_ok):
                # elimination failed or was numerically unsafe: decide by SVD
                _, sing, vh = np.linalg.svd(cmat, True)
                n_sing = min(n_touched, n_work)
                if sing[n_sing - 1] > max(1e-12, 1e-11 * sing[0]) and n_work <= n_touched:
                    return used, _STUCK
                direction[:] = vh[n_work - 1, :]

        lam_up = np.inf
        lam_dn = np.inf
        for j in range(n_work):
            u = direction[j]
            v = values[work[j]]
            if u > 1e-13:
                a = (1.0 - v) / u
                b = v / u
            elif u < -1e-13:
                a = v / (-u)
                b = (1.0 - v) / (-u)
            else:
                continue
            if a < lam_up:
                lam_up = a
            if b < lam_dn:
                lam_dn = b
        if not (lam_up < np.inf and lam_dn < np.inf):
            return used, _STUCK  # direction numerically zero

        r = uniforms[used]
        used += 1
        step = lam_up if r * (lam_up + lam_dn) < lam_dn else -lam_dn
        for j in range(n_work):
            m = work[j]
            v = values[m] + step * direction[j]
            if v <= tol:
                v = 0.0
                frozen[m] = True
            elif v >= 1.0 - tol:
                v = 1.0
                frozen[m] = True
            values[m] = v

        steps += 1
        if steps > max_steps:
            return used, _FAILED


def _csr(constraints: np.ndarray):
    mask = constraints != 0.0
    indptr = np.zeros(constraints.shape[0] + 1, dtype=np.int64)
    np.cumsum(mask.sum(axis=1), out=indptr[1:])
    colidx = np.nonzero(mask)[1].astype(np.int64)
    coef = constraints[mask].astype(np.float64)
    return indptr, colidx, coef


def _snap(values: np.ndarray) -> np.ndarray:
    frozen = np.zeros(values.shape, dtype=bool)
    low = values <= INTEGRALITY_TOL
    high = values >= 1.0 - INTEGRALITY_TOL
    values[low] = 0.0
    values[high] = 1.0
    frozen[low | high] = True
    return frozen


def _run_flight(values, frozen, csr, active, gen):
    free = int((~frozen).sum())
    if free == 0:
        return
    uniforms = gen.random(free + 2)
    indptr, colidx, coef = csr
    _, status = _flight_kernel(values, frozen, indptr, colidx, coef,
                               active, uniforms, INTEGRALITY_TOL)
    if status == _FAILED:
        raise BalanceError("flight phase failed to converge (numerical)")


def flight_phase(problem: BalancingProblem, rng: RngStream) -> SelectionState:
    """Run the flight phase with every column active.

    The output keeps every balance functional equal to its target and is a
    martingale transform of the inclusion probabilities; at most as many
    coordinates stay fractional as there are active columns.
    """
    values = problem.inclusion.copy()
    frozen = _snap(values)
    active = np.ones(problem.n_columns, dtype=bool)
    _run_flight(values, frozen, problem._csr(), active, rng.generator())
    return SelectionState(problem=problem, values=values, frozen=frozen,
                          active_columns=active)


def landing_phase(state: SelectionState, rng: RngStream) -> SelectionResult:
    """Finish a flight output to a 0/1 vector.

    Droppable columns are suppressed lowest-priority-first with a flight
    re-run after each suppression; mandatory columns are never suppressed.
    If only mandatory columns remain and the walk is still blocked, the
    remaining coordinates are rounded by independent Bernoulli draws (which
    preserves their selection probabilities). Residuals are reported for
    every column.
    """
    problem = state.problem
    values = state.values.copy()
    frozen = state.frozen.copy()
    active = state.active_columns.copy()
    csr = problem._csr()
    gen = rng.generator()
    drop_seq = [p for p in problem.drop_order() if active[p]]
    dropped: list[int] = []
    while not frozen.all():
        if drop_seq:
            p = drop_seq.pop(0)
            active[p] = False
            dropped.append(int(p))
            _run_flight(values, frozen, csr, active, gen)
        else:
            for m in np.flatnonzero(~frozen):
                values[m] = 1.0 if gen.random() < values[m] else 0.0
                frozen[m] = True
    selected = values >= 0.5
    achieved = selected.astype(float) @ problem.constraints
    residuals = np.abs(achieved - problem.targets())
    return SelectionResult(selected=selected, residuals=residuals,
                           dropped_columns=tuple(dropped))


def balanced_select(problem: BalancingProblem, rng: RngStream) -> SelectionResult:
    """Flight then landing. Raises if a mandatory column ends up violated,
    which signals an infeasible caller contract."""
    state = flight_phase(problem, rng.child(0))
    result = landing_phase(state, rng.child(1))
    bad = problem.never_drop & (result.residuals > _NEVER_DROP_RESIDUAL_TOL)
    if np.any(bad):
        cols = np.flatnonzero(bad)
        raise BalanceError(
            f"mandatory balancing columns {cols.tolist()} not satisfiable"
            " at an integral point"
        )
    return result
