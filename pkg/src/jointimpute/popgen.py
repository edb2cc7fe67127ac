"""Synthetic finite populations of two binary items with class structure.

A :class:`PopulationSpec` describes, per imputation class, the class size,
the two marginal proportions, the joint proportion, and the probabilities of
the four response patterns. Population generation is deterministic: cell
counts are the class size times the exact cell probabilities, rounded by
largest remainder, so acceptance checks on the generated population are sharp.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .dataset import DenominatorScale, ProportionTable, SurveyDataset
from .errors import DataError

__all__ = [
    "ClassSpec",
    "PopulationSpec",
    "CellProbabilities",
    "cell_probabilities",
    "odds_ratio",
    "generate_population",
    "benchmark_spec",
    "load_population_spec",
    "save_population_spec",
]

PATTERN_ORDER = ("rr", "rm", "mr", "mm")


class CellProbabilities(NamedTuple):
    """Cells of a 2 x 2 probability table in (p00, p01, p10, p11) order."""

    p00: float
    p01: float
    p10: float
    p11: float

    def as_matrix(self) -> np.ndarray:
        """Joint table indexed [x][y]."""
        return np.array([[self.p00, self.p01], [self.p10, self.p11]])


def cell_probabilities(p_x1: float, p_y1: float, p_11: float) -> CellProbabilities:
    """Complete a 2 x 2 table from its two marginals and the (1,1) cell.

    The remaining cells are forced by the linear identities
    p10 = p_x1 - p_11, p01 = p_y1 - p_11, p00 = 1 - p_x1 - p_y1 + p_11.

    Raises
    ------
    DataError
        If (p_x1, p_y1, p_11) violates the Frechet bounds, making some
        cell negative ("infeasible joint proportion").
    """
    lo = max(0.0, p_x1 + p_y1 - 1.0)
    hi = min(p_x1, p_y1)
    if not (lo - 1e-12 <= p_11 <= hi + 1e-12):
        raise DataError(
            f"infeasible joint proportion: p11={p_11} outside [{lo}, {hi}]"
        )
    return CellProbabilities(
        p00=1.0 - p_x1 - p_y1 + p_11,
        p01=p_y1 - p_11,
        p10=p_x1 - p_11,
        p11=p_11,
    )


def odds_ratio(table) -> float:
    """Odds ratio (p11 * p00) / (p10 * p01) of a 2 x 2 table.

    ``table`` may be a :class:`CellProbabilities`, a 2 x 2 array indexed
    [x][y], or a :class:`ProportionTable` with a 2 x 2 joint.
    """
    if isinstance(table, CellProbabilities):
        m = table.as_matrix()
    elif isinstance(table, ProportionTable):
        m = table.joint
    else:
        m = np.asarray(table, dtype=float)
    if m.shape != (2, 2):
        raise DataError("odds ratio requires a 2 x 2 table")
    den = m[1, 0] * m[0, 1]
    if den == 0.0:
        raise DataError("odds ratio undefined: zero off-diagonal product")
    return float(m[1, 1] * m[0, 0] / den)


@dataclass(frozen=True)
class ClassSpec:
    """One imputation class: size, marginals, joint, and response-pattern
    probabilities in (rr, rm, mr, mm) order."""

    size: int
    p_x1: float
    p_y1: float
    p_11: float
    pattern_probs: tuple[float, float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "pattern_probs",
                           tuple(float(p) for p in self.pattern_probs))
        if self.size < 1:
            raise DataError("class size must be positive")
        if len(self.pattern_probs) != 4:
            raise DataError("pattern_probs must hold (rr, rm, mr, mm)")
        if any(not (0.0 <= p <= 1.0) for p in self.pattern_probs):
            raise DataError("pattern probabilities must lie in [0, 1]")
        if abs(sum(self.pattern_probs) - 1.0) > 1e-12:
            raise DataError("pattern probabilities must sum to 1")
        for name, p in (("p_x1", self.p_x1), ("p_y1", self.p_y1), ("p_11", self.p_11)):
            if not (0.0 <= p <= 1.0):
                raise DataError(f"{name} must lie in [0, 1]")
        cell_probabilities(self.p_x1, self.p_y1, self.p_11)  # Frechet check

    @property
    def cells(self) -> CellProbabilities:
        return cell_probabilities(self.p_x1, self.p_y1, self.p_11)

    @property
    def odds_ratio(self) -> float:
        return odds_ratio(self.cells)


@dataclass(frozen=True)
class PopulationSpec:
    """A finite population as a sequence of class specifications."""

    classes: tuple[ClassSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if not self.classes:
            raise DataError("population spec needs at least one class")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def total_size(self) -> int:
        return sum(c.size for c in self.classes)

    def class_sizes(self) -> np.ndarray:
        return np.array([c.size for c in self.classes], dtype=np.int64)

    def pattern_prob_array(self) -> np.ndarray:
        """(G, 4) array of pattern probabilities in (rr, rm, mr, mm) order."""
        return np.array([c.pattern_probs for c in self.classes], dtype=float)

    def class_joint_tables(self) -> np.ndarray:
        """(G, 2, 2) exact per-class joint tables indexed [g][x][y]."""
        return np.stack([c.cells.as_matrix() for c in self.classes])

    def population_parameters(self) -> dict[str, float]:
        """Exact population-level p_x1, p_y1, p_11 and odds ratio."""
        sizes = self.class_sizes().astype(float)
        total = sizes.sum()
        joint = (sizes[:, None, None] * self.class_joint_tables()).sum(axis=0) / total
        return {
            "p_x1": float(joint[1].sum()),
            "p_y1": float(joint[:, 1].sum()),
            "p_11": float(joint[1, 1]),
            "odds_ratio": odds_ratio(joint),
        }


def _largest_remainder_counts(total: int, probs: np.ndarray) -> np.ndarray:
    """Integer cell counts summing to ``total``; exact when total*p is
    integral, otherwise largest-remainder rounding (ties to earlier cells)."""
    raw = total * probs
    counts = np.floor(raw + 1e-9).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        frac = raw - counts
        order = np.argsort(-frac, kind="stable")
        counts[order[:short]] += 1
    elif short < 0:  # defensive: the epsilon floor overshot
        frac = raw - counts
        order = np.argsort(frac, kind="stable")
        counts[order[:(-short)]] -= 1
    return counts


def generate_population(spec: PopulationSpec) -> SurveyDataset:
    """Materialize the finite population described by ``spec``.

    Deterministic: per class, the count of units in cell (x, y) is the class
    size times the exact cell probability, rounded by largest remainder so
    counts sum to the class size. All units are fully observed with weight 1.
    """
    ids, groups, xs, ys = [], [], [], []
    serial = 0
    for g, cls_spec in enumerate(spec.classes, start=1):
        cells = cls_spec.cells
        probs = np.array([cells.p00, cells.p01, cells.p10, cells.p11])
        counts = _largest_remainder_counts(cls_spec.size, probs)
        for (xv, yv), count in zip(((0, 0), (0, 1), (1, 0), (1, 1)), counts):
            for _ in range(count):
                serial += 1
                ids.append(str(serial))
                groups.append(g)
                xs.append(xv)
                ys.append(yv)
    n = len(ids)
    return SurveyDataset(
        ids=ids,
        weights=np.ones(n),
        groups=groups,
        x=xs, x_missing=np.zeros(n, dtype=bool),
        y=ys, y_missing=np.zeros(n, dtype=bool),
        population_size=spec.total_size,
        x_categories=2, y_categories=2,
    )


def population_proportions(data: SurveyDataset) -> ProportionTable:
    """Census proportions of a fully observed population (weight-free counts)."""
    joint = np.zeros((data.x_categories, data.y_categories))
    np.add.at(joint, (data.x, data.y), 1.0)
    return ProportionTable(joint / data.n, DenominatorScale.POPULATION_SIZE)


def benchmark_spec() -> PopulationSpec:
    """Five-class benchmark population used by the bundled studies.

    Class marginals rise with the both-items response probability, which
    biases complete-case and available-case estimators upward, and the
    single-item nonresponse probabilities are large enough to stress joint
    imputation.
    """
    rows = [
        (4000, 0.50, 0.50, 0.20, (0.10, 0.20, 0.20, 0.50)),
        (4000, 0.55, 0.55, 0.30, (0.20, 0.20, 0.20, 0.40)),
        (4000, 0.60, 0.60, 0.40, (0.30, 0.25, 0.25, 0.20)),
        (4000, 0.65, 0.65, 0.50, (0.40, 0.20, 0.20, 0.20)),
        (4000, 0.70, 0.70, 0.60, (0.50, 0.20, 0.20, 0.10)),
    ]
    return PopulationSpec(
        classes=tuple(ClassSpec(size, px, py, p11, phi)
                      for size, px, py, p11, phi in rows)
    )


def load_population_spec(source) -> PopulationSpec:
    """Read a population spec from a JSON file (or the name ``"benchmark"``).

    Expected shape::

        {"classes": [{"size": 4000, "p_x1": 0.5, "p_y1": 0.5, "p_11": 0.2,
                      "pattern_probs": {"rr": 0.1, "rm": 0.2,
                                        "mr": 0.2, "mm": 0.5}}, ...]}

    ``pattern_probs`` also accepts a 4-list in (rr, rm, mr, mm) order.
    """
    if isinstance(source, str) and source == "benchmark":
        return PopulationSpec(benchmark_spec().classes)
    path = Path(source)
    if not path.exists():
        raise DataError(f"population spec not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    return population_spec_from_dict(raw)


def population_spec_from_dict(raw: dict) -> PopulationSpec:
    if not isinstance(raw, dict) or "classes" not in raw:
        raise DataError("population spec must be an object with a 'classes' list")
    classes = []
    for i, entry in enumerate(raw["classes"], start=1):
        try:
            probs = entry["pattern_probs"]
            if isinstance(probs, dict):
                probs = tuple(float(probs[k]) for k in PATTERN_ORDER)
            else:
                probs = tuple(float(p) for p in probs)
            classes.append(ClassSpec(
                size=int(entry["size"]),
                p_x1=float(entry["p_x1"]),
                p_y1=float(entry["p_y1"]),
                p_11=float(entry["p_11"]),
                pattern_probs=probs,
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"population spec class {i}: {exc}") from None
    return PopulationSpec(classes=tuple(classes))


def save_population_spec(spec: PopulationSpec, path) -> None:
    payload = {
        "classes": [
            {
                "size": c.size,
                "p_x1": c.p_x1,
                "p_y1": c.p_y1,
                "p_11": c.p_11,
                "pattern_probs": dict(zip(PATTERN_ORDER, c.pattern_probs)),
            }
            for c in spec.classes
        ]
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
