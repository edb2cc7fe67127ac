"""Survey data model: weighted units, missingness bookkeeping, CSV ingestion.

The single currency of the package is :class:`SurveyDataset`, a columnar,
immutable container of weighted units carrying an imputation-class label and
two (optionally three) categorical items. Missing values are explicit flags,
never sentinel categories.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .errors import DataError

__all__ = [
    "ResponsePattern",
    "Unit",
    "SurveyDataset",
    "ClassPartition",
    "PatternPartition",
    "DenominatorScale",
    "ProportionTable",
    "pattern_of",
    "partition_by_class_and_pattern",
    "load_dataset",
    "save_dataset",
]

TWO_VAR_PATTERNS = ("rr", "rm", "mr", "mm")
THREE_VAR_PATTERNS = ("rrr", "rrm", "rmr", "rmm", "mrr", "mrm", "mmr", "mmm")


class ResponsePattern(enum.Enum):
    """Which items a unit answered; ``r`` = responded, ``m`` = missing.

    Two-variable patterns read (x, y); three-variable patterns read (x, y, z).
    """

    RR = "rr"
    RM = "rm"
    MR = "mr"
    MM = "mm"
    RRR = "rrr"
    RRM = "rrm"
    RMR = "rmr"
    RMM = "rmm"
    MRR = "mrr"
    MRM = "mrm"
    MMR = "mmr"
    MMM = "mmm"

    @property
    def x_observed(self) -> bool:
        return self.value[0] == "r"

    @property
    def y_observed(self) -> bool:
        return self.value[1] == "r"

    @property
    def z_observed(self) -> bool:
        if len(self.value) < 3:
            raise ValueError(f"{self.value!r} is a two-variable pattern")
        return self.value[2] == "r"

    @staticmethod
    def from_flags(x_observed: bool, y_observed: bool,
                   z_observed: bool | None = None) -> "ResponsePattern":
        s = ("r" if x_observed else "m") + ("r" if y_observed else "m")
        if z_observed is not None:
            s += "r" if z_observed else "m"
        return ResponsePattern(s)


@dataclass(frozen=True)
class Unit:
    """One sampled unit. ``None`` in x/y/z marks a missing value.

    ``z_missing`` distinguishes a three-variable unit with missing z from a
    two-variable unit, where z is simply absent.
    """

    id: str
    weight: float
    group: int
    x: int | None
    y: int | None
    z: int | None = None
    z_missing: bool = False

    @property
    def has_z(self) -> bool:
        return self.z is not None or self.z_missing


def pattern_of(unit: Unit) -> ResponsePattern:
    """Response pattern of a unit, derived from its missing markers."""
    if unit.has_z:
        return ResponsePattern.from_flags(
            unit.x is not None, unit.y is not None, unit.z is not None
        )
    return ResponsePattern.from_flags(unit.x is not None, unit.y is not None)


def _frozen_array(values, dtype) -> np.ndarray:
    a = np.array(values, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SurveyDataset:
    """Columnar set of weighted units with explicit missingness.

    Parameters
    ----------
    ids : array of str
        Unique unit identifiers.
    weights : array of float
        Sampling weights w_i = 1/pi_i, strictly positive.
    groups : array of int
        Imputation-class labels, 1-based.
    x, y : array of int
        Category codes in {0..K-1} / {0..L-1}; entries under a missing flag
        are ignored (stored as 0).
    x_missing, y_missing : array of bool
        Missing markers for x and y.
    population_size : int
        N, the finite-population size. Required (never inferred from weights).
    x_categories, y_categories : int
        Number of categories K and L.
    z, z_missing, z_categories : optional third item, same conventions.
    """

    ids: np.ndarray
    weights: np.ndarray
    groups: np.ndarray
    x: np.ndarray
    x_missing: np.ndarray
    y: np.ndarray
    y_missing: np.ndarray
    population_size: int
    x_categories: int
    y_categories: int
    z: np.ndarray | None = None
    z_missing: np.ndarray | None = None
    z_categories: int | None = None

    def __post_init__(self):
        set_ = lambda name, val: object.__setattr__(self, name, val)
        set_("ids", _frozen_array(self.ids, str))
        set_("weights", _frozen_array(self.weights, np.float64))
        set_("groups", _frozen_array(self.groups, np.int64))
        set_("x", _frozen_array(self.x, np.int64))
        set_("y", _frozen_array(self.y, np.int64))
        set_("x_missing", _frozen_array(self.x_missing, np.bool_))
        set_("y_missing", _frozen_array(self.y_missing, np.bool_))
        set_("population_size", int(self.population_size))
        set_("x_categories", int(self.x_categories))
        set_("y_categories", int(self.y_categories))
        if self.z is not None:
            set_("z", _frozen_array(self.z, np.int64))
            set_("z_missing", _frozen_array(self.z_missing, np.bool_))
            set_("z_categories", int(self.z_categories))
        self._validate()

    def _validate(self):
        n = len(self.ids)
        cols = [self.weights, self.groups, self.x, self.y, self.x_missing, self.y_missing]
        if self.has_z:
            cols += [self.z, self.z_missing]
        if any(len(c) != n for c in cols):
            raise DataError("column lengths differ")
        if n and len(np.unique(self.ids)) != n:
            raise DataError("duplicate id")
        if n and not np.all(self.weights > 0):
            raise DataError("non-positive weight")
        if n and not np.all(np.isfinite(self.weights)):
            raise DataError("non-finite weight")
        if n and np.any(self.groups < 1):
            raise DataError("class labels must be >= 1")
        if self.population_size < 1:
            raise DataError("population size must be positive")
        for name, vals, miss, ncat in self._item_triples():
            if ncat < 1:
                raise DataError(f"{name} category count must be positive")
            obs = vals[~miss]
            if obs.size and (obs.min() < 0 or obs.max() >= ncat):
                raise DataError(f"category out of range in column {name}")

    def _item_triples(self):
        triples = [("x", self.x, self.x_missing, self.x_categories),
                   ("y", self.y, self.y_missing, self.y_categories)]
        if self.has_z:
            triples.append(("z", self.z, self.z_missing, self.z_categories))
        return triples

    # -- basic views ------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def has_z(self) -> bool:
        return self.z is not None

    @property
    def is_complete(self) -> bool:
        full = not (self.x_missing.any() or self.y_missing.any())
        if self.has_z:
            full = full and not self.z_missing.any()
        return full

    @property
    def n_groups(self) -> int:
        return int(self.groups.max()) if self.n else 0

    def unit(self, i: int) -> Unit:
        z = None
        z_missing = False
        if self.has_z:
            z_missing = bool(self.z_missing[i])
            z = None if z_missing else int(self.z[i])
        return Unit(
            id=str(self.ids[i]),
            weight=float(self.weights[i]),
            group=int(self.groups[i]),
            x=None if self.x_missing[i] else int(self.x[i]),
            y=None if self.y_missing[i] else int(self.y[i]),
            z=z,
            z_missing=z_missing,
        )

    @property
    def units(self) -> Iterator[Unit]:
        return (self.unit(i) for i in range(self.n))

    @classmethod
    def from_units(cls, units, population_size: int,
                   x_categories: int | None = None,
                   y_categories: int | None = None,
                   z_categories: int | None = None) -> "SurveyDataset":
        units = list(units)
        has_z = any(u.has_z for u in units)
        xs = [0 if u.x is None else u.x for u in units]
        ys = [0 if u.y is None else u.y for u in units]

        def infer(n_declared, observed, name):
            if n_declared is not None:
                return n_declared
            if not observed:
                raise DataError(f"cannot infer category count for {name}: no observed value")
            return max(observed) + 1

        kwargs = {}
        if has_z:
            kwargs = dict(
                z=[0 if u.z is None else u.z for u in units],
                z_missing=[u.z is None for u in units],
                z_categories=infer(z_categories, [u.z for u in units if u.z is not None], "z"),
            )
        return cls(
            ids=[u.id for u in units],
            weights=[u.weight for u in units],
            groups=[u.group for u in units],
            x=xs,
            x_missing=[u.x is None for u in units],
            y=ys,
            y_missing=[u.y is None for u in units],
            population_size=population_size,
            x_categories=infer(x_categories, [u.x for u in units if u.x is not None], "x"),
            y_categories=infer(y_categories, [u.y for u in units if u.y is not None], "y"),
            **kwargs,
        )

    def subset(self, indices, weights=None) -> "SurveyDataset":
        """New dataset restricted to ``indices``; optional replacement weights."""
        idx = np.asarray(indices, dtype=np.int64)
        kwargs = {}
        if self.has_z:
            kwargs = dict(z=self.z[idx], z_missing=self.z_missing[idx],
                          z_categories=self.z_categories)
        return SurveyDataset(
            ids=self.ids[idx],
            weights=self.weights[idx] if weights is None else weights,
            groups=self.groups[idx],
            x=self.x[idx], x_missing=self.x_missing[idx],
            y=self.y[idx], y_missing=self.y_missing[idx],
            population_size=self.population_size,
            x_categories=self.x_categories, y_categories=self.y_categories,
            **kwargs,
        )

    def replace_values(self, x=None, x_missing=None, y=None, y_missing=None,
                       z=None, z_missing=None) -> "SurveyDataset":
        """Copy with some value/missing columns replaced (used by imputers)."""
        kwargs = {}
        if self.has_z:
            kwargs = dict(
                z=self.z if z is None else z,
                z_missing=self.z_missing if z_missing is None else z_missing,
                z_categories=self.z_categories,
            )
        return SurveyDataset(
            ids=self.ids, weights=self.weights, groups=self.groups,
            x=self.x if x is None else x,
            x_missing=self.x_missing if x_missing is None else x_missing,
            y=self.y if y is None else y,
            y_missing=self.y_missing if y_missing is None else y_missing,
            population_size=self.population_size,
            x_categories=self.x_categories, y_categories=self.y_categories,
            **kwargs,
        )

    def pattern_codes(self) -> np.ndarray:
        """Per-unit pattern code: 2*(x missing)+(y missing) for two items,
        4*(x missing)+2*(y missing)+(z missing) for three."""
        if self.has_z:
            return (4 * self.x_missing.astype(np.int64)
                    + 2 * self.y_missing.astype(np.int64)
                    + self.z_missing.astype(np.int64))
        return 2 * self.x_missing.astype(np.int64) + self.y_missing.astype(np.int64)

    def equals(self, other: "SurveyDataset") -> bool:
        """Exact data-model equality (missing entries compare as missing)."""
        if self.n != other.n or self.has_z != other.has_z:
            return False
        same = (
            self.population_size == other.population_size
            and self.x_categories == other.x_categories
            and self.y_categories == other.y_categories
            and self.z_categories == other.z_categories
            and bool(np.all(self.ids == other.ids))
            and bool(np.all(self.weights == other.weights))
            and bool(np.all(self.groups == other.groups))
            and bool(np.all(self.x_missing == other.x_missing))
            and bool(np.all(self.y_missing == other.y_missing))
            and bool(np.all(self.x[~self.x_missing] == other.x[~other.x_missing]))
            and bool(np.all(self.y[~self.y_missing] == other.y[~other.y_missing]))
        )
        if same and self.has_z:
            same = (bool(np.all(self.z_missing == other.z_missing))
                    and bool(np.all(self.z[~self.z_missing] == other.z[~other.z_missing])))
        return same


@dataclass(frozen=True)
class ClassPartition:
    """Per-class unit index sets over a dataset; classes partition it."""

    n_classes: int
    index_sets: tuple[np.ndarray, ...]  # position g-1 holds class g

    @classmethod
    def from_dataset(cls, data: SurveyDataset) -> "ClassPartition":
        g = data.n_groups
        sets = tuple(np.flatnonzero(data.groups == c + 1) for c in range(g))
        return cls(n_classes=g, index_sets=sets)


@dataclass(frozen=True)
class PatternPartition:
    """Unit index sets keyed by (class, response pattern).

    Every pattern key is present for every class observed in the data, so
    empty sets are reported with size 0. ``weight_totals`` holds the
    weighted size of each set.
    """

    index_sets: dict[tuple[int, ResponsePattern], np.ndarray]
    weight_totals: dict[tuple[int, ResponsePattern], float]

    def sizes(self) -> dict[tuple[int, ResponsePattern], int]:
        return {k: len(v) for k, v in self.index_sets.items()}


def partition_by_class_and_pattern(data: SurveyDataset) -> PatternPartition:
    """Split unit indices by (imputation class, response pattern).

    The sets are disjoint and exhaustive; weighted totals are exposed for
    each set, including empty ones.
    """
    patterns = THREE_VAR_PATTERNS if data.has_z else TWO_VAR_PATTERNS
    codes = data.pattern_codes()
    index_sets: dict[tuple[int, ResponsePattern], np.ndarray] = {}
    weight_totals: dict[tuple[int, ResponsePattern], float] = {}
    for g in range(1, data.n_groups + 1):
        in_class = data.groups == g
        for code, name in enumerate(patterns):
            idx = np.flatnonzero(in_class & (codes == code))
            key = (g, ResponsePattern(name))
            index_sets[key] = idx
            weight_totals[key] = float(data.weights[idx].sum())
    return PatternPartition(index_sets=index_sets, weight_totals=weight_totals)


class DenominatorScale(enum.Enum):
    """Which denominator a proportion table was computed against."""

    POPULATION_SIZE = "proportion-of-N"
    ESTIMATED_POPULATION_SIZE = "proportion-of-Nhat"


@dataclass(frozen=True)
class ProportionTable:
    """A K x L table of joint proportions with derived marginals.

    Marginal consistency is structural: ``marginal_x`` and ``marginal_y``
    are computed from ``joint`` on access, so they match the joint table
    exactly, along the same floating summation path. The one exception is
    the available-case families, whose marginal estimators are defined on
    different respondent sets than their joint table; those tables carry
    explicit marginal components. Entries may fall outside [0, 1] for
    adjusted estimators; they are never clipped.
    """

    joint: np.ndarray
    scale: DenominatorScale
    marginal_x_component: np.ndarray | None = None
    marginal_y_component: np.ndarray | None = None

    def __post_init__(self):
        j = np.array(self.joint, dtype=np.float64)
        if j.ndim != 2:
            raise DataError("joint proportion table must be 2-dimensional")
        if not np.all(np.isfinite(j)):
            raise DataError("non-finite entry in proportion table")
        j.setflags(write=False)
        object.__setattr__(self, "joint", j)
        for name, ncat in (("marginal_x_component", j.shape[0]),
                           ("marginal_y_component", j.shape[1])):
            comp = getattr(self, name)
            if comp is not None:
                comp = np.array(comp, dtype=np.float64)
                if comp.shape != (ncat,) or not np.all(np.isfinite(comp)):
                    raise DataError(f"bad {name}")
                comp.setflags(write=False)
                object.__setattr__(self, name, comp)

    @property
    def marginal_x(self) -> np.ndarray:
        if self.marginal_x_component is not None:
            return self.marginal_x_component
        return self.joint.sum(axis=1)

    @property
    def marginal_y(self) -> np.ndarray:
        if self.marginal_y_component is not None:
            return self.marginal_y_component
        return self.joint.sum(axis=0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.joint.shape


# -- CSV ingestion and serialization --------------------------------------

_BASE_COLUMNS = ("id", "weight", "class", "x", "y")


def _read_schema(schema) -> dict:
    if schema is None:
        return {}
    if isinstance(schema, Mapping):
        return dict(schema)
    text = Path(schema).read_text(encoding="utf-8")
    out = json.loads(text)
    if not isinstance(out, dict):
        raise DataError("schema file must hold a JSON object")
    return out


def load_dataset(path, schema=None) -> SurveyDataset:
    """Read a dataset from CSV.

    Expected header ``id,weight,class,x,y[,z]``; an empty cell in x/y/z is
    an explicit missing value. ``schema`` (a mapping, or a path to a JSON
    file) may rename columns via a ``"columns"`` entry and override
    ``population_size`` / ``x_categories`` / ``y_categories`` /
    ``z_categories``. Without an explicit schema, a ``<path>.schema.json``
    sidecar is honoured when present. Category counts default to
    1 + the largest observed code.

    Raises
    ------
    DataError
        On a malformed row (with its row number), non-positive weight,
        category outside the declared range, duplicate id, or when the
        population size is not provided by any source.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"input not found: {path}")
    if schema is None:
        sidecar = path.with_name(path.name + ".schema.json")
        schema_dict = _read_schema(sidecar) if sidecar.exists() else {}
    else:
        schema_dict = _read_schema(schema)
    colmap = dict(schema_dict.get("columns", {}))
    names = {c: colmap.get(c, c) for c in (*_BASE_COLUMNS, "z")}

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        col_idx = {}
        for c in _BASE_COLUMNS:
            if names[c] not in header:
                raise DataError(f"{path}: required column {names[c]!r} not found")
            col_idx[c] = header.index(names[c])
        has_z = names["z"] in header
        if has_z:
            col_idx["z"] = header.index(names["z"])

        ids, weights, groups = [], [], []
        xs, xm, ys, ym, zs, zm = [], [], [], [], [], []
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise DataError(f"malformed row {rownum}: expected {len(header)} fields")
            try:
                w = float(row[col_idx["weight"]])
                g = int(row[col_idx["class"]])
            except ValueError as exc:
                raise DataError(f"malformed row {rownum}: {exc}") from None
            if w <= 0:
                raise DataError(f"non-positive weight at row {rownum}")
            ids.append(row[col_idx["id"]])
            weights.append(w)
            groups.append(g)
            for prefix, vals, miss in (("x", xs, xm), ("y", ys, ym), ("z", zs, zm)):
                if prefix == "z" and not has_z:
                    continue
                cell = row[col_idx[prefix]].strip()
                if cell == "":
                    vals.append(0)
                    miss.append(True)
                else:
                    try:
                        vals.append(int(cell))
                    except ValueError:
                        raise DataError(
                            f"malformed row {rownum}: bad {prefix} value {cell!r}"
                        ) from None
                    miss.append(False)

    def resolve_ncat(key, vals, miss, name):
        if key in schema_dict:
            return int(schema_dict[key])
        observed = [v for v, m in zip(vals, miss) if not m]
        if not observed:
            raise DataError(f"cannot infer category count for {name}: column all missing")
        return max(observed) + 1

    if "population_size" not in schema_dict:
        raise DataError(
            f"{path}: population size required (schema sidecar or explicit override)"
        )

    kwargs = {}
    if has_z:
        kwargs = dict(z=zs, z_missing=zm,
                      z_categories=resolve_ncat("z_categories", zs, zm, "z"))
    return SurveyDataset(
        ids=ids, weights=weights, groups=groups,
        x=xs, x_missing=xm, y=ys, y_missing=ym,
        population_size=int(schema_dict["population_size"]),
        x_categories=resolve_ncat("x_categories", xs, xm, "x"),
        y_categories=resolve_ncat("y_categories", ys, ym, "y"),
        **kwargs,
    )


def save_dataset(data: SurveyDataset, path, write_schema: bool = True) -> None:
    """Write a dataset as CSV plus, by default, a ``.schema.json`` sidecar
    recording population size and category counts so a reload is lossless."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = list(_BASE_COLUMNS) + (["z"] if data.has_z else [])
        writer.writerow(header)
        for i in range(data.n):
            row = [
                str(data.ids[i]),
                repr(float(data.weights[i])),
                str(int(data.groups[i])),
                "" if data.x_missing[i] else str(int(data.x[i])),
                "" if data.y_missing[i] else str(int(data.y[i])),
            ]
            if data.has_z:
                row.append("" if data.z_missing[i] else str(int(data.z[i])))
            writer.writerow(row)
    if write_schema:
        schema = {
            "population_size": data.population_size,
            "x_categories": data.x_categories,
            "y_categories": data.y_categories,
        }
        if data.has_z:
            schema["z_categories"] = data.z_categories
        sidecar = path.with_name(path.name + ".schema.json")
        sidecar.write_text(json.dumps(schema, indent=2) + "\n", encoding="utf-8")
