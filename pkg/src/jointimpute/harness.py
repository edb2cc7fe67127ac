"""Monte Carlo studies: point-estimator comparison and bootstrap-variance
performance, at configurable desk scale.

Reproducibility contract: replicate r derives every random ingredient from
the stream (master_seed, (r, purpose)), with purpose codes 0 sampling,
1 response masking, 2-4 the imputation methods, 5 the bootstrap. Replicate
results land in arrays indexed by r and are aggregated with NumPy's pairwise
summation, so reports are bit-identical for any parallelism degree.
"""

from __future__ import annotations

import json
import multiprocessing
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bootstrap import BootstrapConfig, bootstrap_variance
from .errors import DataError, EstimationError
from .estimators import (
    aac_estimators,
    ac_estimators,
    acc_estimators,
    cc_estimators,
    imputed_proportions,
)
from .imputation import bhdi, jhdi, rhdi
from .popgen import (
    PopulationSpec,
    generate_population,
    population_spec_from_dict,
    benchmark_spec,
)
from .rng import RngStream
from .sampling import MaskedSample, generate_response, srswor

__all__ = [
    "StudyConfig",
    "PointRow",
    "VarianceRow",
    "StudyReport",
    "run_point_study",
    "run_variance_study",
    "relative_bias",
    "relative_efficiency",
    "load_study_config",
    "replicate_masked_sample",
    "ALL_ESTIMATORS",
    "PARAMETER_NAMES",
]

# purpose codes for per-replicate substreams
PURPOSE_SAMPLE, PURPOSE_MASK = 0, 1
PURPOSE_RHDI, PURPOSE_JHDI, PURPOSE_BHDI = 2, 3, 4
PURPOSE_BOOTSTRAP = 5

ALL_ESTIMATORS = ("cc", "acc", "ac", "aac", "rhdi", "jhdi", "bhdi")
PARAMETER_NAMES = ("p_x1", "p_y1", "p_11", "odds_ratio")
RE_BASELINE = "aac"
CI_ALPHAS = (0.025, 0.05)


@dataclass(frozen=True)
class StudyConfig:
    """Configuration shared by both studies.

    ``truth_replicates`` sizes the independent run approximating the true
    variance in the variance study; ``threads`` is the replicate
    parallelism degree (None = all cores) and never affects results.
    """

    population: PopulationSpec
    sample_size: int
    replicates: int
    seed: int
    estimators: tuple[str, ...] = ALL_ESTIMATORS
    bootstrap: BootstrapConfig | None = None
    truth_replicates: int = 20000
    threads: int | None = None

    def __post_init__(self):
        if self.replicates < 2:
            raise DataError("a study needs at least 2 replicates")
        if self.sample_size < 1:
            raise DataError("sample size must be positive")
        unknown = set(self.estimators) - set(ALL_ESTIMATORS)
        if unknown:
            raise DataError(f"unknown estimators: {sorted(unknown)}")
        object.__setattr__(self, "estimators", tuple(self.estimators))

    @property
    def parallelism(self) -> int:
        if self.threads is not None:
            return max(1, self.threads)
        return max(1, os.cpu_count() or 1)


@dataclass(frozen=True)
class PointRow:
    estimator: str
    parameter: str
    mc_mean: float
    mc_mse: float
    rb_percent: float
    re_percent: float
    n_used: int


@dataclass(frozen=True)
class VarianceRow:
    parameter: str
    true_variance: float
    mean_variance_estimate: float
    rb_percent: float
    error_rates: dict[str, float]  # keys like "lower@0.025", "both@0.05"
    n_used: int


@dataclass(frozen=True)
class StudyReport:
    kind: str
    sample_size: int
    replicates: int
    seed: int
    rows: tuple
    metadata: dict = field(default_factory=dict)

    def row(self, **match):
        for r in self.rows:
            if all(getattr(r, k) == v for k, v in match.items()):
                return r
        raise KeyError(f"no report row matching {match}")

    def to_json(self) -> str:
        def encode(obj):
            if isinstance(obj, (PointRow, VarianceRow)):
                return obj.__dict__
            if isinstance(obj, (np.floating, np.integer)):
                return obj.item()
            raise TypeError(f"not JSON-serializable: {type(obj)}")
        payload = {
            "kind": self.kind,
            "sample_size": self.sample_size,
            "replicates": self.replicates,
            "seed": self.seed,
            "metadata": self.metadata,
            "rows": list(self.rows),
        }
        return json.dumps(payload, default=encode, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        lines = []
        if self.kind == "points":
            lines.append("estimator,parameter,mc_mean,mc_mse,rb_percent,re_percent,n_used")
            for r in self.rows:
                lines.append(f"{r.estimator},{r.parameter},{r.mc_mean!r},"
                             f"{r.mc_mse!r},{r.rb_percent!r},{r.re_percent!r},{r.n_used}")
        else:
            alphas = sorted({key.split("@")[1] for r in self.rows for key in r.error_rates})
            cols = [f"{side}@{a}" for a in alphas for side in ("lower", "upper", "both")]
            lines.append("parameter,true_variance,mean_variance_estimate,rb_percent,"
                         + ",".join(cols) + ",n_used")
            for r in self.rows:
                rates = ",".join(repr(r.error_rates[c]) for c in cols)
                lines.append(f"{r.parameter},{r.true_variance!r},"
                             f"{r.mean_variance_estimate!r},{r.rb_percent!r},{rates},{r.n_used}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        path = Path(path)
        text = self.to_json() if path.suffix.lower() == ".json" else self.to_csv()
        path.write_text(text, encoding="utf-8")


def relative_bias(estimates, truth: float) -> float:
    """Monte Carlo percent relative bias: 100 * (mean - truth) / truth."""
    if truth == 0:
        raise EstimationError("relative bias undefined for a zero-valued parameter")
    estimates = np.asarray(estimates, dtype=float)
    return float(100.0 * (estimates.mean() - truth) / truth)


def relative_efficiency(mse_baseline: float, mse: float) -> float:
    """Percent relative efficiency: 100 * baseline MSE / MSE."""
    if mse <= 0:
        raise EstimationError("relative efficiency undefined for zero MSE")
    return float(100.0 * mse_baseline / mse)


# -- replicate evaluation -----------------------------------------------------

def _table_params(table) -> tuple[float, float, float, float]:
    j = table.joint
    den = j[1, 0] * j[0, 1]
    odds = j[1, 1] * j[0, 0] / den if den != 0.0 else np.nan
    return (float(table.marginal_x[1]), float(table.marginal_y[1]),
            float(j[1, 1]), float(odds))


def _replicate_sample(pop, spec, sample_size, seed, r) -> MaskedSample:
    stream = RngStream(seed, (r,))
    sample = srswor(pop, sample_size, stream.child(PURPOSE_SAMPLE))
    return generate_response(sample, spec, stream.child(PURPOSE_MASK))


def replicate_masked_sample(config: StudyConfig, replicate: int) -> MaskedSample:
    """The exact masked sample replicate ``replicate`` of a study sees."""
    pop = generate_population(config.population)
    return _replicate_sample(pop, config.population, config.sample_size,
                             config.seed, replicate)


def _eval_point_replicate(pop, spec, config: StudyConfig, r: int) -> np.ndarray:
    masked = _replicate_sample(pop, spec, config.sample_size, config.seed, r).masked
    stream = RngStream(config.seed, (r,))
    out = np.full((len(config.estimators), 4), np.nan)
    for e_i, name in enumerate(config.estimators):
        try:
            if name == "cc":
                table = cc_estimators(masked)
            elif name == "acc":
                table = acc_estimators(masked)
            elif name == "ac":
                table = ac_estimators(masked)
            elif name == "aac":
                table = aac_estimators(masked)
            elif name == "rhdi":
                table = imputed_proportions(
                    rhdi(masked, stream.child(PURPOSE_RHDI)).completed)
            elif name == "jhdi":
                table = imputed_proportions(
                    jhdi(masked, stream.child(PURPOSE_JHDI)).completed)
            else:
                table = imputed_proportions(
                    bhdi(masked, stream.child(PURPOSE_BHDI)).completed)
            out[e_i] = _table_params(table)
        except EstimationError:
            pass  # row stays NaN; counted as an excluded replicate
    return out


def _eval_variance_replicate(pop, spec, config: StudyConfig, r: int):
    masked = _replicate_sample(pop, spec, config.sample_size, config.seed, r).masked
    stream = RngStream(config.seed, (r,))
    point = _table_params(imputed_proportions(
        bhdi(masked, stream.child(PURPOSE_BHDI)).completed))
    result = bootstrap_variance(masked, config.bootstrap,
                                stream.child(PURPOSE_BOOTSTRAP))
    variances = np.array([result.variances[p] for p in PARAMETER_NAMES])
    intervals = np.full((len(CI_ALPHAS), 4, 2), np.nan)
    for a_i, alpha in enumerate(CI_ALPHAS):
        for p_i, p in enumerate(PARAMETER_NAMES):
            try:
                intervals[a_i, p_i] = result.percentile_interval(p, alpha)
            except DataError:
                pass
    return np.asarray(point), variances, intervals, result.n_dropped


def _eval_truth_replicate(pop, spec, config: StudyConfig, r: int) -> np.ndarray:
    # offset the replicate index so the truth run is independent of the
    # main run under the same master seed
    r_eff = r + 1_000_000
    masked = _replicate_sample(pop, spec, config.sample_size, config.seed,
                               r_eff).masked
    stream = RngStream(config.seed, (r_eff,))
    return np.asarray(_table_params(imputed_proportions(
        bhdi(masked, stream.child(PURPOSE_BHDI)).completed)))


# -- parallel driver ---------------------------------------------------------

_WORKER_CTX = None


def _init_worker(ctx):
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _run_chunk(args):
    kind, indices = args
    pop, spec, config = _WORKER_CTX
    evaluator = {"point": _eval_point_replicate,
                 "variance": _eval_variance_replicate,
                 "truth": _eval_truth_replicate}[kind]
    return indices, [evaluator(pop, spec, config, r) for r in indices]


def _map_replicates(kind, n_replicates, pop, spec, config):
    """Evaluate replicates 0..n-1, in parallel if configured; output order
    is always by replicate index."""
    ctx = (pop, spec, config)
    degree = config.parallelism
    results = [None] * n_replicates
    if degree <= 1:
        _init_worker(ctx)
        _, chunk = _run_chunk((kind, list(range(n_replicates))))
        return chunk
    chunk_size = max(1, n_replicates // (degree * 8))
    chunks = [(kind, list(range(lo, min(lo + chunk_size, n_replicates))))
              for lo in range(0, n_replicates, chunk_size)]
    mp = multiprocessing.get_context("fork")
    with mp.Pool(degree, initializer=_init_worker, initargs=(ctx,)) as pool:
        for indices, values in pool.imap_unordered(_run_chunk, chunks):
            for i, v in zip(indices, values):
                results[i] = v
    return results


# -- studies ------------------------------------------------------------------

def run_point_study(config: StudyConfig) -> StudyReport:
    """Compare the estimator families over repeated samples.

    For every replicate: draw a without-replacement sample, apply the
    response mechanism, evaluate each configured estimator for the two
    marginals, the joint proportion and the plug-in odds ratio. Aggregates
    percent relative bias against the exact population parameters and
    percent relative efficiency against the adjusted available-case
    baseline.
    """
    spec = config.population
    pop = generate_population(spec)
    truth = spec.population_parameters()
    truth_vec = np.array([truth[p] for p in PARAMETER_NAMES])

    chunk = _map_replicates("point", config.replicates, pop, spec, config)
    values = np.stack(chunk)  # (B, E, 4)

    if RE_BASELINE not in config.estimators:
        raise DataError("the relative-efficiency baseline estimator must be included")
    base_i = config.estimators.index(RE_BASELINE)

    rows = []
    mse = np.empty((len(config.estimators), 4))
    n_used = np.empty((len(config.estimators), 4), dtype=int)
    for e_i in range(len(config.estimators)):
        for p_i in range(4):
            v = values[:, e_i, p_i]
            ok = ~np.isnan(v)
            n_used[e_i, p_i] = int(ok.sum())
            mse[e_i, p_i] = ((v[ok] - truth_vec[p_i]) ** 2).mean()
    for e_i, name in enumerate(config.estimators):
        for p_i, param in enumerate(PARAMETER_NAMES):
            v = values[:, e_i, p_i]
            v = v[~np.isnan(v)]
            rows.append(PointRow(
                estimator=name, parameter=param,
                mc_mean=float(v.mean()),
                mc_mse=float(mse[e_i, p_i]),
                rb_percent=relative_bias(v, truth_vec[p_i]),
                re_percent=relative_efficiency(mse[base_i, p_i], mse[e_i, p_i]),
                n_used=int(n_used[e_i, p_i]),
            ))
    return StudyReport(
        kind="points", sample_size=config.sample_size,
        replicates=config.replicates, seed=config.seed, rows=tuple(rows),
        metadata={"population_size": spec.total_size,
                  "estimators": list(config.estimators),
                  "truth": {p: truth[p] for p in PARAMETER_NAMES}},
    )


def run_variance_study(config: StudyConfig) -> StudyReport:
    """Assess the bootstrap variance estimator under balanced imputation.

    Per replicate: mask, impute with the balanced procedure, compute the
    point estimates, the bootstrap variance estimates and percentile
    intervals. The true variance of each imputed estimator is approximated
    by an independent Monte Carlo run whose size is configurable and
    recorded in the report.
    """
    if config.bootstrap is None:
        raise DataError("variance study requires a bootstrap configuration")
    spec = config.population
    pop = generate_population(spec)
    truth = spec.population_parameters()
    truth_vec = np.array([truth[p] for p in PARAMETER_NAMES])

    truth_chunk = _map_replicates("truth", config.truth_replicates, pop, spec, config)
    truth_values = np.stack(truth_chunk)  # (T, 4)
    true_var = np.empty(4)
    for p_i in range(4):
        v = truth_values[:, p_i]
        true_var[p_i] = v[~np.isnan(v)].var(ddof=1)

    main_chunk = _map_replicates("variance", config.replicates, pop, spec, config)
    points = np.stack([c[0] for c in main_chunk])       # (B, 4)
    variances = np.stack([c[1] for c in main_chunk])    # (B, 4)
    intervals = np.stack([c[2] for c in main_chunk])    # (B, A, 4, 2)
    dropped = sum(c[3] for c in main_chunk)

    rows = []
    for p_i, param in enumerate(PARAMETER_NAMES):
        v = variances[:, p_i]
        ok = ~np.isnan(v)
        rates = {}
        for a_i, alpha in enumerate(CI_ALPHAS):
            lo = intervals[:, a_i, p_i, 0]
            hi = intervals[:, a_i, p_i, 1]
            defined = ~np.isnan(lo)
            n_def = max(int(defined.sum()), 1)
            low_miss = float(100.0 * (truth_vec[p_i] < lo[defined]).sum() / n_def)
            high_miss = float(100.0 * (truth_vec[p_i] > hi[defined]).sum() / n_def)
            rates[f"lower@{alpha}"] = low_miss
            rates[f"upper@{alpha}"] = high_miss
            rates[f"both@{alpha}"] = low_miss + high_miss
        rows.append(VarianceRow(
            parameter=param,
            true_variance=float(true_var[p_i]),
            mean_variance_estimate=float(v[ok].mean()),
            rb_percent=relative_bias(v[ok], float(true_var[p_i])),
            error_rates=rates,
            n_used=int(ok.sum()),
        ))
    return StudyReport(
        kind="variance", sample_size=config.sample_size,
        replicates=config.replicates, seed=config.seed, rows=tuple(rows),
        metadata={
            "population_size": spec.total_size,
            "truth_replicates": config.truth_replicates,
            "bootstrap_replicates": config.bootstrap.replicates,
            "bootstrap_sample_size": config.bootstrap.sample_size or config.sample_size,
            "dropped_bootstrap_replicates": int(dropped),
            "point_mc_mean": {p: float(points[:, i][~np.isnan(points[:, i])].mean())
                              for i, p in enumerate(PARAMETER_NAMES)},
        },
    )


# -- config file --------------------------------------------------------------

def load_study_config(path) -> StudyConfig:
    """Study configuration from JSON.

    ``population`` is either the string ``"benchmark"`` or an inline
    population-spec object. Bootstrap settings live under ``"bootstrap"``.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"config not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise DataError(f"{path}: config must be a JSON object")
    pop = raw.get("population", "benchmark")
    if isinstance(pop, str):
        if pop != "benchmark":
            raise DataError("population must be 'benchmark' or an inline spec object")
        spec = benchmark_spec()
    else:
        spec = population_spec_from_dict(pop)
    boot = None
    if "bootstrap" in raw and raw["bootstrap"] is not None:
        b = raw["bootstrap"]
        boot = BootstrapConfig(
            replicates=int(b["replicates"]),
            sample_size=(None if b.get("sample_size") in (None, 0)
                         else int(b["sample_size"])),
            alpha=float(b.get("alpha", 0.025)),
        )
    try:
        return StudyConfig(
            population=spec,
            sample_size=int(raw["sample_size"]),
            replicates=int(raw["replicates"]),
            seed=int(raw["seed"]),
            estimators=tuple(raw.get("estimators", ALL_ESTIMATORS)),
            bootstrap=boot,
            truth_replicates=int(raw.get("truth_replicates", 20000)),
            threads=(None if raw.get("threads") in (None, 0)
                     else int(raw["threads"])),
        )
    except KeyError as exc:
        raise DataError(f"{path}: missing config key {exc}") from None
