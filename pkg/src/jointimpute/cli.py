"""Command-line interface.

One executable, subcommand style: ``popgen``, ``impute``, ``estimate``,
``simulate-points``, ``simulate-variance``, ``bootstrap-var``. Data goes to
files, diagnostics to stderr. Exit codes: 0 success, 1 validation error,
2 runtime or numerical failure. Every randomized run logs its resolved seed
so it can be replayed exactly.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .bootstrap import BootstrapConfig, bootstrap_variance
from .dataset import load_dataset, save_dataset
from .errors import DataError, JointImputeError
from .estimators import (
    aac_estimators,
    ac_estimators,
    acc_estimators,
    cc_estimators,
    ht_proportions,
    tilde_estimators,
)
from .harness import (
    load_study_config,
    replicate_masked_sample,
    run_point_study,
    run_variance_study,
)
from .imputation import bhdi, jhdi, jhdi3, rhdi
from .popgen import generate_population, load_population_spec
from .rng import RngStream


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _resolve_seed(seed: int | None) -> int:
    if seed is None:
        seed = int.from_bytes(os.urandom(8), "little") >> 1
    _log(f"seed: {seed}")
    return seed


def _parse_stream_id(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip() != "")
    except ValueError:
        raise DataError(f"bad --stream-id {text!r}: expected comma-separated integers")


def _load_input(args) -> "SurveyDataset":
    schema = None
    if getattr(args, "schema", None):
        schema = args.schema
    data = None
    if getattr(args, "population_size", None):
        import json as _json
        base = {}
        if schema is not None:
            base = _json.loads(Path(schema).read_text(encoding="utf-8"))
        elif Path(str(args.infile) + ".schema.json").exists():
            base = _json.loads(Path(str(args.infile) + ".schema.json")
                               .read_text(encoding="utf-8"))
        base["population_size"] = args.population_size
        data = load_dataset(args.infile, schema=base)
    else:
        data = load_dataset(args.infile, schema=schema)
    return data


def _cmd_popgen(args) -> int:
    spec = load_population_spec(args.spec)
    pop = generate_population(spec)
    save_dataset(pop, args.out)
    _log(f"wrote {pop.n} units to {args.out}")
    return 0


_IMPUTERS = {"rhdi": rhdi, "jhdi": jhdi, "bhdi": bhdi, "jhdi3": jhdi3}


def _cmd_impute(args) -> int:
    data = _load_input(args)
    seed = _resolve_seed(args.seed)
    stream = RngStream(seed, _parse_stream_id(args.stream_id))
    outcome = _IMPUTERS[args.method](data, stream)
    save_dataset(outcome.completed, args.out)
    if args.flags_out:
        _write_flags(outcome, args.flags_out)
    if outcome.balance_residuals:
        worst = max(outcome.balance_residuals.values())
        _log(f"max balance residual: {worst!r}")
    _log(f"imputed {int(outcome.imputed_x.sum())} x cells, "
         f"{int(outcome.imputed_y.sum())} y cells"
         + (f", {int(outcome.imputed_z.sum())} z cells"
            if outcome.imputed_z is not None else ""))
    return 0


def _write_flags(outcome, path) -> None:
    path = Path(path)
    data = outcome.completed
    with path.open("w", encoding="utf-8", newline="") as fh:
        cols = ["id", "x_imputed", "y_imputed"]
        if outcome.imputed_z is not None:
            cols.append("z_imputed")
        fh.write(",".join(cols) + "\n")
        for i in range(data.n):
            row = [str(data.ids[i]), str(int(outcome.imputed_x[i])),
                   str(int(outcome.imputed_y[i]))]
            if outcome.imputed_z is not None:
                row.append(str(int(outcome.imputed_z[i])))
            fh.write(",".join(row) + "\n")
    diag = {
        "fallbacks": [f.__dict__ for f in outcome.flags],
        "balance_residuals": (
            {f"{g}/{kind}": v for (g, kind), v in outcome.balance_residuals.items()}
            if outcome.balance_residuals else {}),
        "method": outcome.method,
    }
    sidecar = path.with_name(path.name + ".diagnostics.json")
    sidecar.write_text(json.dumps(diag, indent=2) + "\n", encoding="utf-8")


_FAMILIES = {
    "ht": ht_proportions,
    "cc": cc_estimators,
    "acc": acc_estimators,
    "ac": ac_estimators,
    "aac": aac_estimators,
    "tilde": tilde_estimators,
}


def _cmd_estimate(args) -> int:
    data = _load_input(args)
    if args.estimators == "auto":
        names = ["ht"] if data.is_complete else ["cc", "acc", "ac", "aac", "tilde"]
    else:
        names = [n.strip() for n in args.estimators.split(",") if n.strip()]
        unknown = set(names) - set(_FAMILIES)
        if unknown:
            raise DataError(f"unknown estimator(s): {sorted(unknown)}")
    lines = ["estimator,parameter,estimate"]
    for name in names:
        table = _FAMILIES[name](data)
        k, l = table.shape
        for i in range(k):
            lines.append(f"{name},px[{i}],{table.marginal_x[i]!r}")
        for j in range(l):
            lines.append(f"{name},py[{j}],{table.marginal_y[j]!r}")
        for i in range(k):
            for j in range(l):
                lines.append(f"{name},p[{i}.{j}],{table.joint[i, j]!r}")
        if (k, l) == (2, 2):
            den = table.joint[1, 0] * table.joint[0, 1]
            if den != 0.0:
                orv = table.joint[1, 1] * table.joint[0, 0] / den
                lines.append(f"{name},odds_ratio,{orv!r}")
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    _log(f"wrote {len(names)} estimator table(s) to {args.out}")
    return 0


def _apply_threads(config, args):
    if args.threads is not None:
        object.__setattr__(config, "threads", args.threads)
    return config


def _cmd_simulate_points(args) -> int:
    config = _apply_threads(load_study_config(args.config), args)
    _log(f"seed: {config.seed}")
    if args.emit_masked:
        masked = replicate_masked_sample(config, args.emit_replicate)
        save_dataset(masked.masked, args.emit_masked)
        manifest = Path(str(args.emit_masked) + ".schema.json")
        extra = json.loads(manifest.read_text(encoding="utf-8"))
        extra["impute_streams"] = {
            "rhdi": [args.emit_replicate, 2],
            "jhdi": [args.emit_replicate, 3],
            "bhdi": [args.emit_replicate, 4],
        }
        extra["seed"] = config.seed
        manifest.write_text(json.dumps(extra, indent=2) + "\n", encoding="utf-8")
        _log(f"wrote masked replicate {args.emit_replicate} to {args.emit_masked}")
        if not args.out:
            return 0
    if not args.out:
        raise DataError("--out is required unless only --emit-masked is requested")
    report = run_point_study(config)
    report.save(args.out)
    _log(f"wrote point study report to {args.out}")
    return 0


def _cmd_simulate_variance(args) -> int:
    config = _apply_threads(load_study_config(args.config), args)
    _log(f"seed: {config.seed}")
    report = run_variance_study(config)
    report.save(args.out)
    _log(f"wrote variance study report to {args.out}")
    return 0


def _cmd_bootstrap_var(args) -> int:
    data = _load_input(args)
    seed = _resolve_seed(args.seed)
    config = BootstrapConfig(replicates=args.replicates,
                             sample_size=args.sample_size,
                             alpha=args.alpha)
    result = bootstrap_variance(data, config, RngStream(seed))
    payload = {
        "variances": result.variances,
        "intervals": {},
        "replicates": result.n_replicates,
        "dropped_replicates": result.n_dropped,
        "odds_ratio_undefined_replicates": result.n_or_undefined,
        "unreliable": result.unreliable,
        "alpha": args.alpha,
        "seed": seed,
    }
    for param in result.statistics:
        lo, hi = result.percentile_interval(param, args.alpha)
        payload["intervals"][param] = [lo, hi]
    Path(args.out).write_text(json.dumps(payload, indent=2) + "\n",
                              encoding="utf-8")
    _log(f"wrote bootstrap variance estimates to {args.out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="jointimpute",
                     description="Joint hot-deck imputation for categorical "
                                 "survey variables")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("popgen", help="generate a synthetic finite population")
    p.add_argument("--spec", required=True,
                   help="population spec JSON, or the name 'benchmark'")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=_cmd_popgen)

    p = sub.add_parser("impute", help="impute missing values in a dataset")
    p.add_argument("--method", required=True, choices=sorted(_IMPUTERS))
    p.add_argument("--in", dest="infile", required=True, help="input CSV")
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--flags-out", default=None,
                   help="per-unit imputation-flag CSV (+ diagnostics sidecar)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--stream-id", default="0",
                   help="comma-separated stream key (advanced; default 0)")
    p.add_argument("--schema", default=None, help="schema JSON path")
    p.add_argument("--population-size", type=int, default=None)
    p.set_defaults(func=_cmd_impute)

    p = sub.add_parser("estimate", help="evaluate estimator families on a dataset")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--estimators", default="auto",
                   help="comma list of ht,cc,acc,ac,aac,tilde (default: auto)")
    p.add_argument("--schema", default=None)
    p.add_argument("--population-size", type=int, default=None)
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("simulate-points", help="run the point-estimator study")
    p.add_argument("--config", required=True, help="study config JSON")
    p.add_argument("--out", default=None, help="report path (.csv or .json)")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--emit-masked", default=None,
                   help="developer flag: write one replicate's masked sample")
    p.add_argument("--emit-replicate", type=int, default=0)
    p.set_defaults(func=_cmd_simulate_points)

    p = sub.add_parser("simulate-variance", help="run the variance study")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=_cmd_simulate_variance)

    p = sub.add_parser("bootstrap-var",
                       help="bootstrap-weight variance of the imputed estimators")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--replicates", type=int, required=True)
    p.add_argument("--alpha", type=float, default=0.025)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--sample-size", type=int, default=None,
                   help="bootstrap resample size (default: n)")
    p.add_argument("--out", required=True, help="output JSON")
    p.add_argument("--schema", default=None)
    p.add_argument("--population-size", type=int, default=None)
    p.set_defaults(func=_cmd_bootstrap_var)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except DataError as exc:
        _log(f"error: {exc}")
        return 1
    except JointImputeError as exc:
        _log(f"failure: {exc}")
        return 2
    except Exception as exc:  # noqa: BLE001 — contract: runtime failure exits 2
        _log(f"unexpected failure: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
