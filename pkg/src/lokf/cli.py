"""Command-line front end.

Three subcommands:

* ``lokf simulate``            - run a simulation campaign from a config
                                 file (TOML/JSON), writing per-replicate
                                 and aggregate CSVs plus a resolved-config
                                 snapshot;
* ``lokf analyze``             - apply one method to a user-supplied CSV
                                 dataset with externally built knockoffs;
* ``lokf diagnose-knockoffs``  - swap-symmetry diagnostics per column.

Exit codes: 0 success, 1 replicate failures (campaign still completed),
2 invalid configuration or input.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, replace

import numpy as np

from .config import (KNOWN_METHODS, ConfigError, RunConfig, config_from_dict,
                     load_config, snapshot_json)
from .data import DatasetFormatError, read_dataset_csv
from .filters import write_discoveries_csv
from .knockoffs import exchangeability_diagnostic
from .robust import RobustDiscoverySet, write_robust_csv
from .simlab import (aggregate_records, run_experiment, run_method,
                     write_aggregate_csv, write_records_csv, ScenarioData,
                     TruthModel)

_OVERRIDE_FIELDS = {
    "alpha": float,
    "replicates": int,
    "master_seed": int,
    "output_dir": str,
    "threads": int,
    "scenario": str,
    "g_max": int,
    "c_main": float,
    "zeta_offset": float,
    "lambda_grid_size": int,
    "cv_folds": int,
    "min_subgroup": int,
    "cloak_prob": float,
    "pc_c": float,
}


def _add_simulate_flags(sub):
    sub.add_argument("--config", help="TOML or JSON config file")
    for name, typ in _OVERRIDE_FIELDS.items():
        sub.add_argument(f"--{name.replace('_', '-')}", type=typ,
                         dest=name, default=None)
    sub.add_argument("--methods", default=None,
                     help="comma-separated method names")
    sub.add_argument("--n", default=None,
                     help="comma-separated sample sizes")
    sub.add_argument("--xi-grid", dest="xi_grid", default=None,
                     help="comma-separated xi values")
    sub.add_argument("--pc-r-rule", dest="pc_r_rule", default=None,
                     help="'full' or a positive integer")


def _overrides_from_args(args) -> dict:
    out = {}
    for name in _OVERRIDE_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            out[name] = value
    if args.methods is not None:
        out["methods"] = tuple(m.strip() for m in args.methods.split(","))
    if args.n is not None:
        out["n"] = tuple(int(v) for v in args.n.split(","))
    if getattr(args, "xi_grid", None) is not None:
        out["xi_grid"] = tuple(float(v) for v in args.xi_grid.split(","))
    if getattr(args, "pc_r_rule", None) is not None:
        raw = args.pc_r_rule
        out["pc_r_rule"] = raw if raw == "full" else int(raw)
    return out


def _load_with_overrides(args) -> RunConfig:
    base = {}
    if args.config:
        base = asdict(load_config(args.config))
    base.update(_overrides_from_args(args))
    return config_from_dict(base)


def cmd_simulate(args) -> int:
    try:
        cfg = _load_with_overrides(args)
    except ConfigError as exc:
        for msg in exc.errors:
            print(f"config error: {msg}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    threads = cfg.threads
    if threads is None:
        threads = int(os.environ.get("LOKF_THREADS", "1"))
    cfg = replace(cfg, threads=threads)
    os.makedirs(cfg.output_dir, exist_ok=True)
    records, failures = run_experiment(cfg, threads=threads)
    write_records_csv(records,
                      os.path.join(cfg.output_dir, "replicates.csv"))
    write_aggregate_csv(aggregate_records(records),
                        os.path.join(cfg.output_dir, "aggregate.csv"))
    with open(os.path.join(cfg.output_dir, "config_snapshot.json"),
              "w") as fh:
        fh.write(snapshot_json(cfg))
        fh.write("\n")
    for method, n, rep, msg in failures:
        print(f"replicate failure: method={method} n={n} replicate={rep}: "
              f"{msg}", file=sys.stderr)
    print(f"wrote {len(records)} records to {cfg.output_dir}")
    return 1 if failures else 0


def _partition_json(disc) -> list:
    part = disc.partition
    if part is None:
        return []
    return [
        {"variable": j + 1,
         "covariates": [c + 1 for c in part.rules[j]],
         "subgroups": part.width(j)}
        for j in range(part.p)
    ]


def cmd_analyze(args) -> int:
    if args.method not in KNOWN_METHODS:
        print(f"config error: method: unknown method {args.method!r}",
              file=sys.stderr)
        return 2
    try:
        bundle = read_dataset_csv(args.dataset)
    except (DatasetFormatError, FileNotFoundError) as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return 2
    base = {}
    if args.config:
        try:
            base = asdict(load_config(args.config))
        except ConfigError as exc:
            for msg in exc.errors:
                print(f"config error: {msg}", file=sys.stderr)
            return 2
    if args.alpha is not None:
        base["alpha"] = args.alpha
    try:
        cfg = config_from_dict(base)
    except ConfigError as exc:
        for msg in exc.errors:
            print(f"config error: {msg}", file=sys.stderr)
        return 2
    # a caller-supplied dataset has no ground truth; wrap it for dispatch
    data = ScenarioData(bundle, TruthModel(((),) * bundle.p,
                                           np.zeros(bundle.m)))
    disc = run_method(args.method, data, cfg.alpha, args.seed, cfg)
    os.makedirs(args.output_dir, exist_ok=True)
    disc_path = os.path.join(args.output_dir, "discoveries.csv")
    if isinstance(disc, RobustDiscoverySet):
        variables = np.arange(bundle.p)
        write_robust_csv(disc, variables, disc_path)
    else:
        write_discoveries_csv(disc, disc_path)
    with open(os.path.join(args.output_dir, "partition.json"), "w") as fh:
        json.dump(_partition_json(disc), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{disc.n_rejected} discoveries written to {disc_path}")
    return 0


def cmd_diagnose(args) -> int:
    try:
        bundle = read_dataset_csv(args.dataset)
    except (DatasetFormatError, FileNotFoundError) as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return 2
    if args.column is not None:
        if not 1 <= args.column <= bundle.p:
            print(f"config error: column: index {args.column} out of range "
                  f"[1, {bundle.p}]", file=sys.stderr)
            return 2
        columns = [args.column - 1]
    else:
        columns = list(range(bundle.p))
    cond = None
    if args.condition_on is not None:
        if not 1 <= args.condition_on <= bundle.m:
            print(f"config error: condition-on: index {args.condition_on} "
                  f"out of range [1, {bundle.m}]", file=sys.stderr)
            return 2
        cond = args.condition_on - 1
    rows = []
    for j in columns:
        res = exchangeability_diagnostic(bundle.x, bundle.xk, bundle.z, j,
                                         cond_index=cond, bins=args.bins)
        rows.append((j + 1, res))
    print(f"{'column':>8} {'statistic':>12} {'df':>4} {'p_value':>10} "
          f"{'bins':>5} {'skipped':>8}")
    for col, res in rows:
        print(f"{col:>8} {res.statistic:>12.4f} {res.df:>4} "
              f"{res.p_value:>10.4g} {res.n_bins:>5} {res.skipped_bins:>8}")
    if args.out:
        import csv
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["column", "statistic", "df", "p_value", "bins",
                        "skipped_bins"])
            for col, res in rows:
                w.writerow([col, repr(res.statistic), res.df,
                            repr(res.p_value), res.n_bins,
                            res.skipped_bins])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lokf",
        description="Local knockoff filters with FDR control")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a simulation campaign")
    _add_simulate_flags(sim)
    sim.set_defaults(func=cmd_simulate)

    ana = sub.add_parser("analyze", help="analyze a CSV dataset")
    ana.add_argument("dataset")
    ana.add_argument("--method", required=True)
    ana.add_argument("--alpha", type=float, default=None)
    ana.add_argument("--seed", type=int, default=0)
    ana.add_argument("--config", default=None)
    ana.add_argument("--output-dir", default="lokf-analysis")
    ana.set_defaults(func=cmd_analyze)

    diag = sub.add_parser("diagnose-knockoffs",
                          help="knockoff exchangeability diagnostics")
    diag.add_argument("dataset")
    diag.add_argument("--column", type=int, default=None,
                      help="1-based variable index (default: all)")
    diag.add_argument("--condition-on", type=int, default=None,
                      help="1-based covariate index to condition on")
    diag.add_argument("--bins", type=int, default=10)
    diag.add_argument("--out", default=None)
    diag.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
