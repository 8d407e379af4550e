"""Command-line entry point: ``rankaudit {gen,metrics,test,compare,mitigate,correlate}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 search failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

from .dpso import SwarmConfig
from .exceptions import ConfigError, DataError, RankAuditError
from .report import (
    ENGINES,
    RunConfig,
    compare_engines,
    config_from_file,
    data_paths,
    load_report,
    metric_correlation,
    prepare,
    run_mitigation,
    run_test,
    stage,
    write_csv,
)
from .syngen import SynConfig, generate, write_synthetic

SWARM_FLAGS = {"alpha": "alpha", "c1": "c1", "c2": "c2", "vstar": "v_star", "epsilon": "epsilon",
               "iters": "n_iterations", "particles": "n_particles"}


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_data_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data")
    g.add_argument("--data", help="directory holding users.jsonl, items.csv and schema.json")
    g.add_argument("--users")
    g.add_argument("--items")
    g.add_argument("--schema")
    g.add_argument("--metrics-csv", help="precomputed per-user values (user_id,metric,value)")


def _add_run_args(p: argparse.ArgumentParser) -> None:
    _add_data_args(p)
    g = p.add_argument_group("search")
    g.add_argument("--config", help="JSON file with run settings; explicit flags win")
    g.add_argument("--engine", choices=ENGINES)
    g.add_argument("--metric", action="append", help="metric to audit (repeatable; default all)")
    g.add_argument("--attrs", help="comma-separated sensitive attributes to group by (default all)")
    g.add_argument("--theta", type=float, help="threshold engine: minimum group size in percent of users")
    g.add_argument("--epsilon", type=float, help="particles per swarm as a fraction of non-empty groups")
    g.add_argument("--particles", type=int, help="particles per swarm (overrides --epsilon)")
    g.add_argument("--iters", type=int)
    g.add_argument("--alpha", type=float)
    g.add_argument("--c1", type=float)
    g.add_argument("--c2", type=float)
    g.add_argument("--vstar", type=float)
    g.add_argument("--min-fraction", type=float)
    g.add_argument("--budget", help="none, paper, or a number of seconds")
    g.add_argument("--seed", type=int)
    g.add_argument("--top-n", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rankaudit",
                                     description="Group-fairness testing for ranked recommendation outputs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset with a planted best/worst group pair")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-users", type=int, default=2000)
    p.add_argument("--values", type=_int_list, default=(2, 7, 21), help="values per attribute, e.g. 2,7,21")
    p.add_argument("--skew", type=float, default=0.3)
    p.add_argument("--metric", default="auc")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--pool-size", type=int, default=50)
    p.add_argument("--basin", type=float, default=0.15)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("metrics", help="compute per-user metric values to CSV")
    _add_data_args(p)
    p.add_argument("--metric", action="append")
    p.add_argument("--out", required=True)

    p = sub.add_parser("test", help="find the best- and worst-treated groups per metric")
    _add_run_args(p)
    p.add_argument("--with-brute", action="store_true", help="add an accuracy block against exhaustive search")
    p.add_argument("--trace", help="JSONL file receiving per-iteration swarm records")
    p.add_argument("--text", action="store_true", help="print a summary table")
    p.add_argument("--out", help="report JSON path (default stdout)")

    p = sub.add_parser("compare", help="accuracy and cost of engines relative to exhaustive search")
    _add_run_args(p)
    p.add_argument("--engines", default="threshold,dpso", help="comma-separated engines to compare")
    p.add_argument("--out", help="CSV path (default stdout)")

    p = sub.add_parser("mitigate", help="re-rank users in the worst groups and report before/after")
    _add_run_args(p)
    p.add_argument("--fraction", type=float, default=0.10, help="share of evaluated groups to target")
    p.add_argument("--strategy", choices=("diversify", "popularity_calibrate"))
    p.add_argument("--lam", type=float, default=0.5, help="diversity trade-off")
    p.add_argument("--users-out", help="write the re-ranked users file (single metric only)")
    p.add_argument("--out", help="report JSON path (default stdout)")

    p = sub.add_parser("correlate", help="pairwise Pearson correlation of UF across reports")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out", help="JSON path (default stdout)")
    return parser


def _data_settings(args) -> dict:
    out = {}
    if args.data:
        out.update(data_paths(args.data))
    for name in ("users", "items", "schema", "metrics_csv"):
        if getattr(args, name, None):
            out[name] = getattr(args, name)
    return out


def run_config(args) -> RunConfig:
    """Defaults, then the ``--config`` file, then explicit flags."""
    settings = config_from_file(args.config) if getattr(args, "config", None) else {}
    swarm = dict(settings.pop("swarm", {}))
    settings.update(_data_settings(args))
    if args.engine:
        settings["engine"] = args.engine
    if args.metric:
        settings["metrics"] = args.metric
    if args.attrs:
        settings["attributes"] = [a.strip() for a in args.attrs.split(",") if a.strip()]
    for flag, key in (("theta", "theta"), ("min_fraction", "min_fraction"), ("budget", "budget"),
                      ("seed", "seed"), ("top_n", "top_n")):
        if getattr(args, flag) is not None:
            settings[key] = getattr(args, flag)
    for flag, key in SWARM_FLAGS.items():
        if getattr(args, flag) is not None:
            swarm[key] = getattr(args, flag)
    known = {f.name for f in fields(SwarmConfig)}
    if set(swarm) - known:
        raise ConfigError(f"unknown swarm keys: {sorted(set(swarm) - known)}")
    settings["swarm"] = swarm
    for name in ("with_brute", "trace", "out"):
        if getattr(args, name, None):
            settings[name] = getattr(args, name)
    return RunConfig.from_dict(settings)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def cmd_gen(args) -> None:
    cfg = SynConfig(n_users=args.n_users, n_values=args.values, skew=args.skew, metric=args.metric, k=args.k,
                    pool_size=args.pool_size, basin=args.basin, noise=args.noise, seed=args.seed)
    ds, gt = generate(cfg)
    write_synthetic(ds, gt, args.out)
    print(json.dumps(gt.to_dict()))


def cmd_metrics(args) -> None:
    cfg = RunConfig(**_data_settings(args), metrics=args.metric or RunConfig().metrics)
    if cfg.metrics_csv:
        raise ConfigError("--metrics-csv makes no sense for the metrics command")
    _, table, _ = prepare(cfg)
    with stage("write"):
        table.to_csv(args.out)


def cmd_test(args) -> None:
    cfg = run_config(args)
    report = run_test(cfg)
    if args.text:
        print(report.render_text(), file=sys.stderr if not args.out else sys.stdout)
    _emit(report.to_json(), args.out)


def cmd_compare(args) -> None:
    cfg = run_config(args)
    variants = []
    for name in [e.strip() for e in args.engines.split(",") if e.strip()]:
        if name not in ENGINES:
            raise ConfigError(f"unknown engine {name!r}")
        variants.append((name, {"engine": name}))
    rows = compare_engines(cfg, variants)
    write_csv(rows, args.out or sys.stdout)


def cmd_mitigate(args) -> None:
    cfg = run_config(args)
    report = run_mitigation(cfg, args.fraction, args.strategy, args.lam, args.users_out)
    _emit(report.to_json(), args.out)


def cmd_correlate(args) -> None:
    reports = []
    for path in args.reports:
        try:
            reports.append(load_report(path))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read report {path}: {exc}") from exc
    metrics, matrix = metric_correlation(reports)
    _emit(json.dumps({"metrics": metrics, "pearson": matrix, "n_reports": len(reports)}, indent=2), args.out)


COMMANDS = {"gen": cmd_gen, "metrics": cmd_metrics, "test": cmd_test, "compare": cmd_compare,
            "mitigate": cmd_mitigate, "correlate": cmd_correlate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except RankAuditError as exc:
        print(f"rankaudit {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
