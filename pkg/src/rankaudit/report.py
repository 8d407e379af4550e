"""Run configuration, the end-to-end test pipeline, and cross-run analysis."""

from __future__ import annotations

import contextlib
import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .catalog import Dataset, dataset_paths, load_dataset
from .dpso import SwarmConfig, run_dpso
from .exceptions import ConfigError, DataError, RankAuditError
from .groupspace import GroupIndex, SizeFilter, build_index, key_labels
from .metrics import ALL_METRICS, MetricId, UserMetricTable, compute_table, read_metric_csv
from .mitigation import MitigationPlan, default_strategy, evaluate_mitigation, select_worst_groups
from .search import SearchResult, brute_force_search, formula_budget, threshold_search

ENGINES = ("brute", "threshold", "dpso")
# keys holding timings; everything else in a report is reproducible for a fixed seed
WALL_TIME_KEYS = ("wall_time_s", "stage_times_s")


@dataclass
class RunConfig:
    users: str | None = None
    items: str | None = None
    schema: str | None = None
    metrics_csv: str | None = None
    attributes: list[str] | None = None
    metrics: list[str] = field(default_factory=lambda: [m.value for m in ALL_METRICS])
    engine: str = "dpso"
    theta: float = 0.01
    swarm: SwarmConfig = field(default_factory=SwarmConfig)
    min_fraction: float = 1e-5
    top_n: int = 10
    budget: float | str | None = None
    seed: int = 0
    with_brute: bool = False
    out: str | None = None
    trace: str | None = None

    def __post_init__(self):
        if isinstance(self.swarm, dict):
            self.swarm = SwarmConfig(**self.swarm)
        if self.engine not in ENGINES:
            raise ConfigError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        try:
            self.metrics = [MetricId.parse(m).value for m in self.metrics]
        except DataError as exc:
            raise ConfigError(str(exc)) from None
        if not self.metrics:
            raise ConfigError("no metric selected")
        if self.theta < 0:
            raise ConfigError("theta must be >= 0")
        if self.top_n < 1:
            raise ConfigError("top_n must be >= 1")
        self.budget = parse_budget(self.budget)
        SizeFilter(self.min_fraction)

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "swarm" in obj:
            obj = dict(obj, swarm=SwarmConfig(**obj["swarm"]))
        return cls(**obj)

    def semantic(self) -> dict:
        """Every field that can change a report body (output paths excluded)."""
        d = asdict(self)
        for k in ("out", "trace"):
            d.pop(k)
        if self.engine != "threshold":
            d.pop("theta")
        if self.engine == "dpso":
            # the run seed drives the swarm
            d["swarm"].pop("seed")
        else:
            d.pop("swarm")
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.semantic(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def parse_budget(value) -> float | str | None:
    if value is None or value == "none":
        return None
    if value == "paper":
        return "paper"
    try:
        seconds = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"budget must be 'none', 'paper' or seconds, got {value!r}") from None
    if not seconds > 0:
        raise ConfigError("budget seconds must be > 0")
    return seconds


@contextlib.contextmanager
def stage(name: str, times: dict | None = None):
    """Prefix any library error raised inside with the pipeline stage name."""
    t0 = time.perf_counter()
    try:
        yield
    except RankAuditError as exc:
        raise type(exc)(f"[{name}] {exc}") from exc
    except OSError as exc:
        raise DataError(f"[{name}] {exc}") from exc
    finally:
        if times is not None:
            times[name] = time.perf_counter() - t0


@dataclass
class FairnessReport:
    meta: dict
    results: dict[str, SearchResult]
    accuracy: dict | None = None
    mitigation: dict | None = None
    dataset: Dataset | None = field(default=None, repr=False)
    index: GroupIndex | None = field(default=None, repr=False)
    table: UserMetricTable | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        schema = self.dataset.schema if self.dataset is not None else None
        return {
            "meta": self.meta,
            "results": {m: r.to_dict(self.index, schema) for m, r in self.results.items()},
            "mitigation": self.mitigation,
            "accuracy": self.accuracy,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def render_text(self) -> str:
        lines = [f"engine={self.meta['engine']} users={self.meta['n_users']} groups={self.meta['n_groups']}"]
        lines.append(f"{'metric':<6} {'uf':>8} {'best mean':>10} {'worst mean':>10} {'evaluated':>10}  best / worst")
        for m, r in self.results.items():
            lines.append(f"{m:<6} {r.uf:>8.4f} {r.best.mean:>10.4f} {r.worst.mean:>10.4f} "
                         f"{r.groups_evaluated:>10}  {r.best.key} / {r.worst.key}")
        return "\n".join(lines)


def strip_wall_times(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: strip_wall_times(v) for k, v in obj.items() if k not in WALL_TIME_KEYS}
    if isinstance(obj, list):
        return [strip_wall_times(v) for v in obj]
    return obj


def _paths(cfg: RunConfig):
    if not (cfg.users and cfg.items and cfg.schema):
        raise ConfigError("users, items and schema paths are all required")
    return cfg.users, cfg.items, cfg.schema


def prepare(cfg: RunConfig, times: dict | None = None):
    with stage("load", times):
        ds = load_dataset(*_paths(cfg))
    with stage("metrics", times):
        if cfg.metrics_csv:
            table = read_metric_csv(cfg.metrics_csv, [u.user_id for u in ds.users])
        else:
            table = compute_table(ds, cfg.metrics)
    with stage("index", times):
        idx = build_index(ds, cfg.attributes)
    return ds, table, idx


def resolve_budget(cfg: RunConfig, idx: GroupIndex) -> float | None:
    if cfg.budget == "paper":
        return formula_budget(idx.n_users, idx.n_groups)
    return cfg.budget


def run_engine(engine: str, idx: GroupIndex, table, metric, cfg: RunConfig, budget=None) -> SearchResult:
    sf = SizeFilter(cfg.min_fraction)
    if engine == "brute":
        return brute_force_search(idx, table, metric, sf, cfg.top_n, budget, cfg.seed)
    if engine == "threshold":
        return threshold_search(idx, table, metric, cfg.theta, sf, cfg.top_n, budget, cfg.seed)
    return run_dpso(idx, table, metric, sf, cfg.swarm, cfg.top_n, budget, seed=cfg.seed)


def accuracy_ratio(uf_engine: float, uf_brute: float) -> float:
    if uf_brute == 0:
        return 1.0
    return uf_engine / uf_brute


def run_test(cfg: RunConfig, prepared=None) -> FairnessReport:
    """load -> per-user metrics -> group index -> one search per metric -> report."""
    t0 = time.perf_counter()
    times: dict[str, float] = {}
    ds, table, idx = prepared if prepared is not None else prepare(cfg, times)
    budget = resolve_budget(cfg, idx)
    results: dict[str, SearchResult] = {}
    accuracy = {} if cfg.with_brute else None
    trace_fh = open(cfg.trace, "w") if cfg.trace else None
    try:
        for m in cfg.metrics:
            with stage(f"search:{m}", times):
                res = run_engine(cfg.engine, idx, table, m, cfg, budget)
                results[m] = res
                if trace_fh is not None:
                    for rec in res.trace:
                        trace_fh.write(json.dumps({"metric": m, **rec}) + "\n")
                if accuracy is not None:
                    ref = res if cfg.engine == "brute" else run_engine("brute", idx, table, m, cfg)
                    accuracy[m] = {
                        "uf_engine": res.uf,
                        "uf_brute": ref.uf,
                        "accuracy": accuracy_ratio(res.uf, ref.uf),
                        "groups_evaluated_engine": res.groups_evaluated,
                        "groups_evaluated_brute": ref.groups_evaluated,
                    }
    finally:
        if trace_fh is not None:
            trace_fh.close()
    sf = SizeFilter(cfg.min_fraction)
    meta = {
        "tool_version": __version__,
        "engine": cfg.engine,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "metrics": list(cfg.metrics),
        "attributes": idx.attribute_names,
        "n_users": idx.n_users,
        "n_groups": idx.n_groups,
        "space_size": idx.space_size,
        "min_fraction": cfg.min_fraction,
        "min_count": sf.min_count(idx.n_users),
        "top_n": cfg.top_n,
        "budget_s": budget,
        "groups_evaluated": {m: r.groups_evaluated for m, r in results.items()},
        "stage_times_s": times,
        "wall_time_s": time.perf_counter() - t0,
    }
    if cfg.engine == "threshold":
        meta["theta"] = cfg.theta
    if cfg.engine == "dpso":
        meta["swarm"] = asdict(cfg.swarm) | {"seed": cfg.seed}
    return FairnessReport(meta, results, accuracy, None, ds, idx, table)


def run_mitigation(cfg: RunConfig, fraction: float = 0.10, strategy: str | None = None, lam: float = 0.5,
                   users_out: str | None = None) -> FairnessReport:
    """Test, then re-rank the worst ``fraction`` of evaluated groups for each tested metric.

    ``users_out`` receives the re-ranked users file; it needs a single metric.
    """
    if users_out and len(cfg.metrics) != 1:
        raise ConfigError("writing re-ranked users needs exactly one metric")
    ds, table, idx = prepare(RunConfig(**{**cfg.__dict__, "metrics": [m.value for m in ALL_METRICS]}))
    report = run_test(cfg, (ds, table, idx))
    blocks = {}
    current = ds
    for m, res in report.results.items():
        with stage(f"mitigate:{m}"):
            targets = select_worst_groups(res, fraction)
            plan = MitigationPlan(m, targets, strategy or default_strategy(m), fraction, lam)
            mit = evaluate_mitigation(ds, plan, table, idx, SizeFilter(cfg.min_fraction))
            blocks[m] = mit.to_dict()
            blocks[m]["groups"] = [dict(g, labels=_labels(g["key"], idx, ds)) for g in mit.groups]
            current = mit.dataset
    report.mitigation = blocks
    if users_out:
        with open(users_out, "w") as fh:
            for u in current.users:
                fh.write(json.dumps(u.to_dict(), separators=(",", ":")) + "\n")
    return report


def _labels(key, idx, ds):
    return key_labels(key, idx, ds.schema)


COMPARE_COLUMNS = ["metric", "engine", "uf", "uf_brute", "accuracy", "groups_evaluated", "groups_evaluated_brute",
                   "eval_ratio", "wall_time_s", "wall_time_brute_s", "truncated"]


def compare_engines(cfg: RunConfig, variants: Sequence[tuple[str, dict]]) -> list[dict]:
    """Accuracy and cost of each engine variant relative to exhaustive search.

    ``variants`` is a list of ``(label, overrides)``; overrides are RunConfig
    fields (``engine``, ``theta``, ``swarm``, ``budget`` ...).
    """
    ds, table, idx = prepare(cfg)
    rows = []
    for m in cfg.metrics:
        ref = run_engine("brute", idx, table, m, cfg)
        for label, overrides in variants:
            vcfg = RunConfig(**{**cfg.__dict__, **overrides})
            res = run_engine(vcfg.engine, idx, table, m, vcfg, resolve_budget(vcfg, idx))
            rows.append({
                "metric": m,
                "engine": label,
                "uf": res.uf,
                "uf_brute": ref.uf,
                "accuracy": accuracy_ratio(res.uf, ref.uf),
                "groups_evaluated": res.groups_evaluated,
                "groups_evaluated_brute": ref.groups_evaluated,
                "eval_ratio": res.groups_evaluated / ref.groups_evaluated,
                "wall_time_s": res.wall_time,
                "wall_time_brute_s": ref.wall_time,
                "truncated": res.truncated,
            })
    return rows


def write_csv(rows: list[dict], dest, columns=COMPARE_COLUMNS) -> None:
    """Write rows to a path or an open text stream."""
    if hasattr(dest, "write"):
        w = csv.DictWriter(dest, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return
    with open(dest, "w", newline="") as fh:
        write_csv(rows, fh, columns)


def metric_correlation(reports: Sequence[dict]) -> tuple[list[str], list[list[float | None]]]:
    """Pearson correlation of UF values across reports, for every metric pair.

    Entries involving a constant UF vector are ``None``.
    """
    if len(reports) < 3:
        raise ConfigError("metric correlation needs at least three reports")
    metric_sets = [tuple(sorted(r["results"])) for r in reports]
    if len(set(metric_sets)) != 1:
        raise ConfigError(f"reports cover different metric sets: {sorted(set(metric_sets))}")
    metrics = list(metric_sets[0])
    uf = np.array([[r["results"][m]["uf"] for r in reports] for m in metrics], dtype=float)
    n = len(metrics)
    out: list[list[float | None]] = [[None] * n for _ in range(n)]
    centred = uf - uf.mean(axis=1, keepdims=True)
    norms = np.sqrt((centred ** 2).sum(axis=1))
    for i in range(n):
        for j in range(n):
            if norms[i] == 0 or norms[j] == 0:
                continue
            r = float(centred[i] @ centred[j] / (norms[i] * norms[j]))
            out[i][j] = max(-1.0, min(1.0, r))
    return metrics, out


def load_report(path) -> dict:
    return json.loads(Path(path).read_text())


def config_from_file(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def data_paths(data_dir) -> dict:
    users, items, schema = dataset_paths(data_dir)
    return {"users": str(users), "items": str(items), "schema": str(schema)}


def isclose_report(a: dict, b: dict) -> bool:
    return strip_wall_times(a) == strip_wall_times(b)


def nan_to_none(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x
