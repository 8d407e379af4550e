"""Exhaustive and size-threshold group search, and the shared result type."""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .exceptions import ConfigError, SearchFailedError
from .groupspace import GroupIndex, GroupKey, SizeFilter, enumerate_valid_groups, key_labels
from .metrics import MetricId, UserMetricTable


def compute_uf(mean_a: float, mean_d: float) -> float:
    return abs(mean_a - mean_d)


def formula_budget(n_users: int, n_groups: int) -> float:
    """Fixed testing time in seconds: 0.005 * (N_users + N_groups)."""
    return 0.005 * (n_users + n_groups)


class Deadline:
    """Wall-clock cap checked between group evaluations (never mid-evaluation)."""

    def __init__(self, seconds: float | None):
        if seconds is not None and seconds <= 0:
            raise ConfigError(f"budget must be positive, got {seconds}")
        self.seconds = seconds
        self.start = time.perf_counter()
        self.expired = False

    def check(self) -> bool:
        if self.seconds is not None and not self.expired:
            self.expired = time.perf_counter() - self.start >= self.seconds
        return self.expired


class GroupEvaluator:
    """Computes one group's mean metric value; the unit of work every engine pays for.

    Groups that are empty, below the size filter, or have no member with a
    defined value evaluate to ``nan``.
    """

    def __init__(self, idx: GroupIndex, values: np.ndarray, min_count: int = 1):
        self.idx = idx
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != (idx.n_users,):
            raise ConfigError("metric values must align with the indexed users")
        self.min_count = min_count
        self.n_calls = 0

    def __call__(self, key: GroupKey) -> tuple[float, int]:
        self.n_calls += 1
        members = self.idx.groups.get(key)
        if members is None or len(members) < self.min_count:
            return math.nan, 0 if members is None else len(members)
        vals = self.values[members]
        vals = vals[~np.isnan(vals)]
        if vals.size == 0:
            return math.nan, len(members)
        return float(vals.mean()), len(members)


@dataclass(frozen=True)
class GroupStat:
    key: GroupKey
    mean: float
    size: int

    def to_dict(self, idx: GroupIndex | None = None, schema=None) -> dict:
        d = {"key": list(self.key), "mean": self.mean, "size": self.size}
        if idx is not None:
            d["labels"] = key_labels(self.key, idx, schema)
        return d


def rank_groups(group_means: Mapping[GroupKey, tuple[float, int]], higher_is_better: bool, n: int | None,
                advantaged: bool) -> list[GroupStat]:
    """Best-first (``advantaged``) or worst-first ordering; equal means fall back to key order."""
    sign = -1.0 if higher_is_better == advantaged else 1.0
    items = ((sign * m, key, s) for key, (m, s) in group_means.items() if not math.isnan(m))
    picked = heapq.nsmallest(n, items) if n is not None else sorted(items)
    return [GroupStat(key, sign * sm, s) for sm, key, s in picked]


@dataclass
class SearchResult:
    metric: str
    higher_is_better: bool
    best: GroupStat
    worst: GroupStat
    uf: float
    groups_evaluated: int
    wall_time: float
    top_advantaged: list[GroupStat]
    top_disadvantaged: list[GroupStat]
    engine: str = "brute"
    truncated: bool = False
    # every defined group mean the engine saw: the pool mitigation picks targets from
    group_means: dict[GroupKey, tuple[float, int]] = field(default_factory=dict, repr=False)
    extra: dict = field(default_factory=dict)
    # dpso only: the shared memo and per-iteration gbest records
    infobase: object = field(default=None, repr=False)
    trace: list = field(default_factory=list, repr=False)

    def to_dict(self, idx: GroupIndex | None = None, schema=None) -> dict:
        out = {
            "engine": self.engine,
            "uf": self.uf,
            "best": self.best.to_dict(idx, schema),
            "worst": self.worst.to_dict(idx, schema),
            "top_advantaged": [g.to_dict(idx, schema) for g in self.top_advantaged],
            "top_disadvantaged": [g.to_dict(idx, schema) for g in self.top_disadvantaged],
            "groups_evaluated": self.groups_evaluated,
            "truncated": self.truncated,
            "wall_time_s": self.wall_time,
        }
        out.update(self.extra)
        return out


def build_result(group_means, *, metric: str, higher_is_better: bool, top_n: int, groups_evaluated: int,
                 wall_time: float, engine: str, truncated: bool = False, min_groups: int = 2) -> SearchResult:
    adv = rank_groups(group_means, higher_is_better, max(top_n, 1), advantaged=True)
    dis = rank_groups(group_means, higher_is_better, max(top_n, 1), advantaged=False)
    n_defined = sum(1 for m, _ in group_means.values() if not math.isnan(m))
    if n_defined < min_groups:
        raise SearchFailedError(
            f"{engine}: {n_defined} group(s) with a defined {metric} mean; need at least {min_groups}"
        )
    best, worst = adv[0], dis[0]
    return SearchResult(
        metric=metric,
        higher_is_better=higher_is_better,
        best=best,
        worst=worst,
        uf=compute_uf(best.mean, worst.mean),
        groups_evaluated=groups_evaluated,
        wall_time=wall_time,
        top_advantaged=adv[:top_n],
        top_disadvantaged=dis[:top_n],
        engine=engine,
        truncated=truncated,
        group_means={k: v for k, v in group_means.items() if not math.isnan(v[0])},
    )


def _resolve_metric(table: UserMetricTable | np.ndarray, metric) -> tuple[np.ndarray, str, bool]:
    if isinstance(table, UserMetricTable):
        m = MetricId.parse(metric)
        return table.column(m), m.value, m.higher_is_better
    # raw values: ``metric`` is (name, higher_is_better)
    name, hib = metric
    return np.asarray(table, dtype=float), name, hib


def _enumerate(idx, values, keys, *, metric, hib, min_count, top_n, budget, seed, engine):
    t0 = time.perf_counter()
    deadline = Deadline(budget)
    keys = list(keys)
    if budget is not None:
        # under a time cap exhaustive enumeration becomes random search over group order
        order = np.random.default_rng(seed).permutation(len(keys))
        keys = [keys[i] for i in order]
    evaluate = GroupEvaluator(idx, values, min_count)
    means = {}
    for key in keys:
        if deadline.check():
            break
        means[key] = evaluate(key)
    wall = time.perf_counter() - t0
    return build_result(means, metric=metric, higher_is_better=hib, top_n=top_n,
                        groups_evaluated=evaluate.n_calls, wall_time=wall, engine=engine,
                        truncated=deadline.expired and len(means) < len(keys))


def brute_force_search(idx: GroupIndex, table, metric, size_filter: SizeFilter = SizeFilter(),
                       top_n: int = 10, budget: float | None = None, seed: int = 0) -> SearchResult:
    """Evaluate every valid group once and return the exact maximum-gap pair."""
    values, name, hib = _resolve_metric(table, metric)
    keys = enumerate_valid_groups(idx, size_filter)
    return _enumerate(idx, values, keys, metric=name, hib=hib, min_count=size_filter.min_count(idx.n_users),
                      top_n=top_n, budget=budget, seed=seed, engine="brute")


def threshold_min_count(theta: float, n_users: int) -> int:
    return math.ceil(theta / 100.0 * n_users)


def threshold_search(idx: GroupIndex, table, metric, theta: float, size_filter: SizeFilter = SizeFilter(),
                     top_n: int = 10, budget: float | None = None, seed: int = 0) -> SearchResult:
    """Exhaustive search restricted to groups holding at least ``theta`` percent of users."""
    if theta < 0:
        raise ConfigError(f"theta must be >= 0, got {theta}")
    values, name, hib = _resolve_metric(table, metric)
    min_count = max(size_filter.min_count(idx.n_users), threshold_min_count(theta, idx.n_users))
    keys = [k for k in enumerate_valid_groups(idx, size_filter) if len(idx.groups[k]) >= min_count]
    res = _enumerate(idx, values, keys, metric=name, hib=hib, min_count=min_count, top_n=top_n,
                     budget=budget, seed=seed, engine="threshold")
    res.extra["theta"] = theta
    return res


def search_values(engine: str, idx: GroupIndex, table, metric, **kw) -> SearchResult:
    """Dispatch by engine name (``brute``, ``threshold`` or ``dpso``)."""
    if engine == "brute":
        return brute_force_search(idx, table, metric, **kw)
    if engine == "threshold":
        return threshold_search(idx, table, metric, **kw)
    if engine == "dpso":
        from .dpso import run_dpso

        return run_dpso(idx, table, metric, **kw)
    raise ConfigError(f"unknown engine {engine!r}")


def describe(result: SearchResult) -> str:
    return (f"{result.metric}: uf={result.uf:.4f} best={result.best.key}({result.best.mean:.4f}, n={result.best.size}) "
            f"worst={result.worst.key}({result.worst.mean:.4f}, n={result.worst.size}) "
            f"evaluated={result.groups_evaluated}")

