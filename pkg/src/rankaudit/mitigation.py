"""Re-ranking mitigation for the worst-treated groups, with before/after reporting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .catalog import Candidate, Dataset, UserRecord
from .exceptions import ConfigError, DataError, SearchFailedError
from .groupspace import GroupIndex, GroupKey, SizeFilter
from .metrics import ALL_METRICS, MetricId, UserMetricTable, jaccard, update_table
from .search import SearchResult, brute_force_search, rank_groups

STRATEGIES = ("diversify", "popularity_calibrate")
NEAR_TIE = 1e-9


@dataclass
class MitigationPlan:
    metric: MetricId
    target_groups: list[GroupKey]
    strategy: str = "diversify"
    target_fraction: float = 0.10
    lam: float = 0.5

    def __post_init__(self):
        self.metric = MetricId.parse(self.metric)
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not 0.0 < self.target_fraction <= 1.0:
            raise ConfigError("target_fraction must be in (0, 1]")


def default_strategy(metric) -> str:
    return "popularity_calibrate" if MetricId.parse(metric) is MetricId.URP else "diversify"


def select_worst_groups(source: SearchResult | Mapping[GroupKey, tuple[float, int] | float], fraction: float,
                        higher_is_better: bool | None = None) -> list[GroupKey]:
    """The worst ``ceil(fraction * n)`` evaluated groups, worst first.

    ``source`` is a search result (its evaluated groups are used) or a plain
    mapping from key to mean or ``(mean, size)``.
    """
    if isinstance(source, SearchResult):
        means = source.group_means
        if higher_is_better is None:
            higher_is_better = source.higher_is_better
    else:
        means = {k: (v if isinstance(v, tuple) else (float(v), 0)) for k, v in source.items()}
    if higher_is_better is None:
        higher_is_better = True
    if not means:
        raise SearchFailedError("no evaluated groups to select from")
    if not 0.0 < fraction <= 1.0:
        raise ConfigError("fraction must be in (0, 1]")
    n = math.ceil(fraction * len(means))
    return [g.key for g in rank_groups(means, higher_is_better, n, advantaged=False)]


def rerank_diversity(u: UserRecord, ds: Dataset, lam: float = 0.5) -> tuple[Candidate, ...]:
    """Greedy MMR-style top-k: score minus ``lam`` times mean tag similarity to the picks so far."""
    pool = list(u.candidates)
    if len(pool) < u.k:
        raise DataError(f"user {u.user_id}: fewer candidates than k")
    tags = [ds.items[c.item].tags for c in pool]
    chosen = [0]
    # running sum of similarity to the chosen items, per candidate
    sim_sum = np.array([jaccard(tags[0], t) for t in tags])
    remaining = set(range(1, len(pool)))
    while len(chosen) < u.k:
        best_i, best_val = -1, -math.inf
        for i in sorted(remaining):
            val = pool[i].score - lam * sim_sum[i] / len(chosen)
            if val > best_val:
                best_i, best_val = i, val
        chosen.append(best_i)
        remaining.discard(best_i)
        sim_sum += np.array([jaccard(tags[best_i], t) for t in tags])
    return tuple(pool[i] for i in chosen)


def _rp(ds: Dataset, item: str) -> float:
    return ds.items[item].train_interactions / ds.total_train_interactions * 100.0


def rerank_popularity(u: UserRecord, ds: Dataset) -> tuple[Candidate, ...]:
    """Greedy top-k whose mean item popularity tracks the user's history.

    Each step adds the candidate that brings the running mean closest to the
    history mean; gaps within ``1e-9`` are settled by model score. The original
    top-k is kept unless the greedy list strictly shrinks the final gap.
    """
    if not u.history:
        raise DataError(f"user {u.user_id}: popularity calibration needs a history")
    pool = list(u.candidates)
    if len(pool) < u.k:
        raise DataError(f"user {u.user_id}: fewer candidates than k")
    target = sum(_rp(ds, h) for h in u.history) / len(u.history)
    rps = [_rp(ds, c.item) for c in pool]
    chosen: list[int] = []
    total = 0.0
    remaining = list(range(len(pool)))
    while len(chosen) < u.k:
        n = len(chosen) + 1
        best_i, best_gap = -1, math.inf
        for i in remaining:
            gap = abs((total + rps[i]) / n - target)
            if gap < best_gap - NEAR_TIE or (abs(gap - best_gap) <= NEAR_TIE and pool[i].score > pool[best_i].score):
                best_i, best_gap = i, gap
        chosen.append(best_i)
        remaining.remove(best_i)
        total += rps[best_i]
    original_gap = abs(sum(rps[: u.k]) / u.k - target)
    if abs(total / u.k - target) < original_gap - NEAR_TIE:
        return tuple(pool[i] for i in chosen)
    return u.top_k


def apply_rerank(u: UserRecord, top: Sequence[Candidate]) -> UserRecord:
    """Put ``top`` first, keep the rest of the pool in its old order, and re-score by new rank.

    Users whose top-k is unchanged are returned as-is.
    """
    top = tuple(top)
    if top == u.top_k:
        return u
    picked = set(top)
    rest = [c for c in u.candidates if c not in picked]
    order = list(top) + rest
    n = len(order)
    cands = tuple(Candidate(c.item, float(n - i), c.relevant) for i, c in enumerate(order))
    return replace(u, candidates=cands)


@dataclass
class MitigationReport:
    plan: MitigationPlan
    groups: list[dict]
    targeted_means: dict[str, dict[str, float]]
    overall_uf: dict[str, dict[str, float]]
    n_users_reranked: int
    n_users_targeted: int
    dataset: Dataset = field(repr=False, default=None)
    table: UserMetricTable = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "metric": self.plan.metric.value,
            "strategy": self.plan.strategy,
            "target_fraction": self.plan.target_fraction,
            "n_target_groups": len(self.plan.target_groups),
            "n_users_targeted": self.n_users_targeted,
            "n_users_reranked": self.n_users_reranked,
            "groups": self.groups,
            "targeted": self.targeted_means,
            "overall": self.overall_uf,
        }


def _pooled_mean(col: np.ndarray, users: np.ndarray) -> float | None:
    vals = col[users]
    vals = vals[~np.isnan(vals)]
    return float(vals.mean()) if vals.size else None


def evaluate_mitigation(ds: Dataset, plan: MitigationPlan, table: UserMetricTable, idx: GroupIndex,
                        size_filter: SizeFilter = SizeFilter()) -> MitigationReport:
    """Re-rank every user of the target groups and recompute metrics and UF before and after."""
    targets = [np.asarray(idx.members(k), dtype=np.intp) for k in plan.target_groups]
    users = np.unique(np.concatenate(targets)) if targets else np.empty(0, dtype=np.intp)

    new_users = list(ds.users)
    changed = []
    for i in users.tolist():
        u = ds.users[i]
        if plan.strategy == "diversify":
            if u.k < 2:
                continue
            top = rerank_diversity(u, ds, plan.lam)
        else:
            if not u.history:
                continue
            top = rerank_popularity(u, ds)
        nu = apply_rerank(u, top)
        if nu is not u:
            new_users[i] = nu
            changed.append(i)
    new_ds = replace(ds, users=tuple(new_users))
    missing = [m for m in ALL_METRICS if m not in table.values]
    if missing:
        raise DataError(f"mitigation needs every metric in the table; missing {[m.value for m in missing]}")
    after = update_table(table, new_ds, changed) if changed else table

    groups = []
    for key, members in zip(plan.target_groups, targets):
        groups.append({
            "key": list(key),
            "size": int(len(members)),
            "before": {m.value: _pooled_mean(table.values[m], members) for m in ALL_METRICS},
            "after": {m.value: _pooled_mean(after.values[m], members) for m in ALL_METRICS},
        })
    targeted = {
        m.value: {"before": _pooled_mean(table.values[m], users), "after": _pooled_mean(after.values[m], users)}
        for m in ALL_METRICS
    }
    overall = {}
    for m in ALL_METRICS:
        try:
            before_uf = brute_force_search(idx, table, m, size_filter).uf
            after_uf = brute_force_search(idx, after, m, size_filter).uf
        except SearchFailedError:
            continue
        overall[m.value] = {"uf_before": before_uf, "uf_after": after_uf}
    return MitigationReport(plan, groups, targeted, overall, len(changed), int(users.size), new_ds, after)
