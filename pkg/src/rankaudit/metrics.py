"""Per-user recommendation quality metrics and their group averages."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .catalog import Dataset, UserRecord
from .exceptions import DataError, UndefinedGroupError, UndefinedMetricError


class MetricId(str, enum.Enum):
    AUC = "auc"
    MRR = "mrr"
    NDCG = "ndcg"
    URD = "urd"
    URP = "urp"

    @property
    def higher_is_better(self) -> bool:
        return self is not MetricId.URP

    @classmethod
    def parse(cls, name: str | "MetricId") -> "MetricId":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise DataError(f"unknown metric {name!r}; expected one of {[m.value for m in cls]}") from None


ALL_METRICS = tuple(MetricId)
LIST_METRICS = (MetricId.MRR, MetricId.NDCG, MetricId.URD, MetricId.URP)


def user_auc(u: UserRecord) -> float:
    """Mann-Whitney AUC over the whole candidate pool; tied pairs count one half.

    Computed from the rank sum of the relevant items, with tied scores sharing
    their average rank.
    """
    ranked = sorted((c.score, c.relevant) for c in u.candidates)
    n = len(ranked)
    n_pos = sum(rel for _, rel in ranked)
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(f"user {u.user_id}: AUC needs both relevant and non-relevant candidates")
    rank_sum = 0.0
    i = 0
    while i < n:
        j = i
        while j < n and ranked[j][0] == ranked[i][0]:
            j += 1
        # positions i..j-1 share the average of ranks i+1..j
        rank_sum += (i + 1 + j) / 2 * sum(rel for _, rel in ranked[i:j])
        i = j
    return (rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)


def user_mrr(u: UserRecord) -> float:
    for pos, c in enumerate(u.top_k, start=1):
        if c.relevant:
            return 1.0 / pos
    return 0.0


def user_ndcg(u: UserRecord) -> float:
    """NDCG@k with binary gains; the ideal list is drawn from the same candidate pool."""
    n_rel = sum(c.relevant for c in u.candidates)
    if n_rel == 0:
        raise UndefinedMetricError(f"user {u.user_id}: NDCG undefined without a relevant candidate")
    dcg = sum(1.0 / math.log2(a + 1) for a, c in enumerate(u.top_k, start=1) if c.relevant)
    idcg = sum(1.0 / math.log2(a + 1) for a in range(1, min(n_rel, u.k) + 1))
    return dcg / idcg


def jaccard(a: frozenset, b: frozenset) -> float:
    union = len(a | b)
    if union == 0:
        return 0.0
    return len(a & b) / union


def user_urd(u: UserRecord, ds: Dataset) -> float:
    """One minus the mean pairwise tag Jaccard similarity of the top-k list."""
    k = u.k
    if k < 2:
        raise UndefinedMetricError(f"user {u.user_id}: diversity needs k >= 2")
    tags = [ds.items[c.item].tags for c in u.top_k]
    total = sum(jaccard(a, b) for a, b in combinations(tags, 2))
    return 1.0 - 2.0 * total / (k * (k - 1))


def _mean_popularity(items: Iterable[str], ds: Dataset) -> float:
    counts = [ds.items[i].train_interactions for i in items]
    return sum(counts) / len(counts) / ds.total_train_interactions * 100.0


def user_urp(u: UserRecord, ds: Dataset) -> float:
    """Absolute gap between mean popularity of the top-k list and of the history."""
    if not u.history:
        raise UndefinedMetricError(f"user {u.user_id}: popularity mismatch needs a history")
    return abs(_mean_popularity((c.item for c in u.top_k), ds) - _mean_popularity(u.history, ds))


def user_metric(metric: MetricId, u: UserRecord, ds: Dataset) -> float:
    if metric is MetricId.AUC:
        return user_auc(u)
    if metric is MetricId.MRR:
        return user_mrr(u)
    if metric is MetricId.NDCG:
        return user_ndcg(u)
    if metric is MetricId.URD:
        return user_urd(u, ds)
    return user_urp(u, ds)


@dataclass
class UserMetricTable:
    """Per-user metric values aligned with ``Dataset.users``; NaN marks an undefined entry."""

    user_ids: list[str]
    values: dict[MetricId, np.ndarray]
    excluded: dict[MetricId, list[int]] = field(default_factory=dict)

    @property
    def metrics(self) -> list[MetricId]:
        return list(self.values)

    def column(self, metric) -> np.ndarray:
        metric = MetricId.parse(metric)
        if metric not in self.values:
            raise DataError(f"metric {metric.value} was not computed for this table")
        return self.values[metric]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["user_id", "metric", "value"])
            for m, col in self.values.items():
                for uid, v in zip(self.user_ids, col):
                    if not np.isnan(v):
                        w.writerow([uid, m.value, repr(float(v))])


def _compute_column(metric: MetricId, users: Sequence[UserRecord], ds: Dataset) -> tuple[np.ndarray, list[int]]:
    col = np.empty(len(users))
    excluded = []
    for i, u in enumerate(users):
        try:
            col[i] = user_metric(metric, u, ds)
        except UndefinedMetricError:
            col[i] = np.nan
            excluded.append(i)
    return col, excluded


def compute_table(ds: Dataset, metrics: Iterable = ALL_METRICS) -> UserMetricTable:
    users = ds.users
    values, excluded = {}, {}
    for m in metrics:
        m = MetricId.parse(m)
        values[m], excluded[m] = _compute_column(m, users, ds)
    return UserMetricTable([u.user_id for u in users], values, excluded)


def update_table(table: UserMetricTable, ds: Dataset, indices: Sequence[int]) -> UserMetricTable:
    """Copy of ``table`` with only the users at ``indices`` recomputed from ``ds``."""
    idx = sorted(set(indices))
    values, excluded = {}, {}
    sub = [ds.users[i] for i in idx]
    for m, old in table.values.items():
        col = old.copy()
        fresh, _ = _compute_column(m, sub, ds)
        col[idx] = fresh
        values[m] = col
        excluded[m] = [int(i) for i in np.flatnonzero(np.isnan(col))]
    return UserMetricTable(list(table.user_ids), values, excluded)


def read_metric_csv(path, user_ids: Sequence[str]) -> UserMetricTable:
    """Ingest externally computed per-user values (``user_id,metric,value``).

    Rows for unknown users are an error; users without a row for a metric are
    treated as excluded for that metric.
    """
    pos = {uid: i for i, uid in enumerate(user_ids)}
    values: dict[MetricId, np.ndarray] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"user_id", "metric", "value"} <= set(reader.fieldnames):
            raise DataError(f"{path}: header must be user_id,metric,value")
        for line, row in enumerate(reader, start=2):
            if row["user_id"] not in pos:
                raise DataError(f"{path} line {line}: field 'user_id' names unknown user {row['user_id']!r}")
            m = MetricId.parse(row["metric"])
            try:
                v = float(row["value"])
            except ValueError:
                raise DataError(f"{path} line {line}: field 'value' is not a number") from None
            col = values.setdefault(m, np.full(len(user_ids), np.nan))
            col[pos[row["user_id"]]] = v
    excluded = {m: [int(i) for i in np.flatnonzero(np.isnan(c))] for m, c in values.items()}
    return UserMetricTable(list(user_ids), values, excluded)


def group_mean(table: UserMetricTable, metric, members: Sequence[int]) -> float:
    col = table.column(metric)
    vals = col[np.asarray(members, dtype=np.intp)]
    vals = vals[~np.isnan(vals)]
    if vals.size == 0:
        raise UndefinedGroupError(f"no member has a defined {MetricId.parse(metric).value} value")
    return float(vals.mean())
