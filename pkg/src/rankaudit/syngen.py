"""Seeded synthetic datasets with a planted best and worst group.

Per-user metric values are never written directly. Each user gets a real
candidate pool, history and item catalogue built so that the chosen metric
lands on a target level; the metric module then recovers it from the
artifacts. Group targets follow a smooth field over the attribute codes:
a bounded background, a basin rising towards the planted best group and one
falling towards the planted worst group. Non-planted users are confined to
the interior achievable levels, so the planted pair is the strict optimum.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .catalog import Attribute, AttributeSchema, Candidate, Dataset, ItemRecord, UserRecord, dataset_paths, write_dataset
from .exceptions import ConfigError, SearchFailedError
from .groupspace import GroupIndex, SizeFilter
from .metrics import MetricId, compute_table
from .search import brute_force_search


@dataclass
class SynConfig:
    n_users: int = 2000
    n_values: tuple[int, ...] = (2, 7, 21)
    # per-attribute concentration in [0, 1]; 0 is uniform, 1 puts every user on one code
    skew: float | Sequence[float] = 0.3
    metric: str = "auc"
    k: int = 5
    pool_size: int = 50
    n_tiers: int = 20
    n_slots: int = 50
    history_len: int = 5
    basin: float = 0.15
    noise: float = 0.05
    jitter: float = 0.02
    planted_size: int = 3
    planted_best: tuple[int, ...] | None = None
    planted_worst: tuple[int, ...] | None = None
    seed: int = 0
    max_tries: int = 20

    def __post_init__(self):
        self.n_values = tuple(int(v) for v in self.n_values)
        if not self.n_values or min(self.n_values) < 1:
            raise ConfigError("every attribute needs at least one value")
        if math.prod(self.n_values) < 2:
            raise ConfigError("the group space needs at least two cells to plant a pair")
        skew = [self.skew] * len(self.n_values) if np.isscalar(self.skew) else list(self.skew)
        if len(skew) != len(self.n_values) or not all(0.0 <= s <= 1.0 for s in skew):
            raise ConfigError("skew must be in [0, 1], one value or one per attribute")
        self.skew = tuple(float(s) for s in skew)
        self.metric = MetricId.parse(self.metric).value
        if not 2 <= self.k <= self.pool_size:
            raise ConfigError("need 2 <= k <= pool_size")
        if self.pool_size > self.n_tiers * self.n_slots:
            raise ConfigError("pool_size exceeds the number of catalogue items")
        if self.k > min(self.n_tiers, self.n_slots - 1) or self.history_len > self.n_slots:
            raise ConfigError("catalogue too small for k / history_len")
        if self.n_users < 2 * self.planted_size or self.planted_size < 1:
            raise ConfigError("n_users must cover both planted groups")
        for key in (self.planted_best, self.planted_worst):
            if key is not None and (len(key) != len(self.n_values)
                                    or any(not 0 <= c < v for c, v in zip(key, self.n_values))):
                raise ConfigError(f"planted key {key} outside the attribute space")


@dataclass
class GroundTruth:
    metric: str
    best_key: tuple[int, ...]
    worst_key: tuple[int, ...]
    uf: float
    best_mean: float
    worst_mean: float
    n_groups: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"metric": self.metric, "best_key": list(self.best_key), "worst_key": list(self.worst_key),
                "uf": self.uf, "best_mean": self.best_mean, "worst_mean": self.worst_mean,
                "n_groups": self.n_groups}


def marginal(n: int, skew: float, center: int) -> np.ndarray:
    """Geometric decay away from ``center``; ``skew=1`` is a point mass."""
    ratio = 1.0 - skew
    w = ratio ** np.abs(np.arange(n) - center).astype(float)
    return w / w.sum()


class _Catalogue:
    """Items on a tiers x slots grid: tier sets popularity, slot sets the tag."""

    def __init__(self, n_tiers: int, n_slots: int):
        self.n_tiers, self.n_slots = n_tiers, n_slots
        self.ids = [f"i{t * n_slots + s}" for t in range(n_tiers) for s in range(n_slots)]
        self.items = {
            f"i{t * n_slots + s}": ItemRecord(f"i{t * n_slots + s}", frozenset({f"g{s}"}), t + 1)
            for t in range(n_tiers) for s in range(n_slots)
        }
        self.total = sum(it.train_interactions for it in self.items.values())

    def item(self, tier: int, slot: int) -> str:
        return self.ids[tier * self.n_slots + slot]


def _levels(cfg: SynConfig, cat: _Catalogue) -> np.ndarray:
    """Achievable per-user values of the planted metric, ascending."""
    k, P = cfg.k, cfg.pool_size
    m = MetricId(cfg.metric)
    if m is MetricId.AUC:
        return np.arange(P) / (P - 1)
    if m is MetricId.MRR:
        ranked = [1.0 / r for r in range(k, 0, -1)]
        return np.array(([0.0] if P > k else []) + ranked)
    if m is MetricId.NDCG:
        ranked = [1.0 / math.log2(r + 1) for r in range(k, 0, -1)]
        return np.array(([0.0] if P > k else []) + ranked)
    if m is MetricId.URD:
        return np.array([1.0 - j * (j - 1) / (k * (k - 1)) for j in range(k, 1, -1)] + [1.0])
    step = 100.0 / cat.total / k
    return np.arange((cat.n_tiers - 1) * k + 1) * step


def _bump(keys: np.ndarray, center: Sequence[int], widths: np.ndarray) -> np.ndarray:
    d = (keys - np.asarray(center)) / widths
    return np.exp(-0.5 * (d * d).sum(axis=1))


def _stochastic_level(z: np.ndarray, lo: int, hi: int, rng) -> np.ndarray:
    """Map ``z`` in [0, 1] linearly onto level indices ``lo..hi`` and round at random.

    Working in index space rather than value space keeps the field's gradient
    for metrics whose achievable values are unevenly spaced (MRR, NDCG, URD).
    """
    pos = lo + np.clip(z, 0.0, 1.0) * (hi - lo)
    below = np.floor(pos)
    return (below + (rng.random(pos.size) < pos - below)).astype(np.int64)


def _pick_keys(cfg: SynConfig, dists, rng) -> tuple[tuple[int, ...], tuple[int, ...]]:
    best, worst = cfg.planted_best, cfg.planted_worst

    def draw(uniform):
        if uniform:
            return tuple(int(rng.integers(0, v)) for v in cfg.n_values)
        return tuple(int(rng.choice(len(p), p=p)) for p in dists)

    for attempt in range(200):
        uniform = attempt >= 100
        b = best if best is not None else draw(uniform)
        w = worst if worst is not None else draw(uniform)
        if b != w:
            return b, w
    raise ConfigError("planted best and worst keys coincide")


def _distinct(rng, n: int, size: int, exclude=()) -> list[int]:
    """``size`` distinct integers from ``range(n)`` avoiding ``exclude`` (batched rejection draws)."""
    seen = set(exclude)
    out: list[int] = []
    while len(out) < size:
        for v in rng.integers(n, size=2 * (size - len(out)) + 4).tolist():
            if v not in seen:
                seen.add(v)
                out.append(v)
                if len(out) == size:
                    break
    return out


def _build_user(uid, codes, level, cfg: SynConfig, cat: _Catalogue, metric: MetricId, rng) -> UserRecord:
    k, P = cfg.k, cfg.pool_size
    n_items = len(cat.ids)
    history: list[str] | None = None

    if metric is MetricId.URD:
        j = k - level if level < k - 1 else 0
        slots = _distinct(rng, cat.n_slots, k - j + 1)
        shared_slot, other_slots = slots[0], slots[1:]
        top = [cat.item(t, shared_slot) for t in _distinct(rng, cat.n_tiers, j)]
        top += [cat.item(int(t), s) for t, s in zip(rng.integers(cat.n_tiers, size=k - j), other_slots)]
        rng.shuffle(top)
    elif metric is MetricId.URP:
        base, extra = divmod(int(level), k)
        tiers = [base + 1] * extra + [base] * (k - extra)
        top = [cat.item(t, s) for t, s in zip(tiers, _distinct(rng, cat.n_slots, k))]
        history = [cat.item(0, s) for s in _distinct(rng, cat.n_slots, cfg.history_len)]
    else:
        top = [cat.ids[i] for i in _distinct(rng, n_items, k)]

    taken = [int(t[1:]) for t in top]
    order = top + [cat.ids[i] for i in _distinct(rng, n_items, P - k, exclude=taken)]
    if history is None:
        history = [cat.ids[i] for i in _distinct(rng, n_items, cfg.history_len)]

    if metric is MetricId.AUC:
        rel_idx = (P - 1) - int(level)
    elif metric in (MetricId.MRR, MetricId.NDCG):
        has_zero = P > k
        if has_zero and level == 0:
            rel_idx = int(rng.integers(k, P))
        else:
            rank = k - (int(level) - (1 if has_zero else 0))
            rel_idx = rank - 1
    else:
        rel_idx = int(rng.integers(P))

    scores = np.round((P - np.arange(P) - 0.5 * rng.random(P)) / P, 6).tolist()
    cands = tuple(Candidate(item, sc, i == rel_idx) for i, (item, sc) in enumerate(zip(order, scores)))
    return UserRecord(uid, tuple(int(c) for c in codes), tuple(history), k, cands)


def _attempt(cfg: SynConfig, rng: np.random.Generator):
    metric = MetricId(cfg.metric)
    cat = _Catalogue(cfg.n_tiers, cfg.n_slots)
    levels = _levels(cfg, cat)
    if len(levels) < 3:
        raise SearchFailedError("metric has fewer than three achievable values; planted gap not realizable")
    L = len(levels)

    centers = [int(rng.integers(v)) for v in cfg.n_values]
    dists = [marginal(v, s, c) for v, s, c in zip(cfg.n_values, cfg.skew, centers)]
    codes = np.column_stack([rng.choice(v, size=cfg.n_users, p=p) for v, p in zip(cfg.n_values, dists)])
    best, worst = _pick_keys(cfg, dists, rng)
    ps = cfg.planted_size
    codes[:ps] = best
    codes[ps:2 * ps] = worst

    keys, inverse = np.unique(codes, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    widths = np.maximum(1.0, cfg.basin * np.asarray(cfg.n_values, dtype=float))
    z = (0.5 + 0.5 * _bump(keys, best, widths) - 0.5 * _bump(keys, worst, widths)
         + rng.uniform(-cfg.noise, cfg.noise, size=len(keys)))
    z_user = z[inverse] + rng.uniform(-cfg.jitter, cfg.jitter, size=cfg.n_users)
    if not metric.higher_is_better:
        z_user = 1.0 - z_user
    user_levels = _stochastic_level(z_user, 1, L - 2, rng)
    top_level, bottom_level = (L - 1, 0) if metric.higher_is_better else (0, L - 1)
    in_best = (codes == np.asarray(best)).all(axis=1)
    in_worst = (codes == np.asarray(worst)).all(axis=1)
    user_levels[in_best] = top_level
    user_levels[in_worst] = bottom_level

    users = tuple(
        _build_user(f"u{i}", codes[i], int(user_levels[i]), cfg, cat, metric, rng) for i in range(cfg.n_users)
    )
    schema = AttributeSchema(tuple(
        Attribute(f"a{i}", tuple(f"v{c}" for c in range(v))) for i, v in enumerate(cfg.n_values)
    ))
    ds = Dataset(schema, users, cat.items, cat.total)
    return ds, best, worst


def generate(cfg: SynConfig) -> tuple[Dataset, GroundTruth]:
    """Build a dataset whose exhaustive-search optimum is the planted pair.

    The ground truth is read off an exhaustive search run on the generated
    data; attempts whose optimum differs from the plant are redrawn.
    """
    rng = np.random.default_rng(cfg.seed)
    metric = MetricId(cfg.metric)
    for _ in range(cfg.max_tries):
        ds, best, worst = _attempt(cfg, rng)
        table = compute_table(ds, [metric])
        codes = np.array([u.sensitive for u in ds.users], dtype=np.int64)
        idx = GroupIndex(codes, cfg.n_values, ds.schema.names)
        res = brute_force_search(idx, table, metric, SizeFilter())
        if res.best.key == best and res.worst.key == worst:
            gt = GroundTruth(metric.value, best, worst, res.uf, res.best.mean, res.worst.mean, idx.n_groups)
            return ds, gt
    raise SearchFailedError(f"planted optimum not realised after {cfg.max_tries} attempts")


def write_synthetic(ds: Dataset, gt: GroundTruth, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(ds, *dataset_paths(out))
    (out / "ground_truth.json").write_text(json.dumps(gt.to_dict(), indent=2) + "\n")
