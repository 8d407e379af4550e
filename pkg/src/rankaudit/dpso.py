"""Double-ended discrete particle swarm search for the maximum-gap group pair.

Two swarms move through the integer-coded attribute space at once: one climbs
towards the best-treated group, the other descends towards the worst-treated
one. Both read and write one shared memo of evaluated groups, so no group mean
is ever computed twice within a run.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import IO

import numpy as np

from .exceptions import ConfigError, SearchFailedError
from .groupspace import GroupIndex, GroupKey, SizeFilter, sample_keys, sample_uniform_keys
from .search import Deadline, GroupEvaluator, SearchResult, _resolve_metric, build_result

LARGE_SPACE = 1000


@dataclass
class SwarmConfig:
    alpha: float = 0.09
    c1: float = 2.0
    c2: float = 2.0
    v_star: float = 2.0
    n_particles: int | None = None
    epsilon: float | None = None
    n_iterations: int | None = None
    seed: int = 0
    stagnation_resample: bool = True
    stagnation_limit: int = 3
    init: str = "distribution"

    def __post_init__(self):
        if self.alpha < 0 or self.c1 < 0 or self.c2 < 0:
            raise ConfigError("alpha, c1 and c2 must be non-negative")
        if self.v_star <= 0:
            raise ConfigError("v_star must be positive")
        if self.n_particles is not None and self.n_particles < 1:
            raise ConfigError("n_particles must be >= 1")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.n_iterations is not None and self.n_iterations < 0:
            raise ConfigError("n_iterations must be >= 0")
        if self.init not in ("distribution", "uniform"):
            raise ConfigError(f"init must be 'distribution' or 'uniform', got {self.init!r}")

    def resolve(self, n_groups: int) -> tuple[int, int]:
        """Particles per swarm and iteration count for a space with ``n_groups`` non-empty groups.

        Unset values follow the two regimes that work well in practice: a small
        particle ratio with more iterations for large spaces, a large ratio
        with fewer iterations for small ones.
        """
        large = n_groups > LARGE_SPACE
        eps = self.epsilon if self.epsilon is not None else (0.005 if large else 0.2)
        n_pt = self.n_particles if self.n_particles is not None else max(1, math.ceil(eps * n_groups))
        n_it = self.n_iterations if self.n_iterations is not None else (20 if large else 10)
        return n_pt, n_it


class InfoBase:
    """Shared memo ``key -> (fitness, size)``; fitness is ``nan`` for unusable groups."""

    def __init__(self):
        self.entries: dict[GroupKey, tuple[float, int]] = {}
        self.n_inserted = 0
        self.n_hits = 0
        self._max: tuple[float, GroupKey] | None = None
        self._min: tuple[float, GroupKey] | None = None

    def __contains__(self, key) -> bool:
        return key in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, key: GroupKey) -> tuple[float, int] | None:
        hit = self.entries.get(key)
        if hit is not None:
            self.n_hits += 1
        return hit

    def insert(self, key: GroupKey, fitness: float, size: int) -> None:
        if key in self.entries:
            # first writer wins
            return
        self.entries[key] = (fitness, size)
        self.n_inserted += 1
        if math.isnan(fitness):
            return
        # ties resolve to the lexicographically smaller key
        if self._max is None or (-fitness, key) < (-self._max[0], self._max[1]):
            self._max = (fitness, key)
        if self._min is None or (fitness, key) < self._min:
            self._min = (fitness, key)

    def extreme(self, maximize: bool) -> tuple[GroupKey, float] | None:
        e = self._max if maximize else self._min
        return None if e is None else (e[1], e[0])

    def defined(self) -> dict[GroupKey, tuple[float, int]]:
        return {k: v for k, v in self.entries.items() if not math.isnan(v[0])}


@dataclass
class Swarm:
    """Particle state for one search direction, one row per particle."""

    positions: np.ndarray
    velocities: np.ndarray
    pbest_pos: np.ndarray
    pbest_fit: np.ndarray
    maximize: bool
    stale: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.stale is None:
            self.stale = np.zeros(len(self.positions), dtype=np.int64)

    def __len__(self) -> int:
        return len(self.positions)

    def better(self, new: float, old: float) -> bool:
        if math.isnan(new):
            return False
        if math.isnan(old):
            return True
        return new > old if self.maximize else new < old

    def centroid(self) -> np.ndarray:
        return self.pbest_pos.mean(axis=0)


@dataclass(frozen=True)
class GbestPair:
    gbest_a: tuple[GroupKey, float] | None
    gbest_d: tuple[GroupKey, float] | None


def _new_swarm(positions, cfg, rng, maximize) -> Swarm:
    vel = rng.uniform(-cfg.v_star, cfg.v_star, size=positions.shape)
    return Swarm(positions, vel, positions.copy(), np.full(len(positions), np.nan), maximize)


def initialize_swarms(idx: GroupIndex, cfg: SwarmConfig, rng: np.random.Generator, n_particles: int,
                      higher_is_better: bool = True) -> tuple[Swarm, Swarm]:
    """Place both swarms by sampling keys from the per-attribute user distributions.

    With ``cfg.init == "uniform"`` keys are drawn uniformly within the boundaries
    instead (the baseline the distribution-based start is compared against).
    """
    sampler = sample_keys if cfg.init == "distribution" else sample_uniform_keys
    pos_a = sampler(idx, rng, n_particles)
    pos_d = sampler(idx, rng, n_particles)
    swarm_a = _new_swarm(pos_a, cfg, rng, maximize=higher_is_better)
    swarm_d = _new_swarm(pos_d, cfg, rng, maximize=not higher_is_better)
    return swarm_a, swarm_d


def velocity_update(positions, pbest, gbest, centroid, cfg: SwarmConfig, rng: np.random.Generator) -> np.ndarray:
    """Thermal-motion velocity for every row of ``positions``, clamped to ``[-v*, v*]``.

    ``alpha * |C - P| * phi + c1 * r1 * (Pbest - P) + c2 * r2 * (Gbest - P)`` with one
    ``r1, r2 ~ U(0, 1)`` per particle and one standard normal ``phi`` per coordinate.
    """
    p = np.atleast_2d(np.asarray(positions, dtype=float))
    n, dim = p.shape
    r1 = rng.random((n, 1))
    r2 = rng.random((n, 1))
    phi = rng.standard_normal((n, dim))
    v = (cfg.alpha * np.abs(np.asarray(centroid, dtype=float) - p) * phi
         + cfg.c1 * r1 * (np.asarray(pbest, dtype=float) - p)
         + cfg.c2 * r2 * (np.asarray(gbest, dtype=float) - p))
    return np.clip(v, -cfg.v_star, cfg.v_star)


def position_update(positions, velocities, boundaries) -> np.ndarray:
    """Round ``P + V`` to the nearest code (halves round up) and clamp into the boundaries."""
    raw = np.asarray(positions, dtype=float) + np.asarray(velocities, dtype=float)
    upper = np.asarray(boundaries, dtype=np.int64) - 1
    return np.clip(np.floor(raw + 0.5).astype(np.int64), 0, upper)


def evaluate_and_update(swarms, infobase: InfoBase, evaluate, deadline: Deadline | None = None) -> GbestPair:
    """Evaluate every particle (memo first), then update personal bests.

    Returns early, leaving later particles unevaluated, once ``deadline`` expires.
    """
    for swarm in swarms:
        for i, row in enumerate(swarm.positions.tolist()):
            if deadline is not None and deadline.check():
                break
            key = tuple(row)
            hit = infobase.lookup(key)
            if hit is None:
                fit, size = evaluate(key)
                infobase.insert(key, fit, size)
            else:
                fit = hit[0]
            if math.isnan(fit):
                swarm.stale[i] += 1
                continue
            swarm.stale[i] = 0
            if swarm.better(fit, swarm.pbest_fit[i]):
                swarm.pbest_fit[i] = fit
                swarm.pbest_pos[i] = row
    return GbestPair(infobase.extreme(swarms[0].maximize), infobase.extreme(swarms[1].maximize))


def _gbest_target(swarm: Swarm, infobase: InfoBase) -> np.ndarray:
    best = infobase.extreme(swarm.maximize)
    if best is None:
        # nothing defined yet: no social pull
        return swarm.positions
    return np.asarray(best[0], dtype=float)


def _step(swarm: Swarm, infobase: InfoBase, idx: GroupIndex, cfg: SwarmConfig, rng, debug: bool) -> None:
    vel = velocity_update(swarm.positions, swarm.pbest_pos, _gbest_target(swarm, infobase), swarm.centroid(),
                          cfg, rng)
    swarm.velocities = vel
    swarm.positions = position_update(swarm.positions, vel, idx.boundaries)
    if cfg.stagnation_resample:
        stuck = np.flatnonzero(swarm.stale >= cfg.stagnation_limit)
        if stuck.size:
            swarm.positions[stuck] = sample_keys(idx, rng, stuck.size)
            swarm.stale[stuck] = 0
    if debug:
        assert np.all(np.abs(swarm.velocities) <= cfg.v_star)
        assert np.all(swarm.positions >= 0) and np.all(swarm.positions < np.asarray(idx.boundaries))


def run_dpso(idx: GroupIndex, table, metric, size_filter: SizeFilter = SizeFilter(), cfg: SwarmConfig | None = None,
             top_n: int = 10, budget: float | None = None, trace: IO[str] | None = None,
             debug: bool = False, seed: int | None = None) -> SearchResult:
    """Run both swarms for the configured number of iterations.

    ``trace`` receives one JSON line per iteration (``iteration``, ``gbest_a``,
    ``gbest_d``, ``infobase_size``). ``seed`` overrides ``cfg.seed``.
    """
    cfg = cfg or SwarmConfig()
    values, name, hib = _resolve_metric(table, metric)
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    n_pt, n_it = cfg.resolve(idx.n_groups)
    deadline = Deadline(budget)
    evaluate = GroupEvaluator(idx, values, size_filter.min_count(idx.n_users))
    infobase = InfoBase()
    swarms = initialize_swarms(idx, cfg, rng, n_pt, higher_is_better=hib)
    history = []

    gbest = evaluate_and_update(swarms, infobase, evaluate, deadline)
    history.append(_trace_record(0, gbest, infobase, trace))
    iterations = 0
    for it in range(1, n_it + 1):
        if deadline.check():
            break
        for swarm in swarms:
            _step(swarm, infobase, idx, cfg, rng, debug)
        gbest = evaluate_and_update(swarms, infobase, evaluate, deadline)
        history.append(_trace_record(it, gbest, infobase, trace))
        iterations = it

    if gbest.gbest_a is None:
        raise SearchFailedError("dpso: no visited group had a defined fitness")
    res = build_result(infobase.defined(), metric=name, higher_is_better=hib, top_n=top_n,
                       groups_evaluated=infobase.n_inserted, wall_time=time.perf_counter() - t0,
                       engine="dpso", truncated=deadline.expired, min_groups=1)
    res.extra.update({
        "iterations": iterations,
        "particles_per_swarm": n_pt,
        "infobase_hits": infobase.n_hits,
        "evaluator_calls": evaluate.n_calls,
    })
    res.infobase = infobase
    res.trace = history
    return res


def _trace_record(it: int, gbest: GbestPair, infobase: InfoBase, fh) -> dict:
    def enc(g):
        return None if g is None else {"key": list(g[0]), "fitness": g[1]}

    rec = {"iteration": it, "gbest_a": enc(gbest.gbest_a), "gbest_d": enc(gbest.gbest_d),
           "infobase_size": len(infobase)}
    if fh is not None:
        fh.write(json.dumps(rec) + "\n")
    return rec


def config_dict(cfg: SwarmConfig) -> dict:
    return asdict(cfg)
