"""scikit-learn style wrappers around the search engines.

``X`` holds one row of integer attribute codes per user and ``y`` the user's
metric value (NaN where undefined). ``fit`` finds the best- and worst-treated
groups; ``predict`` returns each row's group mean as seen during the search.

    >>> auditor = SwarmGroupAuditor(random_state=0).fit(X, y)
    >>> auditor.uf_, auditor.best_group_, auditor.worst_group_
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .dpso import SwarmConfig, run_dpso
from .exceptions import ConfigError
from .groupspace import GroupIndex, SizeFilter
from .search import brute_force_search, threshold_search


def check_codes(X, n_values=None) -> tuple[np.ndarray, tuple[int, ...]]:
    """Validate an integer code matrix and resolve per-attribute boundaries."""
    X = check_array(X, dtype=None, ensure_min_samples=1)
    if not np.issubdtype(X.dtype, np.integer):
        if not np.all(np.equal(np.mod(X, 1), 0)):
            raise ConfigError("attribute codes must be integers")
        X = X.astype(np.int64)
    if (X < 0).any():
        raise ConfigError("attribute codes must be non-negative")
    if n_values is None:
        n_values = tuple(int(v) + 1 for v in X.max(axis=0))
    else:
        n_values = tuple(int(v) for v in n_values)
        if len(n_values) != X.shape[1]:
            raise ConfigError(f"n_values has {len(n_values)} entries for {X.shape[1]} attributes")
        if (X >= np.asarray(n_values)).any():
            raise ConfigError("attribute code outside its n_values boundary")
    return X.astype(np.int64), n_values


def check_values(y, n_samples: int) -> np.ndarray:
    y = check_array(y, ensure_2d=False, dtype=float, ensure_all_finite="allow-nan")
    if y.ndim != 1 or y.shape[0] != n_samples:
        raise ConfigError(f"y must be 1-d with {n_samples} entries")
    return y


class _GroupAuditor(BaseEstimator):
    engine = "brute"

    def _search(self, idx, y):
        raise NotImplementedError

    def fit(self, X, y):
        X, n_values = check_codes(X, self.n_values)
        y = check_values(y, X.shape[0])
        self.n_values_ = n_values
        self.n_features_in_ = X.shape[1]
        self.index_ = GroupIndex(X, n_values)
        self.result_ = self._search(self.index_, y)
        self.uf_ = self.result_.uf
        self.best_group_ = self.result_.best.key
        self.worst_group_ = self.result_.worst.key
        self.group_means_ = {k: m for k, (m, _) in self.result_.group_means.items()}
        self.n_groups_evaluated_ = self.result_.groups_evaluated
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        X, _ = check_codes(X, self.n_values_)
        return np.array([self.group_means_.get(tuple(row), np.nan) for row in X.tolist()])

    def _size_filter(self):
        return SizeFilter(self.min_fraction)

    def _metric(self):
        return ("y", self.higher_is_better)


class BruteForceGroupAuditor(_GroupAuditor):
    """Exhaustive search over every non-empty group."""

    def __init__(self, *, higher_is_better=True, min_fraction=1e-5, top_n=10, n_values=None, budget=None,
                 random_state=0):
        self.higher_is_better = higher_is_better
        self.min_fraction = min_fraction
        self.top_n = top_n
        self.n_values = n_values
        self.budget = budget
        self.random_state = random_state

    def _search(self, idx, y):
        return brute_force_search(idx, y, self._metric(), self._size_filter(), self.top_n, self.budget,
                                  self.random_state)


class ThresholdGroupAuditor(_GroupAuditor):
    """Exhaustive search over groups holding at least ``theta`` percent of users."""

    engine = "threshold"

    def __init__(self, theta=0.01, *, higher_is_better=True, min_fraction=1e-5, top_n=10, n_values=None,
                 budget=None, random_state=0):
        self.theta = theta
        self.higher_is_better = higher_is_better
        self.min_fraction = min_fraction
        self.top_n = top_n
        self.n_values = n_values
        self.budget = budget
        self.random_state = random_state

    def _search(self, idx, y):
        return threshold_search(idx, y, self._metric(), self.theta, self._size_filter(), self.top_n, self.budget,
                                self.random_state)


class SwarmGroupAuditor(_GroupAuditor):
    """Two-swarm discrete particle swarm search (see :mod:`rankaudit.dpso`)."""

    engine = "dpso"

    def __init__(self, *, alpha=0.09, c1=2.0, c2=2.0, v_star=2.0, epsilon=None, n_particles=None,
                 n_iterations=None, stagnation_resample=True, init="distribution", higher_is_better=True,
                 min_fraction=1e-5, top_n=10, n_values=None, budget=None, random_state=0):
        self.alpha = alpha
        self.c1 = c1
        self.c2 = c2
        self.v_star = v_star
        self.epsilon = epsilon
        self.n_particles = n_particles
        self.n_iterations = n_iterations
        self.stagnation_resample = stagnation_resample
        self.init = init
        self.higher_is_better = higher_is_better
        self.min_fraction = min_fraction
        self.top_n = top_n
        self.n_values = n_values
        self.budget = budget
        self.random_state = random_state

    def _search(self, idx, y):
        cfg = SwarmConfig(alpha=self.alpha, c1=self.c1, c2=self.c2, v_star=self.v_star, epsilon=self.epsilon,
                          n_particles=self.n_particles, n_iterations=self.n_iterations,
                          stagnation_resample=self.stagnation_resample, init=self.init,
                          seed=int(self.random_state or 0))
        res = run_dpso(idx, y, self._metric(), self._size_filter(), cfg, self.top_n, self.budget)
        self.infobase_ = res.infobase
        return res
