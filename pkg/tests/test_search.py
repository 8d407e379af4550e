import math

import numpy as np
import pytest

from rankaudit.exceptions import ConfigError, SearchFailedError
from rankaudit.groupspace import GroupIndex, SizeFilter, enumerate_valid_groups
from rankaudit.search import (
    brute_force_search,
    Deadline,
    compute_uf,
    formula_budget,
    rank_groups,
    threshold_search,
)

HIB = ("y", True)


def random_instance(seed, n=400, bounds=(3, 4, 5)):
    rng = np.random.default_rng(seed)
    codes = rng.integers(0, bounds, size=(n, len(bounds)))
    values = rng.random(n)
    values[rng.random(n) < 0.05] = np.nan
    return GroupIndex(codes, bounds), values


def brute_oracle(idx, values, min_count=1):
    """Every pair of valid groups, compared directly."""
    means = {}
    for key, members in idx.groups.items():
        v = values[members]
        v = v[~np.isnan(v)]
        if len(members) >= min_count and v.size:
            means[key] = v.mean()
    return max(abs(a - b) for a in means.values() for b in means.values())


@pytest.mark.parametrize("a, d, expected", [(0.8, 0.6, 0.2), (0.5, 0.5, 0.0), (0.6, 0.8, 0.2)])
def test_compute_uf(a, d, expected):
    assert abs(compute_uf(a, d) - expected) <= 1e-12


def test_formula_budget():
    assert abs(formula_budget(6040, 294) - 31.67) <= 1e-9


def test_two_group_instance():
    idx = GroupIndex(np.array([[0], [0], [1]]), (2,))
    res = brute_force_search(idx, np.array([0.2, 0.4, 0.7]), HIB)
    assert abs(res.uf - 0.4) <= 1e-12
    assert res.best.key == (1,) and res.worst.key == (0,)
    assert res.groups_evaluated == 2


@pytest.mark.parametrize("seed", range(5))
def test_brute_matches_pair_oracle(seed):
    idx, values = random_instance(seed)
    res = brute_force_search(idx, values, HIB)
    assert abs(res.uf - brute_oracle(idx, values)) <= 1e-12
    assert res.groups_evaluated == len(enumerate_valid_groups(idx))
    assert res.top_advantaged[0] == res.best and res.top_disadvantaged[0] == res.worst
    means = [g.mean for g in res.top_advantaged]
    assert means == sorted(means, reverse=True) and len(means) <= 10


def test_lower_is_better_flips_direction():
    idx = GroupIndex(np.array([[0], [1], [2]]), (3,))
    res = brute_force_search(idx, np.array([0.1, 0.5, 0.9]), ("urp", False))
    assert res.best.key == (0,) and res.worst.key == (2,)
    assert abs(res.uf - 0.8) <= 1e-12


def test_ties_break_lexicographically():
    idx = GroupIndex(np.array([[2], [0], [1]]), (3,))
    res = brute_force_search(idx, np.array([0.5, 0.5, 0.1]), HIB)
    assert res.best.key == (0,)
    assert [g.key for g in rank_groups(res.group_means, True, None, advantaged=False)] == [(1,), (0,), (2,)]


def test_fewer_than_two_groups_fails():
    idx = GroupIndex(np.array([[0], [0]]), (2,))
    with pytest.raises(SearchFailedError):
        brute_force_search(idx, np.array([0.1, 0.2]), HIB)


@pytest.mark.parametrize("seed", range(3))
def test_shift_and_permutation_invariance(seed):
    idx, values = random_instance(seed)
    base = brute_force_search(idx, values, HIB).uf
    assert abs(brute_force_search(idx, values + 3.5, HIB).uf - base) <= 1e-9
    perm = np.random.default_rng(seed).permutation(idx.n_users)
    pidx = GroupIndex(idx.codes[perm], idx.boundaries)
    assert abs(brute_force_search(pidx, values[perm], HIB).uf - base) <= 1e-12


def test_relabel_invariance():
    idx, values = random_instance(4)
    res = brute_force_search(idx, values, HIB)
    # reverse the codes of attribute 1
    codes = idx.codes.copy()
    codes[:, 1] = idx.boundaries[1] - 1 - codes[:, 1]
    rel = brute_force_search(GroupIndex(codes, idx.boundaries), values, HIB)
    assert abs(rel.uf - res.uf) <= 1e-12
    flip = lambda k: (k[0], idx.boundaries[1] - 1 - k[1], k[2])  # noqa: E731
    assert rel.best.mean == res.best.mean and rel.best.key == flip(res.best.key)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("theta", [0.0, 0.5, 1.0, 2.0, 5.0])
def test_threshold_bounded_by_brute(seed, theta):
    idx, values = random_instance(seed)
    brute = brute_force_search(idx, values, HIB)
    try:
        thr = threshold_search(idx, values, HIB, theta)
    except SearchFailedError:
        return
    assert thr.uf <= brute.uf
    if theta == 0.0:
        assert thr.uf == brute.uf and thr.best == brute.best and thr.worst == brute.worst


def test_threshold_forced_pair():
    codes = np.array([[0]] * 10 + [[1]] * 10 + [[2]] * 1 + [[3]] * 1)
    values = np.array([0.5] * 10 + [0.6] * 10 + [1.0, 0.0])
    idx = GroupIndex(codes, (4,))
    thr = threshold_search(idx, values, HIB, theta=10.0)
    assert thr.groups_evaluated == 2
    assert abs(thr.uf - 0.1) <= 1e-12
    assert brute_force_search(idx, values, HIB).uf == 1.0


def test_threshold_rejects_negative():
    idx, values = random_instance(0)
    with pytest.raises(ConfigError):
        threshold_search(idx, values, HIB, -1)


def test_size_filter_hides_small_groups():
    codes = np.array([[0]] * 5 + [[1]] * 5 + [[2]])
    values = np.array([0.5] * 5 + [0.4] * 5 + [0.0])
    res = brute_force_search(GroupIndex(codes, (3,)), values, HIB, SizeFilter(0.2))
    assert res.worst.key == (1,) and res.groups_evaluated == 2


def test_budget_truncates_and_shuffles(monkeypatch):
    idx, values = random_instance(0, n=3000, bounds=(6, 7, 8))
    n_valid = len(enumerate_valid_groups(idx))
    calls = {"n": 0}

    def check(self):
        # expire after 20 evaluations
        calls["n"] += 1
        self.expired = calls["n"] > 20
        return self.expired

    monkeypatch.setattr(Deadline, "check", check)
    res = brute_force_search(idx, values, HIB, budget=1.0, seed=3)
    assert res.truncated and res.groups_evaluated == 20 < n_valid
    calls["n"] = 0
    again = brute_force_search(idx, values, HIB, budget=1.0, seed=4)
    # a different seed visits a different random subset of groups
    assert set(again.group_means) != set(res.group_means)
    assert set(res.group_means) != set(enumerate_valid_groups(idx)[:20])


def test_budget_generous_is_exact():
    idx, values = random_instance(0, n=3000, bounds=(6, 7, 8))
    full = brute_force_search(idx, values, HIB, budget=1e6, seed=3)
    assert not full.truncated and math.isclose(full.uf, brute_force_search(idx, values, HIB).uf)


def test_budget_too_small_fails_cleanly():
    idx, values = random_instance(0)
    with pytest.raises(SearchFailedError):
        brute_force_search(idx, values, HIB, budget=1e-12)
