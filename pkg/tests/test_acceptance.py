"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -s -v``. The large
instances are generated once per module and shared by criteria 3, 4, 5, 8
and 10.
"""

import json
import math
import random
import time
from collections import Counter

import numpy as np
import pytest
from scipy.stats import binomtest

from rankaudit.catalog import Candidate, UserRecord
from rankaudit.cli import main
from rankaudit.dpso import SwarmConfig, initialize_swarms, run_dpso
from rankaudit.exceptions import UndefinedGroupError, UndefinedMetricError
from rankaudit.groupspace import build_index
from rankaudit.metrics import MetricId, compute_table, group_mean, user_auc, user_mrr, user_ndcg
from rankaudit.mitigation import MitigationPlan, evaluate_mitigation, select_worst_groups
from rankaudit.report import strip_wall_times
from rankaudit.search import GroupEvaluator, brute_force_search, formula_budget, threshold_search
from rankaudit.syngen import SynConfig, generate, write_synthetic

from conftest import biased_dataset, rare_worst_config
from test_metrics import _urd, _urp, auc_oracle, user

pytestmark = pytest.mark.slow

METRICS = ("auc", "mrr", "ndcg", "urd", "urp")
TOL = 1e-9
TRACES = []


def verdict(capsys, n, title, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {n:>2} {title}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


def monotone(trace, maximize_a=True):
    """gbest_a never gets worse and gbest_d never gets better, iteration to iteration."""
    sign = 1 if maximize_a else -1
    prev_a = prev_d = None
    for rec in trace:
        a = rec["gbest_a"] and rec["gbest_a"]["fitness"]
        d = rec["gbest_d"] and rec["gbest_d"]["fitness"]
        if prev_a is not None and (a is None or sign * (a - prev_a) < 0):
            return False
        if prev_d is not None and (d is None or sign * (d - prev_d) > 0):
            return False
        prev_a, prev_d = a, d
    return True


# -- shared fixtures -------------------------------------------------------------

def large_config(i):
    # generator defaults apart from size; six attributes put 15k-62.5k users at roughly 14k-50k groups
    return SynConfig(n_users=15000 + 2500 * i, n_values=(10, 10, 10, 10, 10, 8), metric=METRICS[i % 5],
                     seed=100 + i)


@pytest.fixture(scope="module")
def large_runs():
    runs = []
    t0 = time.perf_counter()
    for i in range(20):
        cfg = large_config(i)
        ds, gt = generate(cfg)
        idx = build_index(ds)
        table = compute_table(ds, [cfg.metric])
        brute = brute_force_search(idx, table, cfg.metric)
        dpso = run_dpso(idx, table, cfg.metric, cfg=SwarmConfig(epsilon=0.005, n_iterations=20), seed=i)
        thresh = threshold_search(idx, table, cfg.metric, theta=0.01)
        TRACES.append((MetricId(cfg.metric).higher_is_better, dpso.trace))
        runs.append({"cfg": cfg, "gt": gt, "idx": idx, "table": table, "n_users": ds.n_users,
                     "brute": brute, "dpso": dpso, "thresh": thresh})
    return runs, time.perf_counter() - t0


@pytest.fixture(scope="module")
def small_runs():
    shapes = [(2, 7, 21), (4, 5, 6, 8), (3, 10, 12), (6, 6, 6, 6), (2, 3, 4, 5, 6)]
    out = []
    t0 = time.perf_counter()
    for i in range(50):
        cfg = SynConfig(n_users=800 + 40 * i, n_values=shapes[i % 5], metric=METRICS[(i // 5) % 5], seed=i)
        ds, gt = generate(cfg)
        idx = build_index(ds)
        out.append((cfg, gt, idx, compute_table(ds, [cfg.metric])))
    return out, time.perf_counter() - t0


# -- criteria --------------------------------------------------------------------

def test_c01_metric_exactness(capsys):
    t0 = time.perf_counter()
    perfect = user([("r", 1.0, True)] + [(f"n{i}", 0.5 - i / 100, False) for i in range(49)])
    tied = user([("r", 0.5, True)] + [(f"n{i}", 0.5, False) for i in range(5)])
    mixed = user([("n1", 0.9, False), ("r", 0.6, True), ("n2", 0.3, False), ("n3", 0.1, False)])

    def ranked(rank, k):
        return user([(f"i{j}", 1 - j / 10, j + 1 == rank) for j in range(6)], k=k)

    cases = [
        (user_auc(perfect), 1.0), (user_auc(tied), 0.5), (user_auc(mixed), 2 / 3),
        (user_mrr(ranked(1, 3)), 1.0), (user_mrr(ranked(3, 3)), 1 / 3), (user_mrr(ranked(4, 3)), 0.0),
        (user_ndcg(ranked(1, 5)), 1.0), (user_ndcg(ranked(2, 5)), 1 / math.log2(3)),
        (_urd([{"a", "b"}] * 4), 0.0), (_urd([{"a"}, {"b"}, {"c"}, {"d"}]), 1.0), (_urd([{"a"}, {"a"}, {"b"}]), 2 / 3),
        (_urp([4, 6], [5, 5]), 0.0), (_urp([10, 10], [2, 3]), 7.5), (_urp([4, 6], [1, 3]), 3.0),
    ]
    errors = [abs(got - want) for got, want in cases]

    guards = 0
    for fn, u in [(user_auc, user([("a", 0.9, True), ("b", 0.1, True)])),
                  (user_ndcg, user([(f"i{j}", 1 - j / 10, False) for j in range(6)], k=5))]:
        try:
            fn(u)
        except UndefinedMetricError:
            guards += 1

    ds = biased_dataset()
    table = compute_table(ds)
    auc = table.values[MetricId.AUC]
    group_ok = abs(group_mean(table, "auc", [0]) - auc[0]) <= TOL
    try:
        group_mean(table, "auc", [])
    except UndefinedGroupError:
        guards += 1

    rng = random.Random(11)
    oracle_err = 0.0
    for _ in range(1000):
        n = rng.randint(2, 50)
        cands = [Candidate(f"i{j}", rng.randint(0, 8) / 8, rng.random() < 0.3) for j in range(n)]
        if all(c.relevant for c in cands) or not any(c.relevant for c in cands):
            cands[0] = cands[0]._replace(relevant=not cands[0].relevant)
        u = UserRecord("u", (0,), (), 1, tuple(cands))
        oracle_err = max(oracle_err, abs(user_auc(u) - auc_oracle(cands)))
    elapsed = time.perf_counter() - t0
    ok = max(errors) <= TOL and oracle_err <= TOL and guards == 3 and group_ok and elapsed < 5
    verdict(capsys, 1, "metric exactness", ok,
            f"{len(cases)} examples max err {max(errors):.1e}, AUC oracle max err {oracle_err:.1e}, {elapsed:.2f}s")


def test_c02_oracle_correctness(capsys, small_runs):
    runs, gen_time = small_runs
    t0 = time.perf_counter()
    bad = []
    max_groups = 0
    for cfg, gt, idx, table in runs:
        res = brute_force_search(idx, table, cfg.metric)
        max_groups = max(max_groups, idx.n_groups)
        if (res.best.key, res.worst.key, res.uf) != (gt.best_key, gt.worst_key, gt.uf):
            bad.append(cfg.seed)
    search_time = time.perf_counter() - t0
    ok = not bad and max_groups <= 5000 and gen_time + search_time < 60
    verdict(capsys, 2, "oracle correctness", ok,
            f"{50 - len(bad)}/50 exact, max {max_groups} groups, generation {gen_time:.1f}s + search {search_time:.1f}s")


def test_c03_dpso_accuracy(capsys, large_runs):
    runs, elapsed = large_runs
    acc = [r["dpso"].uf / r["brute"].uf for r in runs]
    sizes = [r["idx"].n_groups for r in runs]
    mean = float(np.mean(acc))
    good = sum(a >= 0.85 for a in acc)
    per_metric = {m: round(float(np.mean(acc[i::5])), 3) for i, m in enumerate(METRICS)}
    ok = mean >= 0.90 and good >= 16 and min(sizes) >= 10000 and max(sizes) <= 50000 and elapsed < 600
    verdict(capsys, 3, "dpso accuracy", ok,
            f"mean {mean:.3f}, {good}/20 >= 0.85, by metric {per_metric}, groups {min(sizes)}-{max(sizes)}, "
            f"{elapsed:.0f}s")


def test_c04_dpso_efficiency(capsys, large_runs):
    runs, _ = large_runs
    ratios = [r["dpso"].groups_evaluated / r["brute"].groups_evaluated for r in runs]
    faster = [r["dpso"].wall_time < r["brute"].wall_time for r in runs if r["idx"].n_groups >= 10000]
    speed = [r["brute"].wall_time / r["dpso"].wall_time for r in runs]
    ok = max(ratios) <= 0.2 and all(faster)
    verdict(capsys, 4, "dpso efficiency", ok,
            f"eval ratio max {max(ratios):.3f}, faster on {sum(faster)}/{len(faster)}, "
            f"speed-up {min(speed):.1f}x-{max(speed):.1f}x")


def test_c05_threshold_bound(capsys, large_runs, small_runs):
    runs, _ = large_runs
    pairs = [(r["thresh"].uf, r["brute"].uf) for r in runs]
    for cfg, _, idx, table in small_runs[0]:
        pairs.append((threshold_search(idx, table, cfg.metric, theta=0.01).uf,
                      brute_force_search(idx, table, cfg.metric).uf))
    bounded = all(t <= b for t, b in pairs)
    ds, gt = generate(rare_worst_config())
    idx = build_index(ds)
    table = compute_table(ds, ["auc"])
    t_uf = threshold_search(idx, table, "auc", theta=1.0).uf
    b_uf = brute_force_search(idx, table, "auc").uf
    ok = bounded and t_uf < b_uf
    verdict(capsys, 5, "threshold bound", ok,
            f"threshold <= brute on {sum(t <= b for t, b in pairs)}/{len(pairs)}, "
            f"rare-worst fixture theta=1: {t_uf:.3f} vs {b_uf:.3f}")


def hit_rate(idx, positions):
    return float(np.mean([tuple(row) in idx.groups for row in positions.tolist()]))


def test_c06_distribution_init(capsys):
    ds, _ = generate(SynConfig(n_users=3000, n_values=(10, 10, 10, 10, 8), metric="auc", seed=6))
    idx = build_index(ds)
    n_pt, _ = SwarmConfig().resolve(idx.n_groups)
    wins = losses = 0
    dist_rates, unif_rates = [], []
    for t in range(100):
        rates = []
        for init in ("distribution", "uniform"):
            rng = np.random.default_rng(t)
            sa, sd = initialize_swarms(idx, SwarmConfig(init=init), rng, n_pt)
            rates.append(hit_rate(idx, np.vstack([sa.positions, sd.positions])))
        dist_rates.append(rates[0])
        unif_rates.append(rates[1])
        wins += rates[0] > rates[1]
        losses += rates[0] < rates[1]
    p = binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue
    ok = np.mean(dist_rates) > np.mean(unif_rates) and p < 0.01
    verdict(capsys, 6, "distribution init", ok,
            f"hit rate {np.mean(dist_rates):.3f} vs {np.mean(unif_rates):.3f}, "
            f"sign test {wins}-{losses} p={p:.2e}")


def test_c07_memoization(capsys, small_runs, monkeypatch):
    counts = Counter()
    original = GroupEvaluator.__call__

    def counting(self, key):
        counts[key] += 1
        return original(self, key)

    monkeypatch.setattr(GroupEvaluator, "__call__", counting)
    consistent = hits = worst = 0
    runs = small_runs[0][:20]
    for i, (cfg, _, idx, table) in enumerate(runs):
        counts.clear()
        res = run_dpso(idx, table, cfg.metric, cfg=SwarmConfig(n_iterations=10), seed=i)
        TRACES.append((MetricId(cfg.metric).higher_is_better, res.trace))
        consistent += res.extra["evaluator_calls"] == len(res.infobase) == res.groups_evaluated
        hits += res.extra["infobase_hits"] > 0
        worst = max(worst, max(counts.values()))
    ok = worst == 1 and consistent == len(runs) and hits == len(runs)
    verdict(capsys, 7, "memoization", ok,
            f"max evaluations per key {worst}, calls == insertions on {consistent}/{len(runs)}, "
            f"hits > 0 on {hits}/{len(runs)}")


def test_c08_monotone_gbest(capsys, large_runs, small_runs):
    for i, (cfg, _, idx, table) in enumerate(small_runs[0]):
        for seed in range(3):
            res = run_dpso(idx, table, cfg.metric, seed=100 * i + seed)
            TRACES.append((MetricId(cfg.metric).higher_is_better, res.trace))
    good = sum(monotone(tr, hib) for hib, tr in TRACES)
    ok = good == len(TRACES) and len(TRACES) >= 170
    verdict(capsys, 8, "monotone gbest", ok, f"{good}/{len(TRACES)} traces monotone")


def test_c09_mitigation_direction(capsys):
    ds = biased_dataset()
    table, idx = compute_table(ds), build_index(ds)
    checks = {}
    for metric, strategy in (("urp", "popularity_calibrate"), ("urd", "diversify")):
        targets = select_worst_groups(brute_force_search(idx, table, metric), 0.5)
        rep = evaluate_mitigation(ds, MitigationPlan(metric, targets, strategy), table, idx)
        t = rep.targeted_means[metric]
        targeted = set(np.concatenate([idx.members(k) for k in targets]).tolist())
        untouched = all(rep.dataset.users[i] is ds.users[i] for i in range(ds.n_users) if i not in targeted)
        if metric == "urp":
            uf = rep.overall_uf["urp"]
            checks["urp"] = t["after"] < t["before"] and uf["uf_after"] <= uf["uf_before"] and untouched
            detail_urp = f"URP {t['before']:.2f}->{t['after']:.2f}, UF {uf['uf_before']:.2f}->{uf['uf_after']:.2f}"
        else:
            checks["urd"] = t["after"] > t["before"] and untouched
            detail_urd = f"URD {t['before']:.3f}->{t['after']:.3f}"
    verdict(capsys, 9, "mitigation direction", all(checks.values()), f"{detail_urp}; {detail_urd}")


def test_c10_budget(capsys, large_runs):
    runs, _ = large_runs
    r = max(runs, key=lambda r: r["idx"].n_groups)
    idx, table, metric = r["idx"], r["table"], r["cfg"].metric
    budget = formula_budget(r["n_users"], idx.n_groups)
    ev = GroupEvaluator(idx, table.values[MetricId(metric)])
    latency = 0.0
    for key in list(idx.groups)[:5000]:
        t0 = time.perf_counter()
        ev(key)
        latency = max(latency, time.perf_counter() - t0)
    walls = {
        "brute": brute_force_search(idx, table, metric, budget=budget).wall_time,
        "threshold": threshold_search(idx, table, metric, theta=0.01, budget=budget).wall_time,
        "dpso": run_dpso(idx, table, metric, cfg=SwarmConfig(epsilon=0.005, n_iterations=20), budget=budget,
                         seed=0).wall_time,
    }
    ok = all(w <= budget + latency for w in walls.values())
    verdict(capsys, 10, "budget compliance", ok,
            f"{idx.n_groups} groups, budget {budget:.1f}s, latency {latency * 1e3:.2f}ms, "
            + ", ".join(f"{k} {v:.2f}s" for k, v in walls.items()))


def test_c11_determinism(capsys, tmp_path):
    cfg = SynConfig(n_users=3000, n_values=(4, 5, 6, 8), metric="ndcg", seed=11)
    ds, gt = generate(cfg)
    data = tmp_path / "data"
    write_synthetic(ds, gt, data)
    commands = {
        "dpso": ["test", "--data", str(data), "--seed", "7", "--with-brute"],
        "threshold": ["test", "--data", str(data), "--engine", "threshold", "--theta", "0.5"],
        "mitigate": ["mitigate", "--data", str(data), "--seed", "7", "--metric", "urd"],
    }
    identical = {}
    for name, argv in commands.items():
        bodies = set()
        for rep in range(3):
            out = tmp_path / f"{name}{rep}.json"
            assert main(argv + ["--out", str(out)]) == 0
            bodies.add(json.dumps(strip_wall_times(json.loads(out.read_bytes())), sort_keys=True))
        identical[name] = len(bodies) == 1
    verdict(capsys, 11, "determinism", all(identical.values()),
            ", ".join(f"{k} {'identical' if v else 'differs'} x3" for k, v in identical.items()))
