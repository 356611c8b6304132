"""Acceptance criteria 1-9.

Each ``criterion_N`` returns ``(ok, detail)``; the pytest wrappers record the
outcome for the terminal summary and assert it.  ``python tests/test_acceptance.py``
runs them all and prints one line per criterion.
"""
from __future__ import annotations

import filecmp
import math
import os
import sys
import tempfile
import time
from collections import Counter

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

import conftest  # noqa: E402
from dagtools import H_LEVEL3, isomorphic, literal_value, mutate, random_dag, with_literal  # noqa: E402
from test_learners import exhaustive_split, lwlr_oracle, ts  # noqa: E402

from patterncard.canonhash import canonicalize, pattern_hash  # noqa: E402
from patterncard.featurize import (  # noqa: E402
    COLUMN_UNIQUES_FEATURE, LITERAL_VALUE_FEATURE, OP_CODE_FEATURE, featurize, slot_ranges,
)
from patterncard.hierarchy import (  # noqa: E402
    DEFAULT_BIAS, BiasTable, EstimatorStore, StoreConfig, bias_adjust, default_levels,
)
from patterncard.learners import (  # noqa: E402
    GbdtParams, KernelParams, fit_gbdt, fit_lwlr, predict_rbf_oneshot,
)
from patterncard.querygraph import NodeType, Schema, parse_sql  # noqa: E402
from patterncard.simulate import (  # noqa: E402
    RunConfig, bucket_size_medians, emit_reports, heuristic_share_by_decile, percentile,
    run_simulation, summarize,
)

F1 = [LITERAL_VALUE_FEATURE, OP_CODE_FEATURE, COLUMN_UNIQUES_FEATURE]
N_DAGS = 10_000
N_PERMS = 10


# -- 1 and 2: hashing and features over random orbits ------------------------------------------


def _orbits(seed=2024):
    rng = np.random.default_rng(seed)
    for _ in range(N_DAGS):
        d = random_dag(rng, 3, 40)
        perms = [d.relabel(rng.permutation(d.n_nodes).tolist()) for _ in range(N_PERMS)]
        yield rng, d, perms


_ORBIT_CACHE: dict = {}


def _orbit_run():
    """Hash every orbit member plus one mutant per DAG; shared by criteria 1 and 2."""
    if "r" in _ORBIT_CACHE:
        return _ORBIT_CACHE["r"]
    hash_seconds = 0.0
    bad_orbits = 0
    mutant_collisions = 0
    cross = 0
    seen: dict[bytes, object] = {}
    kept = []
    for rng, d, perms in _orbits():
        t0 = time.perf_counter()
        h = pattern_hash(d, H_LEVEL3)
        hp = [pattern_hash(p, H_LEVEL3) for p in perms]
        m = mutate(rng, d, H_LEVEL3)
        hm = pattern_hash(m, H_LEVEL3)
        hash_seconds += time.perf_counter() - t0
        bad_orbits += any(x != h for x in hp)
        if hm == h and not isomorphic(d, m, H_LEVEL3):
            mutant_collisions += 1
        other = seen.setdefault(h, d)
        if other is not d and not isomorphic(other, d, H_LEVEL3):
            cross += 1
        kept.append((rng, d, perms))
    r = dict(hash_seconds=hash_seconds, bad_orbits=bad_orbits, mutant_collisions=mutant_collisions,
             cross=cross, distinct=len(seen), kept=kept)
    _ORBIT_CACHE["r"] = r
    return r


def criterion_1():
    r = _orbit_run()
    ok = (r["bad_orbits"] == 0 and r["mutant_collisions"] == 0 and r["cross"] == 0
          and r["hash_seconds"] < 30.0)
    return ok, (f"{N_DAGS} DAGs x {N_PERMS} perms: {r['bad_orbits']} unstable orbits, "
                f"{r['mutant_collisions']} mutant + {r['cross']} cross-orbit collisions, "
                f"{r['distinct']} distinct hashes, hashing {r['hash_seconds']:.1f}s (<30s)")


def criterion_2():
    r = _orbit_run()
    dim_bad = vec_bad = 0
    pert_bad = pert_checked = 0
    for i, (rng, d, perms) in enumerate(r["kept"]):
        _, x = featurize(d, H_LEVEL3, F1)
        for p in perms:
            _, xp = featurize(p, H_LEVEL3, F1)
            dim_bad += xp.dim != x.dim
            vec_bad += xp.dim != x.dim or not np.array_equal(xp.values, x.values)
        if i % 5:
            continue
        # literal perturbation on nodes whose canonical row is unique
        c = canonicalize(d, H_LEVEL3)
        counts = Counter(c.rows)
        slots = slot_ranges(d, c.order, F1)
        for j in d.nodes_of(NodeType.LITERAL):
            if counts[c.rows[j]] != 1:
                continue
            kind = d.attrs[j]["kind"]
            e = with_literal(d, j, literal_value(rng, kind))
            ce, xe = featurize(e, H_LEVEL3, F1)
            pert_checked += 1
            changed = set(np.flatnonzero(xe.values != x.values).tolist())
            if ce.pattern != c.pattern or xe.dim != x.dim or not changed <= set(slots[j]):
                pert_bad += 1
    ok = dim_bad == 0 and vec_bad == 0 and pert_bad == 0 and pert_checked > 1000
    return ok, (f"{N_DAGS * N_PERMS} orbit pairs: {dim_bad} dim mismatches, {vec_bad} vector mismatches; "
                f"{pert_checked} literal perturbations, {pert_bad} leaked outside the slot range")


# -- 3: learner oracles ---------------------------------------------------------------------------


def criterion_3():
    rng = np.random.default_rng(11)
    lw = 0.0
    for _ in range(100):
        n, k = int(rng.integers(5, 40)), int(rng.integers(1, 6))
        X = rng.normal(size=(n, k))
        y = X @ rng.normal(size=k) + rng.normal(scale=0.5, size=n)
        c = rng.normal(size=k)
        sigma = float(rng.uniform(0.8, 3.0))
        m = fit_lwlr(ts(X, y), c, KernelParams(sigma), l2=1e-3)
        lw = max(lw, float(np.max(np.abs(m.weights - lwlr_oracle(X, y, c, sigma, 1e-3)))))
    rb = 0.0
    for _ in range(100):
        n, k = int(rng.integers(1, 60)), int(rng.integers(1, 6))
        X, y, c = rng.normal(size=(n, k)), rng.normal(size=n), rng.normal(size=k)
        num = den = 0.0
        for xi, yi in zip(X, y):
            w = math.exp(-sum((a - b) ** 2 for a, b in zip(xi, c)) / 2.0 ** 2)
            num += w * yi
            den += w
        rb = max(rb, abs(predict_rbf_oneshot(ts(X, y), c, KernelParams(2.0)) - num / den))
    split_bad = 0
    for _ in range(300):
        n = int(rng.integers(4, 33))
        X = rng.normal(size=(n, int(rng.integers(1, 5))))
        y = rng.normal(size=n) + 2 * (X[:, -1] > 0.3)
        tree = fit_gbdt(ts(X, y), GbdtParams(n_rounds=1, max_depth=1, learning_rate=1.0,
                                              min_samples_leaf=1)).trees[0]
        _, f, thr, _, _ = exhaustive_split(X, y)
        split_bad += tree.feature[0] != f or abs(tree.threshold[0] - thr) > 1e-12
    ok = lw <= 1e-8 and rb <= 1e-12 and split_bad == 0
    return ok, (f"LWLR max |diff| {lw:.1e} (<=1e-8), RBF max |diff| {rb:.1e} (<=1e-12), "
                f"GBDT first split mismatches {split_bad}/300")


# -- 4: fallback schedule -------------------------------------------------------------------------


SCHEMA = Schema.from_dict({"movies": {
    "id": {"type": "int", "min": 1, "max": 1000, "num_uniques": 1000, "table_size": 1000},
    "stars": {"type": "int", "min": 0, "max": 10, "num_uniques": 11, "table_size": 1000},
    "year": {"type": "int", "min": 1900, "max": 2025, "num_uniques": 126, "table_size": 1000},
}})


def _q(col, op, v):
    return parse_sql(f"SELECT * FROM movies WHERE movies.{col} {op} {v}", SCHEMA)


def _truth(col, op, v):
    return int(abs(v - 1900) * 3 + len(op) * 7 + len(col)) % 997 + 1


def fallback_schedule(seed: int):
    """Returns [(step, provenance, expected, cardinality)] for the scripted schedule.

    Phase A: 10 observations of ``year > v``, probing that pattern before each
    and once after (level-3 bucket reaches 10).
    Phase B: 40 observations on ``year`` with four other operators, probing
    ``year <> v`` after each (level-2 bucket reaches 50).
    Phase C: 50 observations on ``id``, probing ``stars < v`` after each
    (level-1 bucket for int columns of movies reaches 100).
    """
    store = EstimatorStore(StoreConfig(levels=default_levels((100, 50, 10)), seed=seed), SCHEMA)
    rng = np.random.default_rng(seed)
    out = []

    def probe(col, op, v, expected):
        r = store.estimate(_q(col, op, v), heuristic=500)
        out.append((len(out), r.provenance, expected, r.cardinality))

    def observe(col, op, v):
        store.observe(_q(col, op, v), _truth(col, op, v), heuristic_estimate=500)

    for i in range(10):
        v = int(rng.integers(1900, 2025))
        probe("year", ">", v, "heuristic")
        observe("year", ">", v)
    probe("year", ">", 1990, "level3")
    for i in range(40):
        op = ("<", "<=", ">=", "=")[i % 4]
        observe("year", op, int(rng.integers(1900, 2025)))
        probe("year", "<>", 1990, "level2" if 10 + i + 1 >= 50 else "heuristic")
    for i in range(50):
        op = ("<", ">", "=", "<=", ">=")[i % 5]
        observe("id", op, int(rng.integers(1, 1000)))
        probe("stars", "<", 5, "level1" if 50 + i + 1 >= 100 else "heuristic")
    return out


def criterion_4():
    a = fallback_schedule(7)
    b = fallback_schedule(7)
    wrong = [(s, p, e) for s, p, e, _ in a if p != e]
    seq = [p for _, p, _, _ in a]
    firsts = {p: seq.index(p) for p in ("level3", "level2", "level1")}
    ok = not wrong and a == b and firsts["level3"] < firsts["level2"] < firsts["level1"] and seq[0] == "heuristic"
    return ok, (f"{len(a)} probes, {len(wrong)} wrong provenances; first level3/level2/level1 at probe "
                f"{firsts['level3']}/{firsts['level2']}/{firsts['level1']} "
                f"(after 10/50/100 observations); rerun identical: {a == b}")


# -- 5: bias Monte-Carlo ----------------------------------------------------------------------------


def criterion_5(draws: int = 1_000_000):
    table = BiasTable(online=False)
    worst = 0.0
    rng = np.random.default_rng(5)
    parts = []
    for n in sorted(DEFAULT_BIAS):
        p, m = DEFAULT_BIAS[n]
        us = rng.random(draws).tolist()
        mean = math.fsum(bias_adjust(1.0, n, table, u) for u in us) / draws
        expected = p * m + (1 - p)
        rel = abs(mean - expected) / expected
        worst = max(worst, rel)
        parts.append(f"n={n}: {mean:.4g} vs {expected:.4g}")
    return worst < 0.01, f"{draws} draws per join count, max rel err {worst:.2e} (<1%); " + ", ".join(parts)


# -- 6 to 9: the standard synthetic run -------------------------------------------------------------


_RUN_CACHE: dict = {}


def standard_run():
    if "r" not in _RUN_CACHE:
        t0 = time.perf_counter()
        res = run_simulation(RunConfig(seed=0))
        _RUN_CACHE["r"] = (res, time.perf_counter() - t0)
    return _RUN_CACHE["r"]


def criterion_6():
    res, wall = standard_run()
    post = res.summary["after_warmup"]
    lp, hp = post["learned"]["percentiles"], post["heuristic"]["percentiles"]
    n_q = res.summary["n_queries"]
    ok = (n_q == 5000 and lp["p50"] < 2.5 and lp["p50"] < hp["p50"] and 2 * lp["p90"] <= hp["p90"]
          and wall < 600)
    return ok, (f"{n_q} queries, {post['learned']['count']} subqueries after warm-up: "
                f"P50 {lp['p50']:.3f} vs heuristic {hp['p50']:.3f}, P90 {lp['p90']:.2f} vs {hp['p90']:.2f} "
                f"(ratio {hp['p90'] / lp['p90']:.1f}x), run {wall:.0f}s (<600s)")


def criterion_7():
    res, _ = standard_run()
    t = res.timings
    ok = t["overhead_seconds"] < 60 and t["mean_estimate_us_small_buckets"] < 1000
    return ok, (f"observe {t['observe_seconds']:.1f}s + refits {t['fit_seconds']:.1f}s = "
                f"{t['overhead_seconds']:.1f}s (<60s); mean estimate over buckets <=1000 rows "
                f"{t['mean_estimate_us_small_buckets']:.0f}us (<1000us)")


def criterion_8():
    res, _ = standard_run()
    small, large = bucket_size_medians(res.log, 10, 50)
    return large <= 0.5 * small, f"median Q-error {small:.3f} at bucket_size<10, {large:.3f} at >=50 (ratio {large / small:.3f} <= 0.5)"


def criterion_9():
    res, _ = standard_run()
    again = run_simulation(RunConfig(seed=0))
    with tempfile.TemporaryDirectory() as tmp:
        a = emit_reports(res, os.path.join(tmp, "a"))["replay"]
        b = emit_reports(again, os.path.join(tmp, "b"))["replay"]
        same = filecmp.cmp(a, b, shallow=False)
        size = os.path.getsize(a)
    return same, f"two seed-0 runs: replay.csv ({size} bytes, {len(res.log)} rows) identical: {same}"


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
            6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9}


def _check(n):
    ok, detail = CRITERIA[n]()
    conftest.ACCEPTANCE_RESULTS[n] = (ok, detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


@pytest.mark.parametrize("n", [pytest.param(n, marks=pytest.mark.slow) if n >= 6 else n
                               for n in sorted(CRITERIA)])
def test_criterion(n):
    _check(n)


# -- whole-run properties beyond the numbered criteria -----------------------------------------------


@pytest.mark.slow
def test_reliance_on_heuristic_shrinks():
    res, _ = standard_run()
    share = heuristic_share_by_decile(res.log)
    assert all(b <= a for a, b in zip(share, share[1:])), share


@pytest.mark.slow
def test_cumulative_median_after_warmup_does_not_rise():
    res, _ = standard_run()
    warmup = res.config.warmup_queries
    series = [row["learned_p50"] for row in res.cumulative if row["n_queries"] >= warmup]
    assert len(series) == 41
    assert all(b <= a for a, b in zip(series, series[1:])), series


@pytest.mark.slow
def test_summary_matches_replay_log():
    res, _ = standard_run()
    again = summarize(res.log, res.config.warmup_queries)
    assert again["all"] == res.summary["all"] and again["after_warmup"] == res.summary["after_warmup"]
    qs = [r.q_error for r in res.log]
    p = res.summary["all"]["learned"]["percentiles"]
    assert p["p50"] == percentile(qs, 50) and 1 <= p["p50"] <= p["p90"] <= p["p95"]


if __name__ == "__main__":
    failed = 0
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]()
        failed += not ok
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}", flush=True)
    sys.exit(1 if failed else 0)
