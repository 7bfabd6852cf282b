"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Criteria 4 and 5 share one session-scoped synthetic run (T = 2000, 50
replications per configuration, both feature modes).
"""
import os
import time

import numpy as np
import pytest

from balanced_bandits.environments import BUNDLED_DATASETS, SyntheticEnv, load_bundled
from balanced_bandits.harness import (
    ExperimentConfig,
    aggregate_and_write,
    run_experiment,
    run_synthetic,
    select_best,
    summarize,
)
from balanced_bandits.policies import PolicyConfig, expand_grid
from balanced_bandits.propensity import (
    PosteriorSnapshot,
    clip_weight,
    logit_objective,
    mc_propensity,
)
from balanced_bandits.regression import DesignData, LinearEstimate, fit_weighted_ridge

from conftest import dense_ridge_oracle

ACCEPTANCE_LINES = []
JOBS = os.cpu_count() or 1
KINDS = ("blts", "lints", "blucb", "linucb")


def report(number, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def _rel(a, b):
    scale = np.linalg.norm(b)
    return np.linalg.norm(a - b) / scale if scale > 0 else np.linalg.norm(a - b)


def test_c1_regression_oracle_equivalence():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    for i in range(200):
        d = int(rng.integers(1, 6))
        ridge = (0.0, 0.1, 1.0)[i % 3]
        n = int(rng.integers(d + 1 if ridge == 0.0 else 1, 21))
        X = rng.normal(size=(n, d))
        r = rng.normal(size=n)
        w = np.where(rng.random(n) < 0.5, 1.0, rng.uniform(1.0, 20.0, n))
        est = fit_weighted_ridge(DesignData(X, r, w), ridge)
        theta, cov = dense_ridge_oracle(X, r, w, ridge)
        worst = max(worst, _rel(est.theta_hat, theta), _rel(est.covariance, cov))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and elapsed < 5.0
    assert report(1, ok, f"200 instances, max rel err {worst:.2e} (<= 1e-8), {elapsed:.2f}s (< 5s)")


def test_c2_propensity_sanity():
    start = time.perf_counter()
    est = LinearEstimate(np.array([0.2, -0.4]), np.array([[0.5, 0.1], [0.1, 0.3]]), 1.0)
    snaps = [PosteriorSnapshot(0, (est, est))]
    p = mc_propensity(snaps, [1.0, 0.7], 0, 1.0, 10_000, np.random.default_rng(0))
    triples = [clip_weight(0.5, 0.1), clip_weight(0.05, 0.1), clip_weight(0.0, 0.01)]
    elapsed = time.perf_counter() - start
    ok = abs(p - 0.5) <= 0.015 and triples == [2.0, 10.0, 100.0] and elapsed < 10.0
    assert report(2, ok, f"symmetric p = {p:.4f} (0.5 +/- 0.015), clip = {triples}, {elapsed:.2f}s")


def test_c3_logit_gradient_check():
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        n, d, K = int(rng.integers(3, 15)), int(rng.integers(1, 5)), int(rng.integers(2, 6))
        Z = np.hstack([np.ones((n, 1)), rng.normal(size=(n, d))])
        y = rng.integers(K, size=n)
        params = rng.normal(size=K * (d + 1))
        _, grad = logit_objective(params, Z, y, K, 1e-4)
        fd = np.empty_like(params)
        for j in range(params.size):
            e = np.zeros_like(params)
            e[j] = 1e-6
            fd[j] = (logit_objective(params + e, Z, y, K, 1e-4)[0] - logit_objective(params - e, Z, y, K, 1e-4)[0]) / 2e-6
        worst = max(worst, _rel(grad, fd))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-5 and elapsed < 10.0
    assert report(3, ok, f"50 instances, max rel err {worst:.2e} (<= 1e-5), {elapsed:.2f}s")


@pytest.fixture(scope="session")
def synthetic_runs():
    """Alpha grid per algorithm (gamma = 0.1), T = 2000, 50 replications, both modes."""
    policies = expand_grid(KINDS, gammas=[0.1])
    out = {}
    start = time.perf_counter()
    for mode in ("well", "mis"):
        cfg = ExperimentConfig(SyntheticEnv(mode), policies, horizon=2000, replications=50, jobs=JOBS)
        results = run_experiment(cfg)
        out[mode] = (results, summarize(results))
    out["elapsed"] = time.perf_counter() - start
    return out


def _pct(best):
    return {k: best[k]["pct_optimal_found"] for k in ("BLTS", "LinTS", "BLUCB", "LinUCB")}


@pytest.mark.slow
def test_c4_found_ordering(synthetic_runs):
    well = _pct(select_best(synthetic_runs["well"][1]))
    mis = _pct(select_best(synthetic_runs["mis"][1]))
    well_order = well["BLTS"] >= well["LinTS"] >= well["LinUCB"] and well["BLTS"] >= well["BLUCB"] >= well["LinUCB"]
    well_margin = well["BLTS"] - max(well["LinTS"], well["BLUCB"], well["LinUCB"])
    mis_margin = mis["BLTS"] - max(mis["LinTS"], mis["BLUCB"], mis["LinUCB"])
    elapsed = synthetic_runs["elapsed"]
    checks = {
        "well ordering": well_order,
        "well margin >= 5": well_margin >= 5.0,
        "mis BLTS strictly highest, margin >= 5": mis_margin >= 5.0,
        "runtime < 30 min": elapsed < 1800,
    }
    detail = (
        f"well {well} (margin {well_margin:+.0f}); mis {mis} (margin {mis_margin:+.0f}); "
        f"{elapsed / 60:.1f} min on {JOBS} cpu; failed: {[k for k, v in checks.items() if not v] or 'none'}"
    )
    assert report(4, all(checks.values()), detail)


@pytest.mark.slow
def test_c5_sublinear_regret(synthetic_runs):
    results, summary = synthetic_runs["well"]
    best = select_best(summary)["BLTS"]
    reps = [r for r in results if r.policy.kind.display == "BLTS" and r.policy.alpha == best["alpha"]
            and r.policy.gamma == best["gamma"] and r.error is None]
    r1000 = np.mean([r.regret_at(1000) for r in reps])
    r2000 = np.mean([r.regret_at(2000) for r in reps])
    ratio = r2000 / r1000
    assert report(
        5,
        ratio <= 1.7 and len(reps) == 50,
        f"BLTS(alpha={best['alpha']:g}, gamma={best['gamma']:g}) R(2000)/R(1000) = {r2000:.1f}/{r1000:.1f} = {ratio:.3f} (<= 1.7)",
    )


@pytest.mark.slow
def test_c6_classification_protocol():
    start = time.perf_counter()
    policies = [PolicyConfig(k, alpha=1.0) for k in KINDS]
    wins_ts, wins_ucb, rows = 0, 0, []
    for name in BUNDLED_DATASETS:
        env = load_bundled(name)
        assert env.n <= 5000
        cfg = ExperimentConfig(env, policies, horizon=env.n, replications=10, jobs=JOBS)
        norm = {row["policy"]: row["mean_norm_regret"] for row in summarize(run_experiment(cfg))}
        wins_ts += norm["BLTS"] <= norm["LinTS"]
        wins_ucb += norm["BLUCB"] <= norm["LinUCB"]
        rows.append(f"{name}: " + " ".join(f"{k}={v:.3f}" for k, v in norm.items()))
    elapsed = time.perf_counter() - start
    ok = wins_ts >= 3 and wins_ucb >= 3 and elapsed < 1200
    detail = f"BLTS<=LinTS on {wins_ts}/5, BLUCB<=LinUCB on {wins_ucb}/5, {elapsed / 60:.1f} min; " + "; ".join(rows)
    assert report(6, ok, detail)


def test_c7_determinism(tmp_path):
    policies = [PolicyConfig(k, alpha=1.0, mc_iterations=200) for k in KINDS]
    same = True
    for env in (SyntheticEnv("mis"), load_bundled("wine")):
        cfg = ExperimentConfig(env, policies, horizon=150, replications=2, seed=11, probe_size=200,
                               reference_samples=10_000)
        for tag in ("a", "b"):
            aggregate_and_write(run_experiment(cfg), tmp_path / f"{env.__class__.__name__}_{tag}")
        for csv in (tmp_path / f"{env.__class__.__name__}_a").glob("*.csv"):
            same &= csv.read_bytes() == (tmp_path / f"{env.__class__.__name__}_b" / csv.name).read_bytes()
    assert report(7, same, "repeated synthetic and dataset runs give bit-identical per-step CSVs")


def test_c8_unclipped_blts_reproduces_lints():
    env = SyntheticEnv("well")
    lints = PolicyConfig("lints", alpha=1.0)
    blts = PolicyConfig("blts", alpha=1.0, gamma=1.0)
    matches = []
    for seed in range(5):
        a = run_synthetic(env, lints, 0, 1000, seed=seed)
        b = run_synthetic(env, blts, 0, 1000, seed=seed)
        matches.append(bool(np.array_equal(a.arm, b.arm)))
    assert report(8, all(matches), f"arm sequences identical on seeds 0-4 (T = 1000): {matches}")
