"""Experiment runner: replications, regret accounting and result files."""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .environments import ClassificationEnv, SyntheticEnv, load_bundled, load_dataset, warm_start
from .policies import BanditPolicy, PolicyConfig, PolicyKind

log = logging.getLogger(__name__)

STEP_COLUMNS = ("replication", "t", "arm", "reward", "regret", "cum_regret", "propensity")
SUMMARY_KEYS = (
    "policy",
    "alpha",
    "gamma",
    "mean_cum_regret",
    "sd_cum_regret",
    "mean_norm_regret",
    "pct_optimal_found",
    "mean_found_step",
)

Environment = Union[SyntheticEnv, ClassificationEnv]


def parse_env(spec: str, label_column: Optional[str] = None) -> Environment:
    """Build an environment from ``synthetic-well``, ``synthetic-mis``,
    ``dataset:<path>`` or ``bundled:<name>``."""
    if spec == "synthetic-well":
        return SyntheticEnv("well")
    if spec == "synthetic-mis":
        return SyntheticEnv("mis")
    if spec.startswith("dataset:"):
        return load_dataset(spec.split(":", 1)[1], label_column)
    if spec.startswith("bundled:"):
        return load_bundled(spec.split(":", 1)[1])
    raise ValueError(f"unknown environment spec {spec!r}")


@dataclass
class ExperimentConfig:
    env: Environment
    policies: List[PolicyConfig]
    horizon: int = 2000
    replications: int = 50
    seed: int = 0
    probe_size: int = 1000
    agreement_threshold: float = 0.95
    checkpoint_every: int = 10
    reference_samples: int = 100_000
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.horizon < 1 or self.replications < 1:
            raise ValueError("horizon and replication count must be at least 1")
        if not self.policies:
            raise ValueError("at least one policy config is required")
        if self.probe_size < 1:
            raise ValueError("probe set must be nonempty")


@dataclass
class ReplicationResult:
    policy: PolicyConfig
    replication: int
    t: np.ndarray
    arm: np.ndarray
    reward: np.ndarray
    regret: np.ndarray
    cum_regret: np.ndarray
    propensity: np.ndarray
    found_step: Optional[int] = None
    n_online: int = 0
    synthetic: bool = False
    error: Optional[str] = None

    @property
    def total_regret(self) -> float:
        return float(self.cum_regret[-1]) if self.cum_regret.size else 0.0

    @property
    def normalized_regret(self) -> float:
        return self.total_regret / self.n_online if self.n_online else float("nan")

    def regret_at(self, t: int) -> float:
        """Cumulative regret after online round ``t``."""
        idx = np.searchsorted(self.t, t, side="right") - 1
        return float(self.cum_regret[idx]) if idx >= 0 else 0.0


class OptimalAssignmentDetector:
    """Checks whether a policy's greedy assignment agrees with a reference policy.

    Agreement is the fraction of probe contexts on which the policy's greedy arm
    equals the reference arm; ``found`` holds when it reaches ``threshold``.
    """

    def __init__(self, probe_features: np.ndarray, reference_arms: np.ndarray, threshold: float = 0.95):
        if len(probe_features) == 0:
            raise ValueError("probe set must be nonempty")
        self.probe_features = np.asarray(probe_features, dtype=float)
        self.reference_arms = np.asarray(reference_arms, dtype=int)
        self.threshold = float(threshold)

    def agreement(self, policy: BanditPolicy) -> float:
        if policy.cold:
            return 0.0
        return float(np.mean(policy.greedy_arms(self.probe_features) == self.reference_arms))

    def found(self, policy: BanditPolicy) -> bool:
        return self.agreement(policy) >= self.threshold


def best_linear_policy(env: SyntheticEnv, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Per-arm least-squares coefficients (K, d) of noisy rewards on the policy features."""
    X = env.context("online", rng, size=n_samples)
    Phi = env.features(X)
    noise = rng.normal(0.0, math.sqrt(env.noise_var), size=(n_samples, env.n_arms))
    R = env.expected(X) + noise
    coef, *_ = np.linalg.lstsq(Phi, R, rcond=None)
    return coef.T


@lru_cache(maxsize=16)
def build_detector(
    env: SyntheticEnv,
    probe_size: int = 1000,
    threshold: float = 0.95,
    seed: int = 0,
    reference_samples: int = 100_000,
) -> OptimalAssignmentDetector:
    """Probe set of online contexts with the reference assignment for ``env``.

    Well-specified: the true optimal arm.  Misspecified: the argmax of the
    best-in-class linear fit, estimated once from ``reference_samples`` draws.
    """
    probe_rng, ref_rng = (np.random.default_rng(s) for s in np.random.SeedSequence([seed, 7919]).spawn(2))
    raw = env.context("online", probe_rng, size=probe_size)
    phi = env.features(raw)
    if env.mode == "well":
        reference = env.optimal_arm(raw)
    else:
        coef = best_linear_policy(env, reference_samples, ref_rng)
        reference = np.argmax(phi @ coef.T, axis=1)
    return OptimalAssignmentDetector(phi, reference, threshold)


def _streams(seed: int, replication: int):
    env_ss, policy_ss, prop_ss = np.random.SeedSequence(seed + replication).spawn(3)
    return np.random.default_rng(env_ss), np.random.default_rng(policy_ss), prop_ss


def _pack(policy_cfg, replication, rows, found_step, n_online, synthetic) -> ReplicationResult:
    arr = np.array(rows, dtype=float).reshape(-1, 6)
    return ReplicationResult(
        policy=policy_cfg,
        replication=replication,
        t=arr[:, 0].astype(int),
        arm=arr[:, 1].astype(int),
        reward=arr[:, 2],
        regret=arr[:, 3],
        cum_regret=arr[:, 4],
        propensity=arr[:, 5],
        found_step=found_step,
        n_online=n_online,
        synthetic=synthetic,
    )


def run_synthetic(
    env: SyntheticEnv,
    policy_cfg: PolicyConfig,
    replication: int,
    horizon: int,
    seed: int = 0,
    detector: Optional[OptimalAssignmentDetector] = None,
    checkpoint_every: int = 10,
    policy=None,
) -> ReplicationResult:
    """One synthetic replication: warm start, then ``horizon`` online rounds.

    ``policy`` overrides the policy built from ``policy_cfg``; any object with
    ``choose(x, rng)`` and ``observe(x, arm, reward, p)`` will do.
    """
    env_rng, policy_rng, prop_ss = _streams(seed, replication)
    if policy is None:
        policy = BanditPolicy(policy_cfg, env.n_arms, env.n_features, prop_ss)
    rows = []
    warm_log: list = []
    warm_start(env, policy, env_rng, warm_log)
    for i, (x, arm, reward) in enumerate(warm_log):
        exp = env.expected(x)
        rows.append((i - len(warm_log) + 1, arm, reward, exp.max() - exp[arm], 0.0, 1.0 / env.n_arms))
    cum = 0.0
    found_step = None
    for t in range(1, horizon + 1):
        x = env.context("online", env_rng)
        phi = env.features(x)
        arm, p = policy.choose(phi, policy_rng)
        reward = env.reward(arm, x, env_rng)
        exp = env.expected(x)
        regret = float(exp.max() - exp[arm])
        cum += regret
        policy.observe(phi, arm, reward, p)
        rows.append((t, arm, reward, regret, cum, p))
        if detector is not None and found_step is None and t % checkpoint_every == 0:
            if detector.found(policy):
                found_step = t
    return _pack(policy_cfg, replication, rows, found_step, horizon, True)


def run_classification(
    env: ClassificationEnv,
    policy_cfg: PolicyConfig,
    replication: int,
    seed: int = 0,
    horizon: Optional[int] = None,
    policy=None,
) -> ReplicationResult:
    """One pass over a shuffled copy of ``env``; regret is 1 per wrong arm."""
    _, policy_rng, prop_ss = _streams(seed, replication)
    data = env.shuffled(seed + replication)
    if policy is None:
        policy = BanditPolicy(policy_cfg, data.n_arms, data.n_features, prop_ss)
    n = data.n if horizon is None else min(horizon, data.n)
    rows = []
    cum = 0.0
    for t in range(n):
        x = data.context(t)
        arm, p = policy.choose(x, policy_rng)
        reward = data.step(t, arm)
        cum += 1 - reward
        policy.observe(x, arm, reward, p)
        rows.append((t + 1, arm, reward, 1 - reward, cum, p))
    return _pack(policy_cfg, replication, rows, None, n, False)


def run_replication(config: ExperimentConfig, policy_cfg: PolicyConfig, replication: int) -> ReplicationResult:
    """One replication of one policy; streams are seeded from ``seed + replication``."""
    env = config.env
    if isinstance(env, SyntheticEnv):
        detector = build_detector(
            env, config.probe_size, config.agreement_threshold, config.seed, config.reference_samples
        )
        return run_synthetic(
            env, policy_cfg, replication, config.horizon, config.seed, detector, config.checkpoint_every
        )
    return run_classification(env, policy_cfg, replication, config.seed, config.horizon)


def _safe_replication(args) -> ReplicationResult:
    config, policy_cfg, replication = args
    try:
        return run_replication(config, policy_cfg, replication)
    except Exception as exc:  # noqa: BLE001 - one bad replication must not sink the sweep
        log.error("replication %d of %s aborted: %s", replication, policy_cfg.label, exc)
        empty = np.empty(0)
        return ReplicationResult(
            policy_cfg, replication, empty.astype(int), empty.astype(int), empty, empty, empty, empty,
            error=f"{type(exc).__name__}: {exc}",
        )


def run_experiment(config: ExperimentConfig) -> List[ReplicationResult]:
    """Every (policy, replication) pair, merged in a deterministic order."""
    tasks = [(config, p, r) for p in config.policies for r in range(config.replications)]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            return list(pool.map(_safe_replication, tasks))
    return [_safe_replication(task) for task in tasks]


def summarize(results: Sequence[ReplicationResult]) -> List[Dict]:
    """One summary row per policy config, in first-seen order."""
    if not results:
        raise ValueError("no results to summarize")
    groups: Dict[PolicyConfig, List[ReplicationResult]] = {}
    for res in results:
        groups.setdefault(res.policy, []).append(res)
    rows = []
    for cfg, reps in groups.items():
        ok = [r for r in reps if r.error is None]
        totals = np.array([r.total_regret for r in ok])
        norm = np.array([r.normalized_regret for r in ok])
        synthetic = any(r.synthetic for r in ok)
        found = [r.found_step for r in ok if r.found_step is not None]
        rows.append(
            {
                "policy": cfg.kind.display,
                "alpha": cfg.alpha,
                "gamma": cfg.gamma,
                "mean_cum_regret": float(totals.mean()) if ok else None,
                "sd_cum_regret": float(totals.std(ddof=1)) if len(ok) > 1 else 0.0,
                "mean_norm_regret": float(norm.mean()) if ok else None,
                "pct_optimal_found": 100.0 * len(found) / len(ok) if (ok and synthetic) else None,
                "mean_found_step": float(np.mean(found)) if found else None,
                "replications": len(ok),
                "failed": len(reps) - len(ok),
            }
        )
    return rows


def select_best(summary: Sequence[Dict]) -> Dict[str, Dict]:
    """Best row per policy kind: most optimal-found, then lowest normalized regret."""
    best: Dict[str, Dict] = {}

    def key(row):
        pct = row["pct_optimal_found"]
        return (-(pct if pct is not None else 0.0), row["mean_norm_regret"])

    for row in summary:
        cur = best.get(row["policy"])
        if cur is None or key(row) < key(cur):
            best[row["policy"]] = row
    return best


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def step_filename(cfg: PolicyConfig) -> str:
    name = f"steps_{cfg.kind.value}_a{cfg.alpha:g}"
    if cfg.gamma is not None:
        name += f"_g{cfg.gamma:g}"
    return name + ".csv"


def write_steps(results: Sequence[ReplicationResult], path: Union[str, Path]) -> int:
    """Write per-step records of ``results`` to one CSV; returns the row count."""
    n = 0
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(STEP_COLUMNS)
        for res in results:
            for i in range(res.t.size):
                writer.writerow(
                    [
                        res.replication,
                        int(res.t[i]),
                        int(res.arm[i]),
                        _fmt(float(res.reward[i])),
                        _fmt(float(res.regret[i])),
                        _fmt(float(res.cum_regret[i])),
                        _fmt(float(res.propensity[i])),
                    ]
                )
                n += 1
    return n


def aggregate_and_write(results: Sequence[ReplicationResult], out_dir: Union[str, Path]) -> List[Dict]:
    """Write one per-step CSV per policy config plus ``summary.json``."""
    if not results or all(r.t.size == 0 for r in results):
        raise ValueError("per-step log is empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize(results)
    by_cfg: Dict[PolicyConfig, List[ReplicationResult]] = {}
    for res in results:
        by_cfg.setdefault(res.policy, []).append(res)
    for cfg, reps in by_cfg.items():
        write_steps(sorted(reps, key=lambda r: r.replication), out / step_filename(cfg))
    with (out / "summary.json").open("w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    return summary
