"""Linear contextual bandit policies: LinTS, LinUCB and their balanced variants.

All four share one estimation path: a separate weighted ridge regression per
arm, refit on the arm's full history after every observation.  The unbalanced
policies use unit weights.  The balanced ones weight each observation by its
clipped inverse propensity, taken from Monte-Carlo probability matching (BLTS)
or from a multinomial logit of arm on context (BLUCB).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import PolicyStateError
from .propensity import (
    LogitModel,
    PosteriorSnapshot,
    PropensityRecord,
    SnapshotReservoir,
    clip_weight,
    fit_multinomial_logit,
    predict_propensity,
)
from .regression import (
    DEFAULT_RIDGE_GRID,
    DesignData,
    FoldStatistics,
    LinearEstimate,
    fit_weighted_ridge,
    predict_mean,
    predict_variance,
    sample_parameters,
    select_ridge,
)


class PolicyKind(str, enum.Enum):
    LINTS = "lints"
    LINUCB = "linucb"
    BLTS = "blts"
    BLUCB = "blucb"

    @property
    def balanced(self) -> bool:
        return self in (PolicyKind.BLTS, PolicyKind.BLUCB)

    @property
    def thompson(self) -> bool:
        return self in (PolicyKind.LINTS, PolicyKind.BLTS)

    @property
    def display(self) -> str:
        return {"lints": "LinTS", "linucb": "LinUCB", "blts": "BLTS", "blucb": "BLUCB"}[self.value]


@dataclass(frozen=True)
class PolicyConfig:
    """Hyperparameters of one policy.

    ``ridge_grid`` with a single entry fixes the ridge; with several entries the
    ridge is re-selected by cross-validation at every refit.
    """

    kind: PolicyKind
    alpha: float = 1.0
    gamma: Optional[float] = None
    ridge_grid: Tuple[float, ...] = DEFAULT_RIDGE_GRID
    cv_folds: int = 5
    cv_min_obs: int = 10
    cv_fallback: float = 1.0
    mc_iterations: int = 1000
    reservoir_size: int = 512
    recompute_propensities: bool = False
    logit_l2: float = 1e-4
    logit_dense_until: int = 200
    logit_refit_every: int = 10
    alpha_schedule: Optional[Callable[[int], float]] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        object.__setattr__(self, "ridge_grid", tuple(float(v) for v in self.ridge_grid))
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.kind.balanced:
            if self.gamma is None:
                object.__setattr__(self, "gamma", 0.1)
            if not (0.0 < self.gamma <= 1.0):
                raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        elif self.gamma is not None:
            raise ValueError(f"{self.kind.display} takes no gamma")
        if not self.ridge_grid or any(v <= 0 for v in self.ridge_grid):
            raise ValueError("ridge grid must be nonempty and positive")
        if self.mc_iterations < 1 or self.reservoir_size < 1:
            raise ValueError("mc_iterations and reservoir_size must be positive")

    @property
    def label(self) -> str:
        text = f"{self.kind.display}(alpha={self.alpha:g}"
        if self.gamma is not None:
            text += f", gamma={self.gamma:g}"
        return text + ")"


class _Rows:
    """Append-only row buffer with amortized growth."""

    def __init__(self, width: int, capacity: int = 64):
        self._data = np.empty((capacity, width)) if width else np.empty(capacity)
        self._n = 0

    def append(self, row) -> None:
        if self._n == self._data.shape[0]:
            grown = np.empty((2 * self._n,) + self._data.shape[1:])
            grown[: self._n] = self._data
            self._data = grown
        self._data[self._n] = row
        self._n += 1

    def view(self) -> np.ndarray:
        return self._data[: self._n]

    def __len__(self) -> int:
        return self._n


class ArmModel:
    """History and current estimate of a single arm."""

    def __init__(self, n_features: int, stats: Optional[FoldStatistics] = None):
        self.stats = stats
        self._X = _Rows(n_features)
        self._r = _Rows(0)
        self._p = _Rows(0)
        self._fixed = _Rows(0)
        self.index: List[int] = []
        self.estimate: Optional[LinearEstimate] = None

    @property
    def X(self) -> np.ndarray:
        return self._X.view()

    @property
    def r(self) -> np.ndarray:
        return self._r.view()

    @property
    def propensities(self) -> np.ndarray:
        return self._p.view()

    @property
    def fixed_propensity(self) -> np.ndarray:
        """True for rows logged before any posterior snapshot existed."""
        return self._fixed.view().astype(bool)

    def append(self, index: int, x: np.ndarray, reward: float, propensity: float, fixed: bool) -> None:
        self._X.append(x)
        self._r.append(reward)
        self._p.append(propensity)
        self._fixed.append(float(fixed))
        self.index.append(index)

    def __len__(self) -> int:
        return len(self._r)


class BanditPolicy:
    """Per-arm linear models plus the propensity bookkeeping of one policy.

    The object is single-writer: ``choose`` and ``observe`` calls must be
    serialized by the caller.

    Parameters
    ----------
    config : PolicyConfig
    n_arms : int
    n_features : int
    propensity_seed : int or SeedSequence, optional
        Seeds the internal stream used for Monte-Carlo propensities and the
        snapshot reservoir.  Keeping it separate from the stream passed to
        ``choose`` means the assignment draws are unaffected by how
        propensities are estimated.
    """

    def __init__(self, config: PolicyConfig, n_arms: int, n_features: int, propensity_seed=None):
        if n_arms < 1 or n_features < 1:
            raise ValueError("need at least one arm and one feature")
        self.config = config
        self.n_arms = int(n_arms)
        self.n_features = int(n_features)
        # Fixed-weight histories refit from running fold statistics.
        incremental = not config.kind.balanced or (
            config.kind is PolicyKind.BLTS and not config.recompute_propensities
        )
        self.arms = [
            ArmModel(n_features, FoldStatistics(n_features, config.cv_folds) if incremental else None)
            for _ in range(n_arms)
        ]
        self.records: List[PropensityRecord] = []
        self.t = 0
        self.reservoir = SnapshotReservoir(config.reservoir_size) if config.kind is PolicyKind.BLTS else None
        self.logit: Optional[LogitModel] = None
        self._contexts = _Rows(n_features)
        self._arm_log: List[int] = []
        self._last_snapshot_period = -1
        self._prop_rng = np.random.default_rng(propensity_seed)

    @property
    def kind(self) -> PolicyKind:
        return self.config.kind

    @property
    def estimates(self) -> List[Optional[LinearEstimate]]:
        return [arm.estimate for arm in self.arms]

    @property
    def cold(self) -> bool:
        """True while some arm has no model and assignment is uniform."""
        return any(arm.estimate is None for arm in self.arms)

    def alpha_at(self, t: int) -> float:
        if self.config.alpha_schedule is None:
            return self.config.alpha
        return float(self.config.alpha_schedule(t))

    def _check_context(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.n_features:
            raise ValueError(f"context has dimension {x.size}, policy expects {self.n_features}")
        return x

    def snapshot(self) -> PosteriorSnapshot:
        if self.cold:
            raise PolicyStateError("cannot snapshot while some arm has no model")
        return PosteriorSnapshot(self.t, tuple(self.estimates))

    def _record_snapshot(self) -> None:
        if self._last_snapshot_period == self.t:
            return
        self.reservoir.add(self.snapshot(), self._prop_rng)
        self._last_snapshot_period = self.t

    def choose(self, x, rng: np.random.Generator) -> Tuple[int, float]:
        """Pick an arm for context ``x``.

        Returns the arm and the probability with which it was assigned: ``1/K``
        while any arm lacks a model, the Monte-Carlo propensity for BLTS, 1.0
        for the deterministic UCB rules and NaN for LinTS (not tracked).
        """
        x = self._check_context(x)
        K = self.n_arms
        if self.cold:
            return int(rng.integers(K)), 1.0 / K
        alpha = self.alpha_at(self.t)
        ests = self.estimates
        if self.kind.thompson:
            scores = np.array([x @ sample_parameters(est, alpha, rng) for est in ests])
        else:
            scores = np.array(
                [predict_mean(est, x) + alpha * np.sqrt(predict_variance(est, x)) for est in ests]
            )
        arm = int(np.argmax(scores))
        if self.kind is PolicyKind.BLTS:
            self._record_snapshot()
            probs = self.reservoir.propensities(x, alpha, self.config.mc_iterations, self._prop_rng)
            return arm, float(probs[arm])
        if self.kind is PolicyKind.LINTS:
            return arm, float("nan")
        return arm, 1.0

    def observe(self, x, arm: int, reward: float, logged_propensity: float) -> None:
        """Append the observation to ``arm``'s history and refit that arm."""
        x = self._check_context(x)
        if not 0 <= arm < self.n_arms:
            raise ValueError(f"arm {arm} out of range for {self.n_arms} arms")
        if not np.isfinite(reward):
            raise ValueError("reward must be finite")
        p = float(logged_propensity)
        if self.kind is PolicyKind.BLTS and not (0.0 <= p <= 1.0):
            raise ValueError(f"logged propensity must lie in [0, 1], got {p}")
        fixed = self.reservoir is None or len(self.reservoir) == 0
        model = self.arms[arm]
        model.append(self.t, x, float(reward), p, fixed)
        if model.stats is not None:
            w = clip_weight(p, self.config.gamma) if self.kind.balanced else 1.0
            model.stats.add(x, float(reward), float(w))
        if self.kind.balanced and np.isfinite(p):
            self.records.append(PropensityRecord.from_propensity(self.t, arm, p, self.config.gamma))
        self._contexts.append(x)
        self._arm_log.append(arm)
        self.t += 1
        if self.kind is PolicyKind.BLUCB and self._logit_due():
            self.logit = fit_multinomial_logit(
                self._contexts.view(),
                np.asarray(self._arm_log),
                self.n_arms,
                l2=self.config.logit_l2,
                init=self.logit,
            )
        self._refit(arm)

    def _logit_due(self) -> bool:
        n = len(self._arm_log)
        cfg = self.config
        return self.logit is None or n <= cfg.logit_dense_until or n % cfg.logit_refit_every == 0

    def _refit(self, arm: int) -> None:
        model = self.arms[arm]
        cfg = self.config
        if model.stats is not None:
            ridge = model.stats.select_ridge(cfg.ridge_grid, cfg.cv_min_obs, cfg.cv_fallback)
            model.estimate = model.stats.fit(ridge)
            return
        data = DesignData(model.X, model.r, self.weights_for_arm(arm))
        ridge = select_ridge(data, cfg.ridge_grid, cfg.cv_folds, cfg.cv_min_obs, cfg.cv_fallback)
        model.estimate = fit_weighted_ridge(data, ridge)

    def weights_for_arm(self, arm: int) -> np.ndarray:
        """Clipped inverse-propensity weights over ``arm``'s history (ones if unbalanced)."""
        model = self.arms[arm]
        if len(model) == 0:
            raise PolicyStateError(f"arm {arm} has no observations")
        if not self.kind.balanced:
            return np.ones(len(model))
        gamma = self.config.gamma
        if self.kind is PolicyKind.BLUCB:
            if self.logit is None:
                raise PolicyStateError("no propensity model has been fit yet")
            return clip_weight(predict_propensity(self.logit, model.X)[:, arm], gamma)
        p = model.propensities.copy()
        if self.config.recompute_propensities and len(self.reservoir) > 0:
            for i in np.flatnonzero(~model.fixed_propensity):
                probs = self.reservoir.propensities(
                    model.X[i], self.config.alpha, self.config.mc_iterations, self._prop_rng
                )
                p[i] = probs[arm]
        return clip_weight(p, gamma)

    def theta_matrix(self) -> np.ndarray:
        """Stacked estimates (K, d); arms without a model are rows of NaN."""
        out = np.full((self.n_arms, self.n_features), np.nan)
        for a, est in enumerate(self.estimates):
            if est is not None:
                out[a] = est.theta_hat
        return out

    def greedy_arms(self, X) -> np.ndarray:
        """Greedy (no exploration) arm for each row of ``X``; unmodelled arms never win."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        scores = X @ np.nan_to_num(self.theta_matrix(), nan=0.0).T
        scores[:, [est is None for est in self.estimates]] = -np.inf
        return np.argmax(scores, axis=1)


def make_policy(config: PolicyConfig, n_arms: int, n_features: int, propensity_seed=None) -> BanditPolicy:
    return BanditPolicy(config, n_arms, n_features, propensity_seed)


def expand_grid(
    kinds: Sequence[PolicyKind],
    alphas: Optional[Sequence[float]] = None,
    gammas: Optional[Sequence[float]] = None,
    **overrides,
) -> List[PolicyConfig]:
    """One config per (kind, alpha, gamma) combination.

    Without explicit grids each kind gets its conventional sweep: alpha in
    {0.25, 0.5, 1} for Thompson sampling and {1, 2, 4} for UCB, gamma in
    {0.01, 0.05, 0.1, 0.2} for the balanced kinds.
    """
    out = []
    for kind in map(PolicyKind, kinds):
        a_grid = alphas if alphas else ((0.25, 0.5, 1.0) if kind.thompson else (1.0, 2.0, 4.0))
        g_grid = (gammas if gammas else (0.01, 0.05, 0.1, 0.2)) if kind.balanced else (None,)
        for a in a_grid:
            for g in g_grid:
                out.append(PolicyConfig(kind, alpha=float(a), gamma=g, **overrides))
    return out
