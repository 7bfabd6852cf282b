"""Assignment probabilities and inverse-propensity weights.

Two estimators live here:

* Monte-Carlo probability matching for Thompson sampling, where the
  probability that an arm is chosen for a context is the fraction of posterior
  draws in which it has the highest sampled reward.  The posterior is drawn
  from a snapshot of a uniformly random earlier period.
* A multinomial logistic regression on the logged ``(context, arm)`` pairs,
  used for the deterministic UCB rule.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.special import softmax

from .exceptions import PolicyStateError
from .regression import LinearEstimate


def clip_weight(p, gamma: float):
    """Inverse propensity weight ``1 / max(gamma, p)``.

    Works elementwise on arrays.  ``gamma = 1`` is accepted and turns every
    weight into 1, which makes a balanced policy reduce to its unbalanced twin.
    """
    if not (0.0 < gamma <= 1.0):
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    p_arr = np.asarray(p, dtype=float)
    if np.any((p_arr < 0) | (p_arr > 1)):
        raise ValueError("propensities must lie in [0, 1]")
    out = 1.0 / np.maximum(gamma, p_arr)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PropensityRecord:
    """Propensity and clipped weight of one logged observation."""

    index: int
    arm: int
    propensity: float
    weight: float

    @classmethod
    def from_propensity(cls, index: int, arm: int, propensity: float, gamma: float) -> "PropensityRecord":
        return cls(index, arm, float(propensity), clip_weight(propensity, gamma))


@dataclass(frozen=True)
class PosteriorSnapshot:
    """Per-arm estimates as they stood at the end of ``period``."""

    period: int
    estimates: tuple

    @property
    def n_arms(self) -> int:
        return len(self.estimates)


class SnapshotReservoir:
    """Uniform reservoir sample over all posterior snapshots offered so far.

    Snapshots are stored as stacked arrays, ``thetas`` (S, K, d) and
    ``covariances`` (S, K, d, d), so propensities for a new context can be
    computed without touching Python objects per snapshot.
    """

    def __init__(self, capacity: int = 512):
        if capacity < 1:
            raise ValueError("reservoir capacity must be at least 1")
        self.capacity = int(capacity)
        self.seen = 0
        self._size = 0
        self._periods: Optional[np.ndarray] = None
        self._thetas: Optional[np.ndarray] = None
        self._covs: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self._size

    def _allocate(self, n_arms: int, d: int) -> None:
        self._periods = np.zeros(self.capacity, dtype=int)
        self._thetas = np.zeros((self.capacity, n_arms, d))
        self._covs = np.zeros((self.capacity, n_arms, d, d))

    def add(self, snapshot: PosteriorSnapshot, rng: np.random.Generator) -> None:
        if self._thetas is None:
            self._allocate(snapshot.n_arms, snapshot.estimates[0].d)
        self.seen += 1
        if self._size < self.capacity:
            slot = self._size
            self._size += 1
        else:
            slot = int(rng.integers(self.seen))
            if slot >= self.capacity:
                return
        self._periods[slot] = snapshot.period
        for a, est in enumerate(snapshot.estimates):
            self._thetas[slot, a] = est.theta_hat
            self._covs[slot, a] = est.covariance

    @property
    def periods(self) -> np.ndarray:
        return np.empty(0, dtype=int) if self._periods is None else self._periods[: self._size].copy()

    def moments(self, x: np.ndarray):
        """Projected means (S, K) and standard deviations (S, K) for context ``x``."""
        if self._size == 0:
            raise PolicyStateError("no posterior snapshots to estimate propensities from")
        S = self._size
        d = x.size
        means = self._thetas[:S] @ x
        Vx = (self._covs[:S].reshape(-1, d) @ x).reshape(S, -1, d)
        var = (Vx * x).sum(axis=-1)
        return means, np.sqrt(np.maximum(var, 0.0))

    def propensities(self, x, alpha: float, n_iter: int, rng: np.random.Generator) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        means, sds = self.moments(x)
        return _match_probabilities(means, sds, alpha, n_iter, rng)


def _match_probabilities(means, sds, alpha, n_iter, rng) -> np.ndarray:
    # Each arm's sampled reward x^T theta~ is N(x^T theta_hat, alpha^2 x^T V x),
    # so drawing the scalar directly is equivalent to drawing theta~ first.
    if n_iter < 1:
        raise ValueError("n_iter must be at least 1")
    n_snap, n_arms = means.shape
    if n_arms == 1:
        return np.ones(1)
    pick = rng.integers(n_snap, size=n_iter)
    z = rng.standard_normal((n_iter, n_arms))
    draws = means[pick] + alpha * sds[pick] * z
    winners = np.argmax(draws, axis=1)
    return np.bincount(winners, minlength=n_arms) / n_iter


def mc_propensities(
    snapshots: Sequence[PosteriorSnapshot],
    x,
    alpha: float,
    n_iter: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Probability-matching propensities of every arm for context ``x``.

    Each of ``n_iter`` iterations picks a snapshot uniformly at random, draws a
    reward for every arm from that snapshot's posterior and credits the arm with
    the highest draw (lowest index on ties).  Returns the credit fractions,
    which sum to exactly 1.
    """
    if len(snapshots) == 0:
        raise PolicyStateError("no posterior snapshots to estimate propensities from")
    x = np.asarray(x, dtype=float).reshape(-1)
    means = np.array([[est.theta_hat @ x for est in s.estimates] for s in snapshots])
    var = np.array([[x @ est.covariance @ x for est in s.estimates] for s in snapshots])
    return _match_probabilities(means, np.sqrt(np.maximum(var, 0.0)), alpha, n_iter, rng)


def mc_propensity(
    snapshots: Sequence[PosteriorSnapshot],
    x,
    arm: int,
    alpha: float,
    n_iter: int,
    rng: np.random.Generator,
) -> float:
    """Monte-Carlo probability that ``arm`` is chosen for ``x``."""
    probs = mc_propensities(snapshots, x, alpha, n_iter, rng)
    if not 0 <= arm < probs.size:
        raise ValueError(f"arm {arm} out of range for {probs.size} arms")
    return float(probs[arm])


@dataclass(frozen=True)
class LogitModel:
    """Softmax regression; ``coef[k]`` is ``(intercept, w_1, ..., w_d)`` for arm k."""

    coef: np.ndarray
    l2: float
    converged: bool = True
    n_iter: int = 0

    @property
    def n_arms(self) -> int:
        return self.coef.shape[0]

    @property
    def n_features(self) -> int:
        return self.coef.shape[1] - 1


def _augment(X: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((X.shape[0], 1)), X])


def logit_objective(params: np.ndarray, Z: np.ndarray, y: np.ndarray, n_arms: int, l2: float):
    """Penalized mean negative log-likelihood and its gradient.

    ``Z`` already carries the intercept column.  The penalty ``l2/2 * ||coef||^2``
    covers all coefficients, which keeps the problem strictly convex.
    """
    n = Z.shape[0]
    W = params.reshape(n_arms, Z.shape[1])
    scores = Z @ W.T
    scores -= scores.max(axis=1, keepdims=True)
    E = np.exp(scores)
    total = E.sum(axis=1, keepdims=True)
    nll = float(np.log(total[:, 0]).mean() - scores[np.arange(n), y].mean())
    P = E / total
    P[np.arange(n), y] -= 1.0
    grad = P.T @ Z / n + l2 * W
    value = nll + 0.5 * l2 * float(np.sum(W * W))
    return value, grad.ravel()


def logit_hessian(params: np.ndarray, Z: np.ndarray, n_arms: int, l2: float) -> np.ndarray:
    """Hessian of :func:`logit_objective`, shape ``(K*D, K*D)`` in the same layout as ``params``."""
    n, D = Z.shape
    W = params.reshape(n_arms, D)
    P = softmax(Z @ W.T, axis=1)
    A = -P[:, :, None] * P[:, None, :]
    A[:, np.arange(n_arms), np.arange(n_arms)] += P
    ZZ = (Z[:, :, None] * Z[:, None, :]).reshape(n, D * D)
    H = (A.reshape(n, -1).T @ ZZ / n).reshape(n_arms, n_arms, D, D)
    H = H.transpose(0, 2, 1, 3).reshape(n_arms * D, n_arms * D)
    H[np.diag_indices_from(H)] += l2
    return H


def fit_multinomial_logit(
    contexts,
    arms,
    n_arms: int,
    l2: float = 1e-4,
    tol: float = 1e-6,
    max_iter: int = 500,
    init: Optional[LogitModel] = None,
) -> LogitModel:
    """Fit an L2-penalized multinomial logistic regression of arm on context.

    Damped Newton iterations with a backtracking line search, stopped when the
    largest gradient component falls to ``tol``.  Warm starts from ``init``
    usually need one or two steps.  Hitting ``max_iter`` emits a warning and
    returns the current iterate with ``converged=False``; its predictions
    remain valid probabilities.
    """
    X = np.atleast_2d(np.asarray(contexts, dtype=float))
    y = np.asarray(arms).reshape(-1).astype(int)
    if X.shape[0] < 1 or X.shape[0] != y.size:
        raise ValueError("need at least one context and one label per context")
    if np.any((y < 0) | (y >= n_arms)):
        raise ValueError(f"labels must lie in 0..{n_arms - 1}")
    Z = _augment(X)
    if init is not None and init.coef.shape == (n_arms, Z.shape[1]):
        params = init.coef.ravel().copy()
    else:
        params = np.zeros(n_arms * Z.shape[1])
    value, grad = logit_objective(params, Z, y, n_arms, l2)
    converged = False
    it = 0
    while True:
        if np.max(np.abs(grad)) <= tol:
            converged = True
            break
        if it >= max_iter:
            break
        it += 1
        H = logit_hessian(params, Z, n_arms, l2)
        step = scipy.linalg.solve(H, grad, assume_a="pos", check_finite=False)
        slope = float(grad @ step)
        t = 1.0
        while True:
            cand = params - t * step
            cand_value, cand_grad = logit_objective(cand, Z, y, n_arms, l2)
            if cand_value <= value - 1e-4 * t * slope or t < 1e-10:
                break
            t *= 0.5
        params, value, grad = cand, cand_value, cand_grad
    if not converged:
        warnings.warn(
            f"multinomial logit did not converge in {max_iter} iterations "
            f"(max |grad| = {np.max(np.abs(grad)):.2e})",
            RuntimeWarning,
            stacklevel=2,
        )
    return LogitModel(params.reshape(n_arms, Z.shape[1]), l2, converged, it)


def predict_propensity(model: LogitModel, x) -> np.ndarray:
    """Softmax arm probabilities; a 1-D context gives shape (K,), a matrix (n, K)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != model.n_features:
        raise ValueError(f"context has dimension {X.shape[1]}, model expects {model.n_features}")
    P = softmax(_augment(X) @ model.coef.T, axis=1)
    return P[0] if single else P
