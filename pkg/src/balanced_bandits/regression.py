"""Weighted ridge regression and the Gaussian machinery built on it.

Every policy in the package fits one linear model per arm with

    B = X^T W X + ridge * I
    theta_hat = B^{-1} X^T W r
    V = B^{-1} * (r - X theta_hat)^T W (r - X theta_hat)

where W = diag(w).  The covariance is the weighted residual sum of squares
times B^{-1}, with no degrees-of-freedom correction.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .exceptions import NumericalError, SingularDesignError

DEFAULT_RIDGE_GRID = (0.01, 0.1, 1.0, 10.0)

# Jitter escalation bounds, relative to trace(V) / d.
_JITTER_START = 1e-10
_JITTER_STOP = 1e-4


@dataclass(frozen=True)
class DesignData:
    """Rows of contexts ``X`` (n, d), rewards ``r`` (n,) and positive weights ``w`` (n,)."""

    X: np.ndarray
    r: np.ndarray
    w: np.ndarray

    def __post_init__(self) -> None:
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        r = np.asarray(self.r, dtype=float).reshape(-1)
        w = np.asarray(self.w, dtype=float).reshape(-1)
        if X.shape[1] < 1:
            raise ValueError("design matrix needs at least one column")
        if not (X.shape[0] == r.shape[0] == w.shape[0]):
            raise ValueError(
                f"row mismatch: X has {X.shape[0]} rows, r has {r.shape[0]}, w has {w.shape[0]}"
            )
        if X.shape[0] == 0:
            raise ValueError("design data is empty")
        if not np.all(w > 0):
            raise ValueError("weights must be strictly positive")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "w", w)

    @classmethod
    def unweighted(cls, X, r) -> "DesignData":
        r = np.asarray(r, dtype=float).reshape(-1)
        return cls(X, r, np.ones_like(r))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True, eq=False)
class LinearEstimate:
    """Point estimate and covariance of one arm's coefficient vector.

    Instances are immutable; the Cholesky factor used for sampling is computed
    lazily and cached on the instance.
    """

    theta_hat: np.ndarray
    covariance: np.ndarray
    ridge: float

    def __post_init__(self) -> None:
        theta = np.asarray(self.theta_hat, dtype=float).reshape(-1)
        cov = np.asarray(self.covariance, dtype=float)
        if cov.shape != (theta.size, theta.size):
            raise ValueError(f"covariance shape {cov.shape} does not match d={theta.size}")
        theta.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "theta_hat", theta)
        object.__setattr__(self, "covariance", cov)

    @property
    def d(self) -> int:
        return self.theta_hat.size

    @cached_property
    def factor(self) -> Optional[np.ndarray]:
        """Lower-triangular L with L L^T = V (+ jitter), or None when V is zero."""
        return _psd_factor(self.covariance)


def _psd_factor(cov: np.ndarray) -> Optional[np.ndarray]:
    d = cov.shape[0]
    scale = float(np.trace(cov)) / d
    if scale <= 0.0:
        if np.any(cov != 0.0):
            raise NumericalError("covariance has non-positive trace but is not zero")
        return None
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    jitter = _JITTER_START
    eye = np.eye(d)
    while jitter <= _JITTER_STOP * (1 + 1e-9):
        try:
            return np.linalg.cholesky(cov + jitter * scale * eye)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError("covariance is not positive semi-definite, even after jitter")


def fit_weighted_ridge(data: DesignData, ridge: float) -> LinearEstimate:
    """Fit a weighted ridge regression with the closed-form covariance.

    Parameters
    ----------
    data : DesignData
        Contexts, rewards and per-row weights.
    ridge : float
        Regularization added to the diagonal of ``X^T W X``.  Zero is allowed
        only when ``X^T W X`` is itself invertible.

    Returns
    -------
    LinearEstimate
        ``theta_hat`` solving the weighted normal equations and the covariance
        ``B^{-1}`` scaled by the weighted residual sum of squares.

    Raises
    ------
    SingularDesignError
        If ``ridge == 0`` and the weighted Gram matrix is singular.
    """
    if ridge < 0 or not np.isfinite(ridge):
        raise ValueError(f"ridge must be a finite non-negative number, got {ridge}")
    X, r, w = data.X, data.r, data.w
    Xw = X * w[:, None]
    B = Xw.T @ X
    B[np.diag_indices_from(B)] += ridge
    try:
        cho = scipy.linalg.cho_factor(B, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularDesignError("regularized design matrix is not positive definite") from exc
    if ridge == 0.0 and np.linalg.cond(B) > 1e12:
        raise SingularDesignError("design matrix is singular and ridge is zero")
    theta = scipy.linalg.cho_solve(cho, Xw.T @ r, check_finite=False)
    resid = r - X @ theta
    rss = float(resid @ (w * resid))
    B_inv = scipy.linalg.cho_solve(cho, np.eye(B.shape[0]), check_finite=False)
    cov = 0.5 * (B_inv + B_inv.T) * rss
    return LinearEstimate(theta, cov, float(ridge))


def _check_dim(est: LinearEstimate, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != est.d:
        raise ValueError(f"context has dimension {x.size}, estimate expects {est.d}")
    return x


def predict_mean(est: LinearEstimate, x) -> float:
    """Estimated mean reward ``x^T theta_hat``."""
    x = _check_dim(est, x)
    return float(x @ est.theta_hat)


def predict_variance(est: LinearEstimate, x) -> float:
    """Variance of the mean estimate, ``x^T V x``, clamped at zero."""
    x = _check_dim(est, x)
    return max(float(x @ est.covariance @ x), 0.0)


def sample_parameters(est: LinearEstimate, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Draw one coefficient vector from ``N(theta_hat, alpha^2 V)``.

    A standard normal vector of length d is always consumed from ``rng`` so that
    two policies sharing a stream stay in lockstep regardless of their covariances.
    """
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    z = rng.standard_normal(est.d)
    L = est.factor
    if alpha == 0.0 or L is None:
        return est.theta_hat.copy()
    return est.theta_hat + alpha * (L @ z)


def select_ridge(
    data: DesignData,
    grid: Sequence[float] = DEFAULT_RIDGE_GRID,
    n_folds: int = 5,
    min_obs: int = 10,
    fallback: float = 1.0,
) -> float:
    """Choose the ridge by k-fold cross-validation on weighted squared error.

    Folds are interleaved (row ``i`` goes to fold ``i % n_folds``) so the choice
    is deterministic.  Histories shorter than ``min_obs`` get ``fallback``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("ridge grid is empty")
    if grid.size == 1:
        return float(grid[0])
    if data.n < max(min_obs, n_folds):
        return float(fallback)
    X, r, w = data.X, data.r, data.w
    n, d = X.shape
    # Pad to a multiple of n_folds with zero-weight rows; column k of the
    # reshaped arrays is then fold k.
    m = -(-n // n_folds)
    pad = m * n_folds - n
    Xp = np.vstack([X, np.zeros((pad, d))]).reshape(m, n_folds, d)
    rp = np.concatenate([r, np.zeros(pad)]).reshape(m, n_folds)
    wp = np.concatenate([w, np.zeros(pad)]).reshape(m, n_folds)
    Xf = Xp.transpose(1, 0, 2)
    XwT = (Xp * wp[..., None]).transpose(1, 2, 0)
    G_folds = XwT @ Xf
    b_folds = (XwT @ rp.T[..., None])[..., 0]
    G_train = G_folds.sum(axis=0) - G_folds
    b_train = b_folds.sum(axis=0) - b_folds
    systems = G_train[:, None] + grid[None, :, None, None] * np.eye(d)
    rhs = np.broadcast_to(b_train[:, None, :, None], systems.shape[:3] + (1,))
    thetas = np.linalg.solve(systems, rhs)[..., 0]
    resid = rp.T[..., None] - Xf @ thetas.transpose(0, 2, 1)
    errors = (wp.T[..., None] * resid**2).sum(axis=(0, 1))
    return float(grid[int(np.argmin(errors))])


class FoldStatistics:
    """Running per-fold sufficient statistics of a weighted design.

    For rows whose weights never change after they are added, this reproduces
    :func:`select_ridge` and :func:`fit_weighted_ridge` on the full history
    from ``G_k = sum w x x^T``, ``b_k = sum w r x`` and ``c_k = sum w r^2`` per
    fold, so a refit costs O(d^3) instead of O(n d^2).  Row ``i`` goes to fold
    ``i % n_folds`` as in :func:`select_ridge`.
    """

    def __init__(self, d: int, n_folds: int = 5):
        if n_folds < 2:
            raise ValueError("need at least two folds")
        self.d = int(d)
        self.n_folds = int(n_folds)
        self.G = np.zeros((n_folds, d, d))
        self.b = np.zeros((n_folds, d))
        self.c = np.zeros(n_folds)
        self.n = 0

    def add(self, x, r: float, w: float = 1.0) -> None:
        if not w > 0:
            raise ValueError("weights must be strictly positive")
        x = np.asarray(x, dtype=float).reshape(-1)
        k = self.n % self.n_folds
        xw = w * x
        self.G[k] += np.outer(xw, x)
        self.b[k] += xw * r
        self.c[k] += w * r * r
        self.n += 1

    def select_ridge(
        self, grid: Sequence[float] = DEFAULT_RIDGE_GRID, min_obs: int = 10, fallback: float = 1.0
    ) -> float:
        grid = np.asarray(grid, dtype=float)
        if grid.size == 0:
            raise ValueError("ridge grid is empty")
        if grid.size == 1:
            return float(grid[0])
        if self.n < max(min_obs, self.n_folds):
            return float(fallback)
        G_train = self.G.sum(axis=0) - self.G
        b_train = self.b.sum(axis=0) - self.b
        systems = G_train[:, None] + grid[None, :, None, None] * np.eye(self.d)
        rhs = np.broadcast_to(b_train[:, None, :, None], systems.shape[:3] + (1,))
        thetas = np.linalg.solve(systems, rhs)[..., 0]
        # held-out weighted SSE: c - 2 theta^T b + theta^T G theta
        quad = np.einsum("kld,kde,kle->kl", thetas, self.G, thetas)
        errors = (self.c[:, None] - 2.0 * np.einsum("kld,kd->kl", thetas, self.b) + quad).sum(axis=0)
        return float(grid[int(np.argmin(errors))])

    def fit(self, ridge: float) -> LinearEstimate:
        if self.n == 0:
            raise ValueError("design data is empty")
        if ridge < 0 or not np.isfinite(ridge):
            raise ValueError(f"ridge must be a finite non-negative number, got {ridge}")
        G = self.G.sum(axis=0)
        b = self.b.sum(axis=0)
        B = G.copy()
        B[np.diag_indices_from(B)] += ridge
        try:
            cho = scipy.linalg.cho_factor(B, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise SingularDesignError("regularized design matrix is not positive definite") from exc
        if ridge == 0.0 and np.linalg.cond(B) > 1e12:
            raise SingularDesignError("design matrix is singular and ridge is zero")
        theta = scipy.linalg.cho_solve(cho, b, check_finite=False)
        rss = max(float(self.c.sum() - 2.0 * theta @ b + theta @ G @ theta), 0.0)
        B_inv = scipy.linalg.cho_solve(cho, np.eye(self.d), check_finite=False)
        return LinearEstimate(theta, 0.5 * (B_inv + B_inv.T) * rss, float(ridge))
