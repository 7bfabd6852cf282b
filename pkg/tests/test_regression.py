import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from balanced_bandits.exceptions import NumericalError, SingularDesignError
from balanced_bandits.regression import (
    DesignData,
    LinearEstimate,
    fit_weighted_ridge,
    predict_mean,
    predict_variance,
    sample_parameters,
    select_ridge,
)

from conftest import dense_ridge_oracle


def test_one_dimensional_hand_computation():
    # B = 1 + 1 = 2, theta = 2 / 2 = 1, RSS = (2 - 1)^2 = 1, V = 1 / 2
    est = fit_weighted_ridge(DesignData([[1.0]], [2.0], [1.0]), 1.0)
    assert est.theta_hat == pytest.approx([1.0])
    np.testing.assert_allclose(est.covariance, [[0.5]])


def test_zero_rewards_give_zero_solution(rng):
    X = rng.normal(size=(7, 3))
    est = fit_weighted_ridge(DesignData(X, np.zeros(7), rng.uniform(0.5, 3, 7)), 0.7)
    assert np.all(est.theta_hat == 0)
    assert np.all(est.covariance == 0)


def test_matches_dense_oracle_on_random_instance(rng):
    X = rng.normal(size=(5, 2))
    r = rng.normal(size=5)
    w = np.ones(5)
    est = fit_weighted_ridge(DesignData(X, r, w), 0.3)
    theta, cov = dense_ridge_oracle(X, r, w, 0.3)
    np.testing.assert_allclose(est.theta_hat, theta, rtol=1e-10)
    np.testing.assert_allclose(est.covariance, cov, rtol=1e-10)


def test_covariance_symmetric_psd(rng):
    X = rng.normal(size=(30, 4))
    est = fit_weighted_ridge(DesignData(X, rng.normal(size=30), rng.uniform(1, 10, 30)), 0.1)
    np.testing.assert_array_equal(est.covariance, est.covariance.T)
    assert np.linalg.eigvalsh(est.covariance).min() >= -1e-12


def test_zero_ridge_requires_invertible_gram():
    X = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    with pytest.raises(SingularDesignError):
        fit_weighted_ridge(DesignData(X, [1.0, 2.0, 3.0], [1.0, 1.0, 1.0]), 0.0)


def test_zero_ridge_allowed_when_invertible(rng):
    X = rng.normal(size=(10, 3))
    r = rng.normal(size=10)
    est = fit_weighted_ridge(DesignData.unweighted(X, r), 0.0)
    np.testing.assert_allclose(est.theta_hat, np.linalg.lstsq(X, r, rcond=None)[0], rtol=1e-9)


@pytest.mark.parametrize("w", [[1.0, 0.0], [1.0, -2.0]])
def test_non_positive_weight_rejected(w):
    with pytest.raises(ValueError):
        DesignData([[1.0], [2.0]], [1.0, 2.0], w)


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        DesignData([[1.0], [2.0]], [1.0], [1.0, 1.0])


def test_predictions():
    est = LinearEstimate(np.array([1.0, 2.0]), np.diag([2.0, 3.0]), 1.0)
    assert predict_mean(est, [3.0, 4.0]) == 11.0
    assert predict_variance(est, [1.0, 1.0]) == 5.0
    assert predict_mean(est, [0.0, 0.0]) == 0.0
    assert predict_variance(LinearEstimate(np.zeros(2), np.eye(2), 1.0), [1.0, 0.0]) == 1.0
    assert predict_variance(LinearEstimate(np.ones(2), np.zeros((2, 2)), 1.0), [5.0, -2.0]) == 0.0
    with pytest.raises(ValueError):
        predict_mean(est, [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        predict_variance(est, [1.0])


def test_predict_variance_clamps_roundoff():
    est = LinearEstimate(np.zeros(2), np.array([[1.0, 1.0], [1.0, 1.0]]) - 1e-17 * np.eye(2), 1.0)
    assert predict_variance(est, [1.0, -1.0]) == 0.0


def test_sampling_degenerate_cases(rng):
    est = LinearEstimate(np.array([1.0, -2.0]), np.eye(2), 1.0)
    np.testing.assert_array_equal(sample_parameters(est, 0.0, rng), est.theta_hat)
    flat = LinearEstimate(np.array([1.0, -2.0]), np.zeros((2, 2)), 1.0)
    np.testing.assert_array_equal(sample_parameters(flat, 3.0, rng), flat.theta_hat)


def test_sampling_variance_standard_normal():
    est = LinearEstimate(np.zeros(1), np.eye(1), 1.0)
    rng = np.random.default_rng(7)
    draws = np.array([sample_parameters(est, 1.0, rng)[0] for _ in range(10_000)])
    # sd of the sample variance is sqrt(2 / n) ~ 0.014; the band is > 4 sd wide
    assert 0.94 <= draws.var() <= 1.06


def test_sampling_covariance_and_alpha_scaling():
    cov = np.array([[2.0, 0.6], [0.6, 1.0]])
    est = LinearEstimate(np.array([1.0, 0.0]), cov, 1.0)
    rng = np.random.default_rng(3)
    draws = np.array([sample_parameters(est, 0.5, rng) for _ in range(20_000)])
    np.testing.assert_allclose(np.cov(draws.T), 0.25 * cov, atol=0.03)
    np.testing.assert_allclose(draws.mean(axis=0), [1.0, 0.0], atol=0.02)


def test_sampling_is_replayable():
    est = LinearEstimate(np.array([0.3, 0.1]), np.array([[1.0, 0.2], [0.2, 0.5]]), 1.0)
    a = [sample_parameters(est, 1.0, np.random.default_rng(11)) for _ in range(3)]
    b = [sample_parameters(est, 1.0, np.random.default_rng(11)) for _ in range(3)]
    np.testing.assert_array_equal(a, b)


def test_rank_deficient_covariance_uses_jitter(rng):
    est = LinearEstimate(np.zeros(2), np.array([[1.0, 1.0], [1.0, 1.0]]), 1.0)
    draws = np.array([sample_parameters(est, 1.0, rng) for _ in range(200)])
    np.testing.assert_allclose(draws[:, 0], draws[:, 1], atol=1e-3)


def test_indefinite_covariance_raises(rng):
    est = LinearEstimate(np.zeros(2), np.diag([1.0, -1.0]), 1.0)
    with pytest.raises(NumericalError):
        sample_parameters(est, 1.0, rng)


def _naive_cv(X, r, w, grid, folds=5):
    n, d = X.shape
    fold = np.arange(n) % folds
    errs = []
    for lam in grid:
        err = 0.0
        for k in range(folds):
            tr, te = fold != k, fold == k
            theta, _ = dense_ridge_oracle(X[tr], r[tr], w[tr], lam)
            err += np.sum(w[te] * (r[te] - X[te] @ theta) ** 2)
        errs.append(err)
    return grid[int(np.argmin(errs))]


def test_select_ridge_matches_naive_cross_validation():
    rng = np.random.default_rng(2024)
    grid = (0.01, 0.1, 1.0, 10.0)
    for _ in range(100):
        n, d = int(rng.integers(10, 60)), int(rng.integers(1, 6))
        X = rng.normal(size=(n, d))
        r = X @ rng.normal(size=d) * rng.uniform(0, 3) + rng.normal(size=n) * rng.uniform(0.1, 5)
        w = rng.uniform(1, 10, n)
        assert select_ridge(DesignData(X, r, w), grid) == _naive_cv(X, r, w, grid)


def test_select_ridge_fallbacks(rng):
    small = DesignData(rng.normal(size=(9, 2)), rng.normal(size=9), np.ones(9))
    assert select_ridge(small) == 1.0
    assert select_ridge(small, grid=(0.5,)) == 0.5
    with pytest.raises(ValueError):
        select_ridge(small, grid=())


finite = st.floats(-5, 5, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(
    X=arrays(float, (8, 3), elements=finite),
    r=arrays(float, 8, elements=finite),
    ridge=st.floats(0.05, 5),
)
def test_unit_weights_equal_plain_ridge(X, r, ridge):
    est = fit_weighted_ridge(DesignData.unweighted(X, r), ridge)
    theta = np.linalg.solve(X.T @ X + ridge * np.eye(3), X.T @ r)
    np.testing.assert_allclose(est.theta_hat, theta, rtol=1e-10, atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(
    X=arrays(float, (8, 3), elements=finite),
    r=arrays(float, 8, elements=finite),
    w=arrays(float, 8, elements=st.floats(0.1, 10)),
    ridge=st.floats(0.05, 5),
    c=st.floats(0.1, 10),
)
def test_weight_scaling_with_ridge_scaling(X, r, w, ridge, c):
    a = fit_weighted_ridge(DesignData(X, r, w), ridge)
    b = fit_weighted_ridge(DesignData(X, r, c * w), c * ridge)
    np.testing.assert_allclose(a.theta_hat, b.theta_hat, rtol=1e-8, atol=1e-9)


def test_large_ridge_shrinks_monotonically(rng):
    X = rng.normal(size=(40, 4))
    r = X @ np.array([1.0, -2.0, 0.5, 3.0]) + rng.normal(size=40)
    data = DesignData(X, r, rng.uniform(1, 5, 40))
    norms = [np.linalg.norm(fit_weighted_ridge(data, lam).theta_hat) for lam in 10.0 ** np.arange(-2, 9)]
    assert all(a >= b for a, b in zip(norms, norms[1:]))
    assert norms[-1] < 1e-5


@settings(max_examples=60, deadline=None)
@given(
    A=arrays(float, (3, 3), elements=finite),
    x=arrays(float, 3, elements=finite),
)
def test_predict_variance_nonnegative(A, x):
    est = LinearEstimate(np.zeros(3), A @ A.T, 1.0)
    assert predict_variance(est, x) >= 0.0


def test_fold_statistics_match_full_history():
    from balanced_bandits.regression import FoldStatistics

    rng = np.random.default_rng(77)
    grid = (0.01, 0.1, 1.0, 10.0)
    for _ in range(60):
        n, d = int(rng.integers(1, 80)), int(rng.integers(1, 6))
        X = rng.normal(size=(n, d))
        r = X @ rng.normal(size=d) + rng.normal(size=n) * rng.uniform(0.1, 3)
        w = rng.uniform(1, 10, n)
        stats = FoldStatistics(d)
        for x, y, wi in zip(X, r, w):
            stats.add(x, y, wi)
        data = DesignData(X, r, w)
        lam = select_ridge(data, grid)
        assert stats.select_ridge(grid) == lam
        a, b = stats.fit(lam), fit_weighted_ridge(data, lam)
        np.testing.assert_allclose(a.theta_hat, b.theta_hat, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(a.covariance, b.covariance, rtol=1e-7, atol=1e-12)


def test_fold_statistics_guards():
    from balanced_bandits.regression import FoldStatistics

    stats = FoldStatistics(2)
    with pytest.raises(ValueError):
        stats.fit(1.0)
    with pytest.raises(ValueError):
        stats.add([1.0, 2.0], 1.0, 0.0)
    stats.add([1.0, 1.0], 1.0)
    with pytest.raises(SingularDesignError):
        stats.fit(0.0)
