import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def dense_ridge_oracle(X, r, w, ridge):
    """Normal equations by explicit inversion; independent of the library's solver."""
    X = np.asarray(X, dtype=float)
    W = np.diag(np.asarray(w, dtype=float))
    B = X.T @ W @ X + ridge * np.eye(X.shape[1])
    B_inv = np.linalg.inv(B)
    theta = B_inv @ X.T @ W @ r
    resid = r - X @ theta
    return theta, B_inv * float(resid @ W @ resid)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "ACCEPTANCE_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
