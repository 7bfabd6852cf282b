"""Bandit environments.

``SyntheticEnv`` is a three-arm problem with quadratic reward surfaces and a
warm-start batch drawn from a narrow window of the context space.
``ClassificationEnv`` turns a labelled dataset into a K-armed bandit whose
reward is 1 when the chosen arm equals the true class.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import DatasetError

N_SYNTHETIC_ARMS = 3
_VARIANCE_FLOOR = 1e-12


def expected_rewards(x) -> np.ndarray:
    """Noiseless rewards of arms 0, 1, 2 at raw context ``x = (x0, x1)``."""
    x = np.asarray(x, dtype=float)
    q = 0.5 * (x[..., 0] + 1.0) ** 2 + 0.5 * (x[..., 1] + 1.0) ** 2
    return np.stack([q, np.ones_like(q), 2.0 - q], axis=-1)


def true_optimal_arm(x) -> np.ndarray:
    """Arm with the highest expected reward (lowest index on ties)."""
    return np.argmax(expected_rewards(x), axis=-1)


def synthetic_reward(arm: int, x, rng: np.random.Generator, noise_var: float = 0.01) -> float:
    if arm not in (0, 1, 2):
        raise ValueError(f"synthetic environment has arms 0, 1, 2; got {arm}")
    return float(expected_rewards(x)[arm] + rng.normal(0.0, np.sqrt(noise_var)))


def truncated_normal(
    rng: np.random.Generator, size, low: float, high: float, batch: int = 256
) -> np.ndarray:
    """Standard normal draws restricted to ``(low, high)`` by rejection."""
    if not low < high:
        raise ValueError("truncation interval needs low < high")
    n = int(np.prod(size))
    out = np.empty(n)
    filled = 0
    while filled < n:
        z = rng.standard_normal(batch)
        z = z[(z > low) & (z < high)][: n - filled]
        out[filled : filled + z.size] = z
        filled += z.size
    return out.reshape(size)


def feature_map(x, mode: str = "well", cross_term: bool = False, normalize: bool = False) -> np.ndarray:
    """Policy features of a raw context.

    ``mis`` gives ``(1, x0, x1)``; ``well`` adds ``x0^2, x1^2`` (and ``x0*x1``
    with ``cross_term``).  ``normalize`` projects the vector into the unit ball.
    """
    x = np.asarray(x, dtype=float)
    x0, x1 = x[..., 0], x[..., 1]
    cols = [np.ones_like(x0), x0, x1]
    if mode == "well":
        cols += [x0**2, x1**2]
        if cross_term:
            cols.append(x0 * x1)
    elif mode != "mis":
        raise ValueError(f"mode must be 'well' or 'mis', got {mode!r}")
    phi = np.stack(cols, axis=-1)
    if normalize:
        norm = np.linalg.norm(phi, axis=-1, keepdims=True)
        phi = phi / np.maximum(norm, 1.0)
    return phi


@dataclass(frozen=True)
class SyntheticEnv:
    """Quadratic three-arm problem with a biased warm start."""

    mode: str = "well"
    noise_var: float = 0.01
    warm_size: int = 50
    truncation: Tuple[float, float] = (-1.15, -0.85)
    cross_term: bool = False
    normalize: bool = False

    n_arms = N_SYNTHETIC_ARMS

    def __post_init__(self) -> None:
        if self.mode not in ("well", "mis"):
            raise ValueError(f"mode must be 'well' or 'mis', got {self.mode!r}")
        if self.noise_var <= 0:
            raise ValueError("noise variance must be positive")
        if not self.truncation[0] < self.truncation[1]:
            raise ValueError("truncation interval needs lower < upper")

    @property
    def n_features(self) -> int:
        return 3 if self.mode == "mis" else 5 + int(self.cross_term)

    def context(self, phase: str, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        """Raw 2-d context(s): truncated normal in the warm phase, N(0, I) online."""
        shape = (2,) if size is None else (size, 2)
        if phase == "warm":
            return truncated_normal(rng, shape, *self.truncation)
        if phase == "online":
            return rng.standard_normal(shape)
        raise ValueError(f"phase must be 'warm' or 'online', got {phase!r}")

    def features(self, x) -> np.ndarray:
        return feature_map(x, self.mode, self.cross_term, self.normalize)

    def reward(self, arm: int, x, rng: np.random.Generator) -> float:
        return synthetic_reward(arm, x, rng, self.noise_var)

    def expected(self, x) -> np.ndarray:
        return expected_rewards(x)

    def optimal_arm(self, x):
        return true_optimal_arm(x)


def synthetic_context(phase: str, rng: np.random.Generator, env: Optional[SyntheticEnv] = None) -> np.ndarray:
    """One raw context from ``env`` (default configuration when omitted)."""
    return (env or SyntheticEnv()).context(phase, rng)


def warm_start(env: SyntheticEnv, policy, rng: np.random.Generator, log: Optional[list] = None):
    """Feed ``env.warm_size`` warm contexts with uniformly random arms into ``policy``.

    Each observation is logged with propensity ``1/K``.  When ``log`` is given,
    ``(x, arm, reward)`` tuples are appended to it.
    """
    K = env.n_arms
    for _ in range(env.warm_size):
        x = env.context("warm", rng)
        arm = int(rng.integers(K))
        reward = env.reward(arm, x, rng)
        policy.observe(env.features(x), arm, reward, 1.0 / K)
        if log is not None:
            log.append((x, arm, reward))
    return policy


@dataclass(frozen=True)
class ClassificationEnv:
    """Labelled rows served in order; arm ``k`` is correct iff it equals the label."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    class_names: Tuple[str, ...] = ()
    feature_names: Tuple[str, ...] = ()
    name: str = "dataset"
    shuffle_seed: Optional[int] = None

    def __post_init__(self) -> None:
        X = np.atleast_2d(np.asarray(self.features, dtype=float))
        y = np.asarray(self.labels).reshape(-1).astype(int)
        if X.shape[0] != y.size:
            raise ValueError("features and labels differ in length")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise ValueError(f"labels must lie in 0..{self.n_classes - 1}")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.labels.size

    @property
    def n_arms(self) -> int:
        return self.n_classes

    @property
    def n_features(self) -> int:
        """Policy feature count: standardized columns plus an intercept."""
        return self.features.shape[1] + 1

    def context(self, t: int) -> np.ndarray:
        return np.concatenate([[1.0], self.features[t]])

    def shuffled(self, seed: int) -> "ClassificationEnv":
        perm = np.random.default_rng(seed).permutation(self.n)
        return ClassificationEnv(
            self.features[perm],
            self.labels[perm],
            self.n_classes,
            self.class_names,
            self.feature_names,
            self.name,
            seed,
        )

    def step(self, t: int, arm: int) -> int:
        return classification_step(self, t, arm)


def classification_step(env: ClassificationEnv, t: int, arm: int) -> int:
    """Reward 1 if ``arm`` is the true class of row ``t``, else 0."""
    if not 0 <= t < env.n:
        raise IndexError(f"row {t} out of range for {env.n} rows")
    return int(arm == env.labels[t])


def standardize(X: np.ndarray) -> np.ndarray:
    mean = X.mean(axis=0)
    sd = np.sqrt(np.maximum(X.var(axis=0), _VARIANCE_FLOOR))
    out = (X - mean) / sd
    out[:, X.var(axis=0) < _VARIANCE_FLOOR] = 0.0
    return out


def _parse_rows(handle, source: str, label_column: Optional[str]):
    reader = csv.reader(handle)
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetError(f"{source}: file is empty") from None
    header = [h.strip() for h in header]
    if label_column is None:
        label_idx = len(header) - 1
    elif label_column in header:
        label_idx = header.index(label_column)
    else:
        raise DatasetError(f"{source}: label column {label_column!r} not in header {header}")
    feat_idx = [i for i in range(len(header)) if i != label_idx]
    rows: List[List[float]] = []
    labels: List[str] = []
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DatasetError(f"{source}: row {line_no} has {len(row)} cells, header has {len(header)}")
        values = []
        for i in feat_idx:
            cell = row[i].strip()
            try:
                values.append(float(cell))
            except ValueError:
                raise DatasetError(
                    f"{source}: non-numeric value {cell!r} at row {line_no}, column {header[i]!r}"
                ) from None
        rows.append(values)
        labels.append(row[label_idx].strip())
    if not rows:
        raise DatasetError(f"{source}: no data rows")
    return header, feat_idx, label_idx, np.array(rows, dtype=float), labels


def load_dataset(path: Union[str, Path], label_column: Optional[str] = None, name: Optional[str] = None) -> ClassificationEnv:
    """Read a CSV dataset (header row, numeric features, one label column).

    The label column defaults to the last one.  Features are standardized per
    column; labels are mapped to ``0..K-1`` in order of first appearance.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            parsed = _parse_rows(fh, str(path), label_column)
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    return _build_env(parsed, name or path.stem)


def _build_env(parsed, name: str) -> ClassificationEnv:
    header, feat_idx, _, X, raw_labels = parsed
    mapping = {}
    for lab in raw_labels:
        mapping.setdefault(lab, len(mapping))
    y = np.array([mapping[lab] for lab in raw_labels])
    return ClassificationEnv(
        standardize(X),
        y,
        len(mapping),
        tuple(mapping),
        tuple(header[i] for i in feat_idx),
        name,
    )


def write_dataset(env: ClassificationEnv, path: Union[str, Path], label_column: str = "label") -> None:
    """Write the (standardized) features and mapped integer labels as CSV."""
    names = list(env.feature_names) or [f"x{i}" for i in range(env.features.shape[1])]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names + [label_column])
        for row, lab in zip(env.features, env.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(lab)])


BUNDLED_DATASETS = ("iris", "wine", "breast_cancer", "digits16", "anes96_pid")


def load_bundled(name: str) -> ClassificationEnv:
    """Load one of the small public datasets shipped with the package."""
    if name not in BUNDLED_DATASETS:
        raise DatasetError(f"unknown bundled dataset {name!r}; choose from {BUNDLED_DATASETS}")
    text = resources.files("balanced_bandits").joinpath("data", f"{name}.csv").read_text(encoding="utf-8")
    return _build_env(_parse_rows(io.StringIO(text), name, None), name)
