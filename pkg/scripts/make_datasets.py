"""Regenerate the bundled classification CSVs from sklearn and statsmodels."""
from pathlib import Path

import numpy as np
import pandas as pd
import statsmodels.api as sm
from sklearn import datasets

OUT = Path(__file__).resolve().parents[1] / "src" / "balanced_bandits" / "data"


def _frame(bunch, label_names=None) -> pd.DataFrame:
    df = pd.DataFrame(bunch.data, columns=[str(c).replace(" ", "_") for c in bunch.feature_names])
    names = label_names if label_names is not None else bunch.target_names
    df["label"] = [str(names[t]) for t in bunch.target]
    return df


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    _frame(datasets.load_iris()).to_csv(OUT / "iris.csv", index=False)
    _frame(datasets.load_wine()).to_csv(OUT / "wine.csv", index=False)
    _frame(datasets.load_breast_cancer()).to_csv(OUT / "breast_cancer.csv", index=False)

    digits = datasets.load_digits()
    pooled = digits.images.reshape(-1, 4, 2, 4, 2).mean(axis=(2, 4)).reshape(len(digits.images), 16)
    df = pd.DataFrame(pooled, columns=[f"px{i}" for i in range(16)])
    df["label"] = [f"d{t}" for t in digits.target]
    df.to_csv(OUT / "digits16.csv", index=False)

    anes = sm.datasets.anes96.load_pandas().data.drop(columns=["popul"])
    labels = anes.pop("PID").astype(int)
    anes["label"] = [f"pid{v}" for v in labels]
    anes.to_csv(OUT / "anes96_pid.csv", index=False)


if __name__ == "__main__":
    main()
