"""Balanced linear contextual bandits (BLTS, BLUCB) and their unbalanced baselines."""
from .environments import ClassificationEnv, SyntheticEnv, load_bundled, load_dataset, warm_start
from .policies import BanditPolicy, PolicyConfig, PolicyKind
from .regression import DesignData, LinearEstimate, fit_weighted_ridge

__all__ = [
    "BanditPolicy",
    "ClassificationEnv",
    "DesignData",
    "LinearEstimate",
    "PolicyConfig",
    "PolicyKind",
    "SyntheticEnv",
    "fit_weighted_ridge",
    "load_bundled",
    "load_dataset",
    "warm_start",
]

__version__ = "0.1.0"
