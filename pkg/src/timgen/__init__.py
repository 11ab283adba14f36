"""Temporal multimodal interest modelling with a VAE generation head."""

from . import numerics  # noqa: F401  (sets float64 defaults used everywhere else)
from .config import TrainConfig, load_config
from .model import TIMGen
from .synthetic import ScenarioSpec, generate, generate_dataset
from .training import evaluate, featurize_users, fit, split_users

__all__ = [
    "ScenarioSpec",
    "TIMGen",
    "TrainConfig",
    "evaluate",
    "featurize_users",
    "fit",
    "generate",
    "generate_dataset",
    "load_config",
    "split_users",
]
