"""Configuration for coworld runs."""

from .settings import (
    ABLATIONS,
    DEFAULT_CONFIG,
    BehaviorConfig,
    CoTrainConfig,
    CoWorldConfig,
    Config,
    DatasetConfig,
    EvalConfig,
    ModelConfig,
    PathsConfig,
    TrainingConfig,
    apply_ablation,
    config_hash,
    default_output_root,
)

__all__ = [
    "ABLATIONS",
    "DEFAULT_CONFIG",
    "BehaviorConfig",
    "CoTrainConfig",
    "CoWorldConfig",
    "Config",
    "DatasetConfig",
    "EvalConfig",
    "ModelConfig",
    "PathsConfig",
    "TrainingConfig",
    "apply_ablation",
    "config_hash",
    "default_output_root",
]
