"""Toy pixel-POMDP environments."""

from .runner import (
    ENV_PRESETS,
    EnvSpec,
    RunnerEnv,
    StepResult,
    make_env,
    oracle_action,
    reset,
    step,
)

__all__ = [
    "ENV_PRESETS",
    "EnvSpec",
    "RunnerEnv",
    "StepResult",
    "make_env",
    "oracle_action",
    "reset",
    "step",
]
