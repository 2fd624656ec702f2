"""Configuration management for coworld.

Defaults follow the co-training hyperparameter table, scaled to desk size
where noted.
"""

import copy
import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional

import platformdirs

from ..envs.runner import EnvSpec
from ..utils.errors import ConfigError
from ..utils.hashing import dict_hash

SCHEMA_VERSION = 1
ABLATIONS = ("none", "no_align", "no_value_reg", "offline_baseline")
RUN_DIR_ENV = "CWLD_RUN_DIR"


@dataclass
class ModelConfig:
    deter_size: int = 128  # D
    latent_groups: int = 8  # G
    latent_classes: int = 8  # K
    hidden_size: int = 128
    cnn_depth: int = 16
    kl_scale: float = 1.0  # beta_1
    kl_balance: float = 0.8
    free_nats: float = 1.0
    learning_rate: float = 2e-4
    grad_clip: float = 100.0
    adam_eps: float = 1e-5


@dataclass
class BehaviorConfig:
    horizon: int = 15  # H
    gamma: float = 0.995
    lambda_: float = 0.95
    actor_lr: float = 4e-5
    critic_lr: float = 1e-4
    entropy_scale: float = 1e-4
    hidden_size: int = 128
    min_std: float = 0.1
    init_std: float = 1.0
    grad_clip: float = 100.0
    slow_target_update: int = 100
    slow_target_fraction: float = 1.0


@dataclass
class CoTrainConfig:
    domain_kl_scale: float = 1.5  # beta_2
    reward_balance: float = 0.2  # k
    value_reg_scale: float = 0.2  # alpha
    value_scale: float = 1.0  # zeta
    target_steps: int = 500  # K_1, per outer iteration
    source_steps: int = 500  # K_2, per outer iteration
    pretrain_steps: int = 2000
    outer_iterations: int = 5
    collect_every: int = 50


@dataclass
class TrainingConfig:
    batch_size: int = 16
    seq_len: int = 16
    buffer_capacity: int = 200_000
    prefill_episodes: int = 2
    device: str = "cpu"


@dataclass
class DatasetConfig:
    budget_steps: int = 20_000
    oracle_episodes: int = 10
    eval_episodes: int = 10
    eval_every_episodes: int = 1
    updates_per_episode: int = 50


@dataclass
class EvalConfig:
    eval_every: int = 1
    episodes: int = 10
    value_horizon: int = 500
    open_loop_context: int = 5
    open_loop_horizon: int = 45


@dataclass
class PathsConfig:
    dataset_dir: Optional[str] = None
    run_dir: Optional[str] = None


@dataclass
class CoWorldConfig:
    """Every hyperparameter of a run."""

    schema: int = SCHEMA_VERSION
    seed: int = 0
    ablation: str = "none"
    source_env: EnvSpec = field(default_factory=lambda: EnvSpec.preset("flat"))
    target_env: EnvSpec = field(default_factory=lambda: EnvSpec.preset("downhill"))
    model: ModelConfig = field(default_factory=ModelConfig)
    behavior: BehaviorConfig = field(default_factory=BehaviorConfig)
    cotrain: CoTrainConfig = field(default_factory=CoTrainConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    @property
    def uses_source_agent(self) -> bool:
        return self.cotrain.domain_kl_scale > 0 or self.cotrain.value_reg_scale > 0

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["source_env"] = self.source_env.to_dict()
        data["target_env"] = self.target_env.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CoWorldConfig":
        unknown = _unknown_keys(data, DEFAULT_CONFIG)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}", fields=unknown)

        merged = _deep_merge(DEFAULT_CONFIG, data)
        try:
            return cls(
                schema=merged["schema"],
                seed=merged["seed"],
                ablation=merged["ablation"],
                source_env=EnvSpec.from_dict(merged["source_env"]),
                target_env=EnvSpec.from_dict(merged["target_env"]),
                model=ModelConfig(**merged["model"]),
                behavior=BehaviorConfig(**merged["behavior"]),
                cotrain=CoTrainConfig(**merged["cotrain"]),
                training=TrainingConfig(**merged["training"]),
                dataset=DatasetConfig(**merged["dataset"]),
                evaluation=EvalConfig(**merged["evaluation"]),
                paths=PathsConfig(**merged["paths"]),
            )
        except TypeError as e:
            raise ConfigError(f"invalid config structure: {e}") from e

    def validate(self) -> List[str]:
        """Return every problem as "dotted.field: message"."""
        problems = []

        def check(ok: bool, name: str, message: str):
            if not ok:
                problems.append(f"{name}: {message}")

        check(self.schema == SCHEMA_VERSION, "schema", f"must be {SCHEMA_VERSION}")
        check(self.ablation in ABLATIONS, "ablation", f"must be one of {ABLATIONS}")

        problems.extend(self.source_env.validate("source_env."))
        problems.extend(self.target_env.validate("target_env."))
        check(self.source_env.image_size == self.target_env.image_size, "target_env.image_size",
              "must match source_env.image_size")
        check(self.source_env.image_size % 8 == 0, "source_env.image_size",
              "must be a multiple of 8 for the conv encoder")

        m = self.model
        for name in ("deter_size", "latent_groups", "latent_classes", "hidden_size", "cnn_depth"):
            check(getattr(m, name) >= 1, f"model.{name}", "must be >= 1")
        check(m.latent_classes >= 2, "model.latent_classes", "must be >= 2")
        check(m.kl_scale > 0, "model.kl_scale", "must be > 0")
        check(0.0 <= m.kl_balance <= 1.0, "model.kl_balance", "must be in [0, 1]")
        check(m.free_nats >= 0, "model.free_nats", "must be >= 0")
        check(m.learning_rate > 0, "model.learning_rate", "must be > 0")
        check(m.grad_clip > 0, "model.grad_clip", "must be > 0")

        b = self.behavior
        check(b.horizon >= 1, "behavior.horizon", "must be >= 1")
        check(0.0 < b.gamma <= 1.0, "behavior.gamma", "must be in (0, 1]")
        check(0.0 <= b.lambda_ <= 1.0, "behavior.lambda_", "must be in [0, 1]")
        check(b.actor_lr > 0, "behavior.actor_lr", "must be > 0")
        check(b.critic_lr > 0, "behavior.critic_lr", "must be > 0")
        check(b.entropy_scale >= 0, "behavior.entropy_scale", "must be >= 0")
        check(b.min_std > 0, "behavior.min_std", "must be > 0")
        check(b.slow_target_update >= 1, "behavior.slow_target_update", "must be >= 1")
        check(0.0 < b.slow_target_fraction <= 1.0, "behavior.slow_target_fraction", "must be in (0, 1]")

        c = self.cotrain
        check(c.domain_kl_scale >= 0, "cotrain.domain_kl_scale", "must be >= 0")
        check(0.0 <= c.reward_balance <= 1.0, "cotrain.reward_balance", "must be in [0, 1]")
        check(c.value_reg_scale >= 0, "cotrain.value_reg_scale", "must be >= 0")
        check(c.value_scale > 0, "cotrain.value_scale", "must be > 0")
        check(c.target_steps >= 1, "cotrain.target_steps", "must be >= 1")
        check(c.source_steps >= 1, "cotrain.source_steps", "must be >= 1")
        check(c.pretrain_steps >= 0, "cotrain.pretrain_steps", "must be >= 0")
        check(c.outer_iterations >= 0, "cotrain.outer_iterations", "must be >= 0")
        check(c.collect_every >= 1, "cotrain.collect_every", "must be >= 1")

        t = self.training
        check(t.batch_size >= 1, "training.batch_size", "must be >= 1")
        check(t.seq_len >= 2, "training.seq_len", "must be >= 2")
        shortest = min(self.source_env.episode_limit, self.target_env.episode_limit)
        check(t.seq_len <= shortest + 1, "training.seq_len", f"must fit in an episode ({shortest + 1} frames)")
        check(self.source_env.action_dim == self.target_env.action_dim, "target_env.action_dim",
              "must match source_env.action_dim")
        check(t.buffer_capacity >= self.source_env.episode_limit, "training.buffer_capacity",
              "must hold at least one source episode")
        check(t.prefill_episodes >= 0, "training.prefill_episodes", "must be >= 0")

        d = self.dataset
        check(d.budget_steps >= 0, "dataset.budget_steps", "must be >= 0")
        check(d.oracle_episodes >= 1, "dataset.oracle_episodes", "must be >= 1")
        check(d.eval_episodes >= 1, "dataset.eval_episodes", "must be >= 1")
        check(d.eval_every_episodes >= 1, "dataset.eval_every_episodes", "must be >= 1")
        check(d.updates_per_episode >= 0, "dataset.updates_per_episode", "must be >= 0")

        e = self.evaluation
        check(e.eval_every >= 0, "evaluation.eval_every", "must be >= 0 (0 disables)")
        check(e.episodes >= 1, "evaluation.episodes", "must be >= 1")
        check(e.value_horizon >= 1, "evaluation.value_horizon", "must be >= 1")
        check(e.open_loop_context >= 1, "evaluation.open_loop_context", "must be >= 1")
        check(e.open_loop_horizon >= 0, "evaluation.open_loop_horizon", "must be >= 0")
        return problems

    def ensure_valid(self) -> "CoWorldConfig":
        problems = self.validate()
        if problems:
            raise ConfigError(
                "invalid configuration:\n  " + "\n  ".join(problems),
                fields=[p.split(":")[0] for p in problems],
            )
        return self


DEFAULT_CONFIG: Dict[str, Any] = CoWorldConfig().to_dict()


def _unknown_keys(data: Dict[str, Any], reference: Dict[str, Any], prefix: str = "") -> List[str]:
    unknown = []
    for key, value in data.items():
        dotted = f"{prefix}{key}"
        if key not in reference:
            unknown.append(dotted)
        elif isinstance(value, dict) and isinstance(reference[key], dict):
            unknown.extend(_unknown_keys(value, reference[key], dotted + "."))
    return unknown


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def config_hash(config: CoWorldConfig) -> str:
    return dict_hash(config.to_dict())


def apply_ablation(config: CoWorldConfig, ablation: str) -> CoWorldConfig:
    """Return a copy of ``config`` with the ablation's scales zeroed."""
    if ablation not in ABLATIONS:
        raise ConfigError(f"unknown ablation '{ablation}' (choose from {ABLATIONS})", fields=["ablation"])

    cotrain = config.cotrain
    if ablation in ("no_align", "offline_baseline"):
        cotrain = replace(cotrain, domain_kl_scale=0.0)
    if ablation in ("no_value_reg", "offline_baseline"):
        cotrain = replace(cotrain, value_reg_scale=0.0)
    return replace(config, ablation=ablation, cotrain=cotrain)


def default_output_root() -> Path:
    """``$CWLD_RUN_DIR`` if set, else the per-user data directory."""
    env_root = os.environ.get(RUN_DIR_ENV)
    if env_root:
        return Path(env_root).expanduser().resolve()
    return platformdirs.user_data_path("coworld") / "runs"


class Config:
    """Configuration file manager for coworld."""

    def __init__(self, config_path: Optional[Path] = None):
        """Initialize configuration.

        Args:
            config_path: Path to a JSON config file. If None, defaults are used.
        """
        self.config_path = Path(config_path).expanduser() if config_path else None
        self.config = self._load_config()

    def _load_config(self) -> Dict[str, Any]:
        """Load configuration from file merged over the defaults."""
        if self.config_path is None:
            return copy.deepcopy(DEFAULT_CONFIG)

        if not self.config_path.exists():
            raise ConfigError(f"config file not found: {self.config_path}", fields=["config"])
        try:
            with open(self.config_path, 'r') as f:
                loaded = json.load(f)
        except (json.JSONDecodeError, IOError) as e:
            raise ConfigError(f"cannot read config {self.config_path}: {e}", fields=["config"]) from e

        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object", fields=["config"])
        if loaded.get("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema {loaded.get('schema')}", fields=["schema"])

        unknown = _unknown_keys(loaded, DEFAULT_CONFIG)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}", fields=unknown)
        return _deep_merge(DEFAULT_CONFIG, loaded)

    def save(self, path: Optional[Path] = None):
        """Save current configuration to file."""
        path = Path(path) if path else self.config_path
        if path is None:
            raise ConfigError("no path to save the configuration to", fields=["config"])
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w') as f:
            json.dump(self.config, f, indent=2, sort_keys=True)

    def get(self, key: str, default: Any = None) -> Any:
        """Get a configuration value.

        Args:
            key: Configuration key (supports dot notation, e.g., 'cotrain.reward_balance')
            default: Default value if key not found

        Returns:
            Configuration value
        """
        keys = key.split('.')
        value = self.config

        for k in keys:
            if isinstance(value, dict) and k in value:
                value = value[k]
            else:
                return default

        return value

    def set(self, key: str, value: Any):
        """Set a configuration value.

        Args:
            key: Configuration key (supports dot notation)
            value: Value to set
        """
        keys = key.split('.')
        reference = DEFAULT_CONFIG
        for k in keys:
            if not isinstance(reference, dict) or k not in reference:
                raise ConfigError(f"unknown config key '{key}'", fields=[key])
            reference = reference[k]

        config = self.config
        for k in keys[:-1]:
            config = config[k]
        config[keys[-1]] = value

    def build(self) -> CoWorldConfig:
        """Return the validated typed configuration."""
        return CoWorldConfig.from_dict(self.config).ensure_valid()
