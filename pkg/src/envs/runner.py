"""Procedurally rendered point-mass "runner" environments.

A point mass moves in the arena [-1, 1]^2 toward a goal. Only a rendered
RGB frame is observed. Source/target pairs differ by slope (constant drift
along x), masked actuators and background tint.

Dynamics per step, with masked(a) zeroing the masked action indices::

    v <- clip(v + C_A * masked(a) - (slope * C_G, 0) - C_F * v, -V_MAX, V_MAX)
    p <- clip(p + v, -1, 1)
    r  = 1 - ||p - goal|| / D_MAX
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional, Tuple

import gymnasium as gym
import numpy as np
from gymnasium import spaces

from ..utils.errors import ConfigError, EnvUsageError

C_A = 0.1
C_G = 0.5
C_F = 0.2
V_MAX = 0.2
ARENA = 1.0
D_MAX = 2.0 * math.sqrt(2.0) * ARENA
SPAWN = 0.9
BACKGROUND = 64

# Observation type: uint8 array [H, W, C] with values in [0, 255].
Observation = np.ndarray

ENV_PRESETS: Dict[str, Dict[str, Any]] = {
    "flat": {},
    "downhill": {"slope": 0.1},
    "uphill": {"slope": -0.1},
    "nofoot": {"masked_action_dims": (1,)},
    "tinted": {"tint": (0, 0, 48)},
    "downhill_tinted": {"slope": 0.1, "tint": (0, 0, 48)},
}


@dataclass(frozen=True)
class EnvSpec:
    """Full description of one runner environment."""

    family: str = "runner"
    image_size: int = 32
    channels: int = 3
    slope: float = 0.0
    masked_action_dims: Tuple[int, ...] = ()
    tint: Tuple[int, int, int] = (0, 0, 0)
    episode_limit: int = 200
    action_dim: int = 2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "masked_action_dims", tuple(sorted(int(d) for d in self.masked_action_dims)))
        object.__setattr__(self, "tint", tuple(int(t) for t in self.tint))
        problems = self.validate()
        if problems:
            raise ConfigError("; ".join(problems), fields=[p.split(":")[0] for p in problems])

    def validate(self, prefix: str = "") -> list:
        """Return a list of "field: problem" strings (empty if valid)."""
        problems = []
        if self.family != "runner":
            problems.append(f"{prefix}family: unknown family '{self.family}'")
        if self.image_size < 8:
            problems.append(f"{prefix}image_size: must be >= 8, got {self.image_size}")
        if self.channels != 3:
            problems.append(f"{prefix}channels: must be 3, got {self.channels}")
        if abs(self.slope) > 0.5:
            problems.append(f"{prefix}slope: |slope| must be <= 0.5, got {self.slope}")
        if self.action_dim != 2:
            problems.append(f"{prefix}action_dim: runner envs have 2 action dims, got {self.action_dim}")
        bad = [d for d in self.masked_action_dims if not 0 <= d < self.action_dim]
        if bad:
            problems.append(f"{prefix}masked_action_dims: indices {bad} outside 0..{self.action_dim - 1}")
        if len(self.tint) != 3:
            problems.append(f"{prefix}tint: must have 3 components")
        if self.episode_limit < 1:
            problems.append(f"{prefix}episode_limit: must be >= 1, got {self.episode_limit}")
        return problems

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["masked_action_dims"] = list(self.masked_action_dims)
        data["tint"] = list(self.tint)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EnvSpec":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown EnvSpec keys: {sorted(unknown)}", fields=sorted(unknown))
        return cls(**data)

    @classmethod
    def preset(cls, name: str, seed: int = 0, **overrides) -> "EnvSpec":
        """Build one of the named source/target presets."""
        if name not in ENV_PRESETS:
            raise ConfigError(f"unknown env preset '{name}' (choose from {sorted(ENV_PRESETS)})",
                              fields=["env"])
        kwargs = dict(ENV_PRESETS[name])
        kwargs.update(overrides)
        return cls(seed=seed, **kwargs)


@dataclass
class RunnerState:
    """Hidden simulator state; never shown to agents."""

    position: np.ndarray
    velocity: np.ndarray
    goal: np.ndarray

    def copy(self) -> "RunnerState":
        return RunnerState(self.position.copy(), self.velocity.copy(), self.goal.copy())


@dataclass
class StepResult:
    observation: Observation
    reward: float
    discount_flag: float
    info: Dict[str, Any] = field(default_factory=dict)

    @property
    def done(self) -> bool:
        return self.discount_flag == 0.0


class RunnerEnv(gym.Env):
    """Goal-reaching point mass observed through pixels."""

    metadata = {"render_modes": ["rgb_array"]}

    def __init__(self, env_spec: EnvSpec):
        super().__init__()
        self.env_spec = env_spec
        size = env_spec.image_size
        self.observation_space = spaces.Box(0, 255, (size, size, env_spec.channels), dtype=np.uint8)
        self.action_space = spaces.Box(-1.0, 1.0, (env_spec.action_dim,), dtype=np.float32)

        self._rows, self._cols = np.mgrid[0:size, 0:size]
        self._radius = max(1, size // 16)
        self._background = np.clip(
            BACKGROUND + np.asarray(env_spec.tint, dtype=np.int64), 0, 255
        ).astype(np.uint8)

        self._state: Optional[RunnerState] = None
        self._steps = 0
        self._done = True
        self._seeded = False
        self.total_steps = 0

    @property
    def state(self) -> RunnerState:
        if self._state is None:
            raise EnvUsageError("environment has not been reset")
        return self._state.copy()

    @property
    def steps(self) -> int:
        return self._steps

    def mask_action(self, action) -> np.ndarray:
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(self.env_spec.action_dim), -1.0, 1.0)
        if self.env_spec.masked_action_dims:
            a[list(self.env_spec.masked_action_dims)] = 0.0
        return a

    def reset(self, *, seed: Optional[int] = None, options: Optional[dict] = None):
        if seed is None and not self._seeded:
            seed = self.env_spec.seed
        super().reset(seed=seed)
        self._seeded = True

        position = self.np_random.uniform(-SPAWN, SPAWN, size=2)
        goal = self.np_random.uniform(-SPAWN, SPAWN, size=2)
        self._state = RunnerState(position, np.zeros(2), goal)
        self._steps = 0
        self._done = False
        return self.render(), self._info()

    def step(self, action):
        if self._done:
            raise EnvUsageError("step() called after the episode ended; call reset() first")

        a = self.mask_action(action)
        s = self._state
        drift = np.array([self.env_spec.slope * C_G, 0.0])
        velocity = np.clip(s.velocity + C_A * a - drift - C_F * s.velocity, -V_MAX, V_MAX)
        position = np.clip(s.position + velocity, -ARENA, ARENA)
        self._state = RunnerState(position, velocity, s.goal)

        self._steps += 1
        self.total_steps += 1
        reward = float(np.clip(1.0 - np.linalg.norm(position - s.goal) / D_MAX, 0.0, 1.0))
        truncated = self._steps >= self.env_spec.episode_limit
        self._done = truncated
        return self.render(), reward, False, truncated, self._info()

    def render(self) -> Observation:
        return render_state(self._state, self.env_spec, self._rows, self._cols,
                            self._radius, self._background)

    def _info(self) -> Dict[str, Any]:
        s = self._state
        return {
            "position": s.position.copy(),
            "velocity": s.velocity.copy(),
            "goal": s.goal.copy(),
            "step": self._steps,
        }


def _to_pixel(point: np.ndarray, size: int) -> Tuple[float, float]:
    col = (point[0] + ARENA) / (2 * ARENA) * (size - 1)
    row = (ARENA - point[1]) / (2 * ARENA) * (size - 1)
    return row, col


def render_state(state: RunnerState, env_spec: EnvSpec, rows: np.ndarray, cols: np.ndarray,
                 radius: int, background: np.ndarray) -> Observation:
    """Pure function of the hidden state."""
    size = env_spec.image_size
    frame = np.empty((size, size, env_spec.channels), dtype=np.uint8)
    frame[:] = background

    goal_row, goal_col = _to_pixel(state.goal, size)
    goal_mask = (np.abs(rows - round(goal_row)) <= radius) & (np.abs(cols - round(goal_col)) <= radius)
    frame[goal_mask] = (40, 200, 40)

    agent_row, agent_col = _to_pixel(state.position, size)
    agent_mask = (rows - agent_row) ** 2 + (cols - agent_col) ** 2 <= radius ** 2 + 0.5
    frame[agent_mask] = (220, 40, 40)
    return frame


def make_env(spec: EnvSpec) -> RunnerEnv:
    """Create an environment handle for ``spec``."""
    if not isinstance(spec, EnvSpec):
        raise ConfigError("make_env expects an EnvSpec", fields=["spec"])
    problems = spec.validate()
    if problems:
        raise ConfigError("; ".join(problems), fields=[p.split(":")[0] for p in problems])
    return RunnerEnv(spec)


def reset(env: RunnerEnv, seed: Optional[int] = None) -> Observation:
    observation, _ = env.reset(seed=seed)
    return observation


def step(env: RunnerEnv, action) -> StepResult:
    observation, reward, terminated, truncated, info = env.step(action)
    discount_flag = 0.0 if (terminated or truncated) else 1.0
    return StepResult(observation=observation, reward=reward, discount_flag=discount_flag, info=info)


def oracle_action(env: RunnerEnv) -> np.ndarray:
    """Scripted straight-to-goal action with drift compensation.

    Reads the hidden state, so it is only used for the max-score estimate
    and for tests.
    """
    s = env.state
    desired = np.clip(s.goal - s.position, -V_MAX, V_MAX)
    drift = np.array([env.env_spec.slope * C_G, 0.0])
    action = (desired - (1.0 - C_F) * s.velocity + drift) / C_A
    return env.mask_action(action).astype(np.float32)
