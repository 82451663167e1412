"""
Typed configuration models.

Every model is a frozen pydantic model so that a loaded configuration can be
shared between episodes and hashed for the run manifest.
"""

import math
from enum import Enum
from pathlib import Path
from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class SimParams(_Frozen):
    """Vehicle, controller and sensor parameters of the simulated car."""
    wheelbase: float = Field(0.33, gt=0)          # l
    length: float = Field(0.5, gt=0)              # L
    vehicle_width: float = Field(0.3, gt=0)
    mass: float = Field(3.74, gt=0)
    friction: float = Field(0.8, gt=0)            # b
    gravity: float = Field(9.81, gt=0)
    max_steer: float = Field(0.4, gt=0, lt=math.pi / 2)
    max_speed: float = Field(7.0, gt=0)
    max_steer_rate: float = Field(3.2, gt=0)
    max_accel: float = Field(7.5, gt=0)
    steer_gain: float = Field(20.0, gt=0)
    speed_gain: float = Field(10.0, gt=0)
    dt: float = Field(0.01, gt=0)
    n_beams: int = Field(10, ge=1)
    beam_fov: float = Field(math.pi, gt=0, le=2 * math.pi)
    max_range: float = Field(10.0, gt=0)

    @property
    def state_dim(self) -> int:
        """Length of the planner state vector: four references plus the beams."""
        return 4 + self.n_beams


class PPConfig(_Frozen):
    """Pure pursuit follower settings."""
    lookahead: float = Field(1.0, gt=0)
    horizon: float = Field(2.0, gt=0)


class RewardConfig(_Frozen):
    """Weights of the crash / deviation reward."""
    r_crash: float = Field(-1.0, lt=0)
    beta1: float = Field(1.0, gt=0)
    beta2: float = Field(0.5, gt=0)

    @model_validator(mode="after")
    def _crash_is_worst(self):
        # the smallest non-crash reward is beta1 - beta2 (full modification)
        if self.r_crash >= self.beta1 - self.beta2:
            raise ValueError("r_crash must be below every non-crash reward (beta1 - beta2)")
        return self


class Td3Config(_Frozen):
    """TD3 hyperparameters."""
    gamma: float = Field(0.99, gt=0, lt=1)
    tau: float = Field(0.005, gt=0, le=1)
    policy_noise: float = Field(0.2, ge=0)
    noise_clip: float = Field(0.5, ge=0)
    policy_delay: int = Field(2, ge=1)
    exploration_noise: float = Field(0.1, ge=0)
    batch_size: int = Field(100, ge=1)
    buffer_capacity: int = Field(100_000, ge=1)
    warmup_steps: int = Field(1000, ge=0)
    actor_lr: float = Field(1e-3, gt=0)
    critic_lr: float = Field(1e-3, gt=0)
    hidden_sizes: Tuple[int, ...] = (300, 300)

    @field_validator("hidden_sizes", mode="before")
    @classmethod
    def _parse_sizes(cls, value):
        if isinstance(value, str):
            value = tuple(int(part) for part in value.split(",") if part.strip())
        if not value or any(int(v) <= 0 for v in value):
            raise ValueError("hidden_sizes must be a non-empty list of positive integers")
        return tuple(int(v) for v in value)


class ForestSpec(_Frozen):
    """Random forest strip: a straight corridor with square obstacles."""
    forest_length: float = Field(25.0, gt=0)
    forest_width: float = Field(8.0, gt=0)
    n_obstacles: int = Field(6, ge=0)
    obstacle_size: float = Field(1.0, gt=0)
    start_clearance: float = Field(2.0, ge=0)
    goal_clearance: float = Field(1.5, ge=0)
    min_gap: float = Field(1.2, gt=0)
    max_retries: int = Field(1000, ge=1)
    seed: int = 0


class TrackEnvConfig(_Frozen):
    """Race-track world: track file plus random obstacle placement."""
    track_file: Optional[Path] = None             # None selects the bundled track
    closed: bool = True
    track_obstacles: int = Field(4, ge=0)
    track_obstacle_size: float = Field(0.5, gt=0)
    track_obstacle_gap: float = Field(4.0, gt=0)
    track_start_clearance: float = Field(3.0, ge=0)
    free_margin: float = Field(0.2, ge=0)
    samples_per_segment: int = Field(6, ge=1)


class Environment(str, Enum):
    FOREST = "forest"
    TRACK = "track"


class PlannerKind(str, Enum):
    HYBRID = "hybrid"
    BENCHMARK = "benchmark"
    PURE_PURSUIT = "pure-pursuit"


class RunConfig(_Frozen):
    """Complete configuration of one CLI run."""
    sim: SimParams = SimParams()
    pursuit: PPConfig = PPConfig()
    reward: RewardConfig = RewardConfig()
    td3: Td3Config = Td3Config()
    forest: ForestSpec = ForestSpec()
    track: TrackEnvConfig = TrackEnvConfig()

    environment: Environment = Environment.FOREST
    planner: PlannerKind = PlannerKind.HYBRID
    seed: int = 0
    episodes: int = Field(100, gt=0)
    train_steps: int = Field(100_000, ge=0)
    checkpoint_interval: int = Field(10_000, gt=0)
    success_window: int = Field(20, gt=0)
    episode_timeout: float = Field(60.0, gt=0)
    plan_clearance: float = Field(0.3, ge=0)
    trace_episodes: int = Field(5, ge=0)
    workers: int = Field(1, ge=1)
    checkpoint: Optional[Path] = None
    obstacle_file: Optional[Path] = None
    out_dir: Path = Path("refmod_out")

    @property
    def max_steps(self) -> int:
        return int(round(self.episode_timeout / self.sim.dt))

    @property
    def plan_margin(self) -> float:
        """Half the vehicle width plus the planner's clearance."""
        return 0.5 * self.sim.vehicle_width + self.plan_clearance


# Sections of RunConfig that own flat ``key = value`` names.
SECTIONS = {
    "sim": SimParams,
    "pursuit": PPConfig,
    "reward": RewardConfig,
    "td3": Td3Config,
    "forest": ForestSpec,
    "track": TrackEnvConfig,
}


def section_for_key(key: str) -> Optional[str]:
    """Name of the sub-model owning a flat config key, or None for top-level keys."""
    if key in RunConfig.model_fields and key not in SECTIONS:
        return None
    for section, model in SECTIONS.items():
        if key in model.model_fields:
            return section
    return None
