"""
Reference-modification planner.

Pure pursuit proposes (v_ref, delta_ref); the TD3 actor reads a scaled state
and adds a steering offset; a friction-based safety filter clips the result.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Protocol, Tuple

import numpy as np

from refmod.config import PPConfig, RewardConfig, SimParams
from refmod.errors import ValidationError
from refmod.pure_pursuit import PlanPath, PursuitReference, friction_velocity, plan
from refmod.sim_core import Scan, VehicleState
from refmod.td3 import Td3Agent

# steering floor used when recomputing the friction speed of a filtered command
STEER_EPS = 1e-6


@dataclass(frozen=True)
class PlannerState:
    """Scaled network input [V, delta, V_ref, delta_ref, r_1..r_m]; ``clipped`` counts saturated entries."""
    vector: np.ndarray
    clipped: int = 0

    def __len__(self) -> int:
        return len(self.vector)


class UnscaledState(NamedTuple):
    v: float
    delta: float
    v_ref: float
    delta_ref: float
    ranges: np.ndarray


def _to_unit(q: np.ndarray, q_max: float) -> np.ndarray:
    return 2.0 * (q / q_max) - 1.0


def assemble_state(vehicle: VehicleState, pf: PursuitReference, scan: Scan, params: SimParams) -> PlannerState:
    """
    Scale the planner inputs into [-1, 1].

    Speeds and ranges map affinely from [0, q_max]; steering angles map as
    delta / delta_max. Values outside their physical range are clipped and
    counted in ``PlannerState.clipped``.
    """
    if len(scan) != params.n_beams:
        raise ValidationError(f"scan has {len(scan)} beams, expected {params.n_beams}")
    raw = np.concatenate([
        _to_unit(np.array([vehicle.v]), params.max_speed),
        [vehicle.delta / params.max_steer],
        _to_unit(np.array([pf.v_ref]), params.max_speed),
        [pf.delta_ref / params.max_steer],
        _to_unit(np.asarray(scan.ranges, dtype=float), params.max_range),
    ])
    if not np.all(np.isfinite(raw)):
        raise ValidationError("planner state contains non-finite values")
    vector = np.clip(raw, -1.0, 1.0)
    return PlannerState(vector, int(np.count_nonzero(vector != raw)))


def unscale_state(state: PlannerState, params: SimParams) -> UnscaledState:
    """Inverse of ``assemble_state`` on its box domain."""
    vec = np.asarray(state.vector, dtype=float)
    speeds = 0.5 * (vec[[0, 2]] + 1.0) * params.max_speed
    ranges = 0.5 * (vec[4:] + 1.0) * params.max_range
    return UnscaledState(float(speeds[0]), float(vec[1] * params.max_steer),
                         float(speeds[1]), float(vec[3] * params.max_steer), ranges)


def modify_steering(delta_pf: float, action: float, delta_max: float) -> float:
    """delta_pf + action * delta_max; may exceed delta_max until filtered."""
    return delta_pf + action * delta_max


def steering_bound(v_now: float, params: SimParams) -> float:
    """Largest steering magnitude that keeps lateral acceleration within b*g at v_now."""
    if v_now <= 0.0:
        return params.max_steer
    limit = math.atan(params.friction * params.gravity * params.wheelbase / (v_now * v_now))
    return min(params.max_steer, limit)


def safety_filter(delta_combined: float, v_now: float, params: SimParams,
                  v_pf: Optional[float] = None) -> Tuple[float, float]:
    """
    Clip the combined steering to the friction limit at the current speed and
    recompute the speed reference for the clipped steering.

    Args:
        delta_combined: follower steering plus network offset (rad)
        v_now: current vehicle speed (m/s)
        params: simulation parameters
        v_pf: optional follower speed; the result never exceeds it

    Returns:
        (v_ref, delta_ref)
    """
    if v_now < 0.0:
        raise ValidationError("current speed must be non-negative")
    bound = steering_bound(v_now, params)
    delta_ref = min(max(delta_combined, -bound), bound)
    v_ref = friction_velocity(max(abs(delta_ref), STEER_EPS), params)
    if v_pf is not None:
        v_ref = min(v_ref, v_pf)
    return v_ref, delta_ref


def reward(crashed: bool, delta_nn: float, cfg: RewardConfig, delta_max: float) -> float:
    """r_crash on a crash, otherwise beta1 - beta2 * |delta_nn| / delta_max."""
    if crashed:
        return cfg.r_crash
    return cfg.beta1 - cfg.beta2 * abs(delta_nn) / delta_max


class Observation(NamedTuple):
    state: VehicleState
    scan: Scan
    pf: PursuitReference
    planner_state: Optional[PlannerState] = None


class Command(NamedTuple):
    v_ref: float
    delta_ref: float
    action: float = 0.0
    delta_nn: float = 0.0
    planner_state: Optional[PlannerState] = None


class Planner(Protocol):
    path: PlanPath

    def observe(self, state: VehicleState, scan: Scan) -> Observation: ...

    def act(self, obs: Observation) -> Command: ...


class PurePursuitPlanner:
    """Pure pursuit followed by the same safety filter the hybrid planner uses."""

    def __init__(self, path: PlanPath, cfg: Optional[PPConfig] = None, params: Optional[SimParams] = None):
        self.path = path
        self.cfg = cfg or PPConfig()
        self.params = params or SimParams()

    def observe(self, state: VehicleState, scan: Scan) -> Observation:
        return Observation(state, scan, plan(state, self.path, self.cfg, self.params))

    def act(self, obs: Observation) -> Command:
        v_ref, delta_ref = safety_filter(modify_steering(obs.pf.delta_ref, 0.0, self.params.max_steer),
                                         obs.state.v, self.params, obs.pf.v_ref)
        return Command(v_ref, delta_ref)


class HybridPlanner(PurePursuitPlanner):
    """
    Pure pursuit with a learned steering offset.

    When ``random_action_rng`` is set the actor is bypassed and actions are
    drawn uniformly from [-1, 1] (replay warm-up).
    """

    def __init__(self, path: PlanPath, agent: Td3Agent, cfg: Optional[PPConfig] = None,
                 params: Optional[SimParams] = None, explore: bool = False,
                 random_action_rng: Optional[np.random.Generator] = None):
        super().__init__(path, cfg, params)
        if agent.state_dim != self.params.state_dim:
            raise ValidationError(f"agent expects {agent.state_dim} inputs, planner state has {self.params.state_dim}")
        self.agent = agent
        self.explore = explore
        self.random_action_rng = random_action_rng

    def observe(self, state: VehicleState, scan: Scan) -> Observation:
        pf = plan(state, self.path, self.cfg, self.params)
        return Observation(state, scan, pf, assemble_state(state, pf, scan, self.params))

    def act(self, obs: Observation) -> Command:
        if self.random_action_rng is not None:
            action = float(self.random_action_rng.uniform(-1.0, 1.0))
        else:
            action = self.agent.select_action(obs.planner_state.vector, self.explore)
        delta_max = self.params.max_steer
        combined = modify_steering(obs.pf.delta_ref, action, delta_max)
        v_ref, delta_ref = safety_filter(combined, obs.state.v, self.params, obs.pf.v_ref)
        return Command(v_ref, delta_ref, action, action * delta_max, obs.planner_state)


def plan_hybrid(vehicle: VehicleState, scan: Scan, path: PlanPath, agent: Td3Agent, explore: bool = False,
                cfg: Optional[PPConfig] = None, params: Optional[SimParams] = None) -> Command:
    """
    One hybrid planning step: pure pursuit, state assembly, actor, steering
    modification and safety filter. The returned command carries the scaled
    state and action for replay insertion.
    """
    planner = HybridPlanner(path, agent, cfg, params, explore)
    return planner.act(planner.observe(vehicle, scan))
