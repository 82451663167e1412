"""
Evaluation worlds and episode execution.

Two worlds are provided: a straight forest strip with random square
obstacles and a closed race track with obstacles placed along it.
"""

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, NamedTuple, Optional, Tuple, Union

import networkx as nx
import numpy as np
import shapely
from shapely.geometry import Point, box
from shapely.ops import unary_union

from refmod.config import ForestSpec, RewardConfig, SimParams, TrackEnvConfig
from refmod.errors import PlacementError, ValidationError
from refmod.global_plan import TrackModel, track_region
from refmod.mod_planner import Command, Observation, Planner, reward
from refmod.pure_pursuit import PlanPath
from refmod.sim_core import Obstacle, ObstacleMap, VehicleState, cast_scan, check_collision, step

# margin (m) around the start and end of the forest strip that stays inside the corridor
FOREST_APRON = 2.0
FOREST_PATH_SPACING = 0.5
GOAL_TOLERANCE = 0.1

EPISODE_COLUMNS = ["step", "t", "x", "y", "theta", "v", "delta", "v_ref", "delta_ref", "action", "delta_nn", "reward"]


def episode_seed(master: int, index: int, stream: int = 0) -> int:
    """Independent per-episode seed derived from a master seed; streams separate training from evaluation."""
    return int(np.random.SeedSequence([master, stream, index]).generate_state(1)[0])


def forest_corridor(spec: ForestSpec) -> np.ndarray:
    half = 0.5 * spec.forest_width
    x0, x1 = -FOREST_APRON, spec.forest_length + FOREST_APRON
    return np.array([[x0, -half], [x1, -half], [x1, half], [x0, half]])


def forest_path(spec: ForestSpec) -> PlanPath:
    count = int(round(spec.forest_length / FOREST_PATH_SPACING)) + 1
    xs = np.linspace(0.0, spec.forest_length, max(count, 2))
    return PlanPath(np.column_stack([xs, np.zeros_like(xs)]))


def gen_forest(spec: ForestSpec) -> Tuple[ObstacleMap, PlanPath]:
    """
    Random forest strip.

    Square obstacles are placed uniformly inside the corridor, away from the
    start and goal discs and at least ``min_gap`` from each other, so a
    vehicle narrower than the gap always has a way through.

    Raises:
        PlacementError: if the obstacles cannot be placed within ``max_retries`` draws
    """
    rng = np.random.default_rng(spec.seed)
    half = 0.5 * spec.forest_width
    s = spec.obstacle_size
    if s >= spec.forest_width:
        raise PlacementError("obstacles are wider than the corridor")
    start, goal = Point(0.0, 0.0), Point(spec.forest_length, 0.0)

    placed: List[Obstacle] = []
    shapes = []
    attempts = 0
    while len(placed) < spec.n_obstacles:
        attempts += 1
        if attempts > spec.max_retries:
            raise PlacementError(
                f"placed {len(placed)} of {spec.n_obstacles} obstacles in {spec.max_retries} draws; spec too dense"
            )
        cx = rng.uniform(0.0, spec.forest_length)
        cy = rng.uniform(-half + 0.5 * s, half - 0.5 * s)
        candidate = box(cx - s / 2, cy - s / 2, cx + s / 2, cy + s / 2)
        if candidate.distance(start) < spec.start_clearance or candidate.distance(goal) < spec.goal_clearance:
            continue
        if shapes and min(candidate.distance(other) for other in shapes) < spec.min_gap:
            continue
        placed.append(Obstacle(float(cx), float(cy), s, s))
        shapes.append(candidate)
    return ObstacleMap((forest_corridor(spec),), tuple(placed)), forest_path(spec)


def _track_frame(track: TrackModel, s: float) -> Tuple[np.ndarray, np.ndarray, float, float]:
    """Interpolated centre, unit normal and widths at arclength ``s`` along the centreline."""
    pts = track.centerline
    poly = np.vstack([pts, pts[:1]]) if track.closed else pts
    seg = np.hypot(*np.diff(poly, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    i = int(np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1))
    u = (s - cum[i]) / seg[i]
    j = (i + 1) % len(pts)
    centre = (1 - u) * pts[i] + u * pts[j]
    normal = (1 - u) * track.normals[i] + u * track.normals[j]
    normal = normal / np.linalg.norm(normal)
    wl = (1 - u) * track.w_left[i] + u * track.w_left[j]
    wr = (1 - u) * track.w_right[i] + u * track.w_right[j]
    return centre, normal, float(wl), float(wr)


def centerline_length(track: TrackModel) -> float:
    pts = np.vstack([track.centerline, track.centerline[:1]]) if track.closed else track.centerline
    return float(np.sum(np.hypot(*np.diff(pts, axis=0).T)))


def free_side(track: TrackModel, obstacle: Obstacle, s: float) -> float:
    """Width left free on the wider side of an obstacle, measured along the normal at ``s``."""
    centre, normal, wl, wr = _track_frame(track, s)
    offset = float((np.array([obstacle.cx, obstacle.cy]) - centre) @ normal)
    extent = 0.5 * obstacle.width * (abs(normal[0]) + abs(normal[1]))
    return max(wl - (offset + extent), (offset - extent) + wr)


def place_track_obstacles(track: TrackModel, count: int, seed: int, cfg: Optional[TrackEnvConfig] = None,
                          params: Optional[SimParams] = None, max_retries: int = 1000) -> ObstacleMap:
    """
    Seeded obstacles along a track.

    Each obstacle sits at a random arclength (beyond the start clearance and
    at least ``track_obstacle_gap`` from every other) and a random lateral
    offset that leaves at least vehicle width plus ``free_margin`` free on one
    side.

    Returns:
        map holding the track borders and the obstacles
    """
    cfg = cfg or TrackEnvConfig()
    params = params or SimParams()
    rng = np.random.default_rng(seed)
    region = track_region(track)
    total = centerline_length(track)
    size = cfg.track_obstacle_size
    needed = params.vehicle_width + cfg.free_margin
    # keep the stretch just behind the start clear on closed tracks too
    end = total - (0.5 if track.closed else 1.0) * cfg.track_start_clearance

    placed: List[Obstacle] = []
    stations: List[float] = []
    attempts = 0
    while len(placed) < count:
        attempts += 1
        if attempts > max_retries:
            raise PlacementError(f"placed {len(placed)} of {count} track obstacles in {max_retries} draws")
        s = rng.uniform(cfg.track_start_clearance, end)
        if stations:
            gaps = np.abs(np.array(stations) - s)
            if track.closed:
                gaps = np.minimum(gaps, total - gaps)
            if gaps.min() < cfg.track_obstacle_gap:
                continue
        centre, normal, wl, wr = _track_frame(track, s)
        extent = 0.5 * size * (abs(normal[0]) + abs(normal[1]))
        if wl + wr - 2 * extent < needed:
            continue
        offset = rng.uniform(-wr + extent, wl - extent)
        pos = centre + offset * normal
        obs = Obstacle(float(pos[0]), float(pos[1]), size, size)
        if free_side(track, obs, s) < needed:
            continue
        if not region.region.contains(box(*obs.corners().min(axis=0), *obs.corners().max(axis=0))):
            continue
        placed.append(obs)
        stations.append(float(s))
    return region.with_obstacles(placed)


def corridor_is_feasible(obstacle_map: ObstacleMap, start: Tuple[float, float], goal: Tuple[float, float],
                         clearance: float, resolution: float = 0.1) -> bool:
    """
    Grid search for a collision-free route for a disc of radius ``clearance``.

    Free cells are grid centres at least ``clearance`` from every obstacle and
    border; an A* search over 8-connected free cells decides reachability.
    """
    xmin, ymin, xmax, ymax = obstacle_map.bounds
    xs = np.arange(xmin, xmax + resolution / 2, resolution)
    ys = np.arange(ymin, ymax + resolution / 2, resolution)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    free = np.ones(gx.shape, dtype=bool)
    if obstacle_map.region is not None:
        free &= shapely.contains_xy(obstacle_map.region.buffer(-clearance), gx, gy)
    if obstacle_map.obstacles:
        grown = unary_union(list(obstacle_map.obstacle_boxes)).buffer(clearance)
        free &= ~shapely.intersects_xy(grown, gx, gy)

    def cell(p):
        return (int(round((p[0] - xmin) / resolution)), int(round((p[1] - ymin) / resolution)))

    source, target = cell(start), cell(goal)
    if not (free[source] and free[target]):
        return False

    graph = nx.Graph()
    idx = np.argwhere(free)
    free_set = set(map(tuple, idx))
    for i, j in free_set:
        for di, dj in ((1, 0), (0, 1), (1, 1), (1, -1)):
            nb = (i + di, j + dj)
            if nb in free_set:
                graph.add_edge((i, j), nb, weight=math.hypot(di, dj))
    if source not in graph or target not in graph:
        return source == target

    def heuristic(a, b):
        return math.hypot(a[0] - b[0], a[1] - b[1])

    try:
        nx.astar_path_length(graph, source, target, heuristic=heuristic, weight="weight")
    except nx.NetworkXNoPath:
        return False
    return True


class OutcomeStatus(str, Enum):
    GOAL = "goal"
    CRASH = "crash"
    TIMEOUT = "timeout"


class StepRecord(NamedTuple):
    """Everything a learner needs from one simulation step."""
    step: int
    observation: Observation
    command: Command
    reward: float
    crashed: bool
    next_observation: Observation
    done: bool


@dataclass
class EpisodeOutcome:
    status: OutcomeStatus
    elapsed: float
    steps: int
    trajectory: List[VehicleState] = field(default_factory=list)
    commands: List[Command] = field(default_factory=list)
    rewards: List[float] = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.status is OutcomeStatus.GOAL

    @property
    def total_reward(self) -> float:
        return float(sum(self.rewards))

    @property
    def mean_abs_delta_nn(self) -> float:
        if not self.commands:
            return 0.0
        return float(np.mean([abs(c.delta_nn) for c in self.commands]))


class ProgressTracker:
    """Arclength progress along the reference; wraps around closed paths."""

    def __init__(self, path: PlanPath, state: VehicleState):
        self.path = path
        self.last = path.project(state.position).arclength
        self.progress = 0.0 if path.closed else self.last

    def update(self, state: VehicleState) -> bool:
        s = self.path.project(state.position).arclength
        if self.path.closed:
            L = self.path.length
            delta = (s - self.last + 0.5 * L) % L - 0.5 * L
            self.progress += delta
        else:
            self.progress = s
        self.last = s
        return self.reached

    @property
    def reached(self) -> bool:
        return self.progress >= self.path.length - (0.0 if self.path.closed else GOAL_TOLERANCE)


def start_state(path: PlanPath) -> VehicleState:
    """At rest on the first waypoint, facing along the path."""
    x, y = path.waypoints[0]
    return VehicleState(float(x), float(y), path.tangent(0))


def run_episode(planner: Planner, obstacle_map: ObstacleMap, path: PlanPath, params: SimParams, max_steps: int,
                initial: Optional[VehicleState] = None, reward_cfg: Optional[RewardConfig] = None,
                step_callback: Optional[Callable[[StepRecord], None]] = None) -> EpisodeOutcome:
    """
    Drive a planner through one episode.

    Each step scans, plans, integrates and checks for a crash and for goal
    progress along ``path`` (the end of an open path or one full lap of a
    closed one). A crash is the only terminal transition.

    Args:
        planner: observe/act planner
        obstacle_map: world the vehicle drives in
        path: reference the goal is measured against
        params: simulation parameters
        max_steps: step budget; running out is a TIMEOUT outcome
        initial: start state (defaults to the path start)
        reward_cfg: reward weights used for the per-step reward
        step_callback: receives a StepRecord after every step

    Returns:
        EpisodeOutcome
    """
    if max_steps <= 0:
        raise ValidationError("max_steps must be positive")
    reward_cfg = reward_cfg or RewardConfig()
    state = initial or start_state(path)
    tracker = ProgressTracker(path, state)
    obs = planner.observe(state, cast_scan(state, obstacle_map, params))
    outcome = EpisodeOutcome(OutcomeStatus.TIMEOUT, 0.0, 0, [state])

    for i in range(1, max_steps + 1):
        command = planner.act(obs)
        nxt = step(state, command.v_ref, command.delta_ref, params)
        crashed = check_collision(nxt, obstacle_map, params)
        reached = tracker.update(nxt)
        r = reward(crashed, command.delta_nn, reward_cfg, params.max_steer)
        next_obs = planner.observe(nxt, cast_scan(nxt, obstacle_map, params))
        if step_callback:
            step_callback(StepRecord(i, obs, command, r, crashed, next_obs, crashed))

        outcome.trajectory.append(nxt)
        outcome.commands.append(command)
        outcome.rewards.append(r)
        outcome.steps = i
        outcome.elapsed = i * params.dt
        if crashed:
            outcome.status = OutcomeStatus.CRASH
            break
        if reached:
            outcome.status = OutcomeStatus.GOAL
            break
        state, obs = nxt, next_obs
    return outcome


@dataclass
class EpisodeTrace:
    """Contents of an episode CSV."""
    rows: Dict[str, np.ndarray]
    map_file: Optional[str] = None
    plan_file: Optional[str] = None
    meta: Dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rows["step"])


def save_episode_csv(outcome: EpisodeOutcome, path: Union[str, Path], params: SimParams,
                     map_file: Optional[str] = None, plan_file: Optional[str] = None,
                     meta: Optional[Dict[str, object]] = None) -> Path:
    """One row per simulation step between a ``#`` preamble and a ``# outcome=`` summary line."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as f:
        if map_file:
            f.write(f"# map={map_file}\n")
        if plan_file:
            f.write(f"# plan={plan_file}\n")
        for key, value in (meta or {}).items():
            f.write(f"# {key}={value}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(EPISODE_COLUMNS)
        for i, (state, cmd, r) in enumerate(zip(outcome.trajectory[1:], outcome.commands, outcome.rewards), start=1):
            writer.writerow([i, f"{i * params.dt:.6f}"] + [f"{v:.9g}" for v in (
                state.x, state.y, state.theta, state.v, state.delta,
                cmd.v_ref, cmd.delta_ref, cmd.action, cmd.delta_nn, r)])
        f.write(f"# outcome={outcome.status.value} elapsed={outcome.elapsed:.6f} steps={outcome.steps}\n")
    return path


def load_episode_csv(path: Union[str, Path]) -> EpisodeTrace:
    """Parse an episode CSV; malformed rows raise ValidationError with their line number."""
    meta: Dict[str, str] = {}
    header = None
    values: List[List[float]] = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                for item in line[1:].split():
                    if "=" not in item:
                        continue
                    key, value = item.split("=", 1)
                    meta[key] = value
                continue
            fields = next(csv.reader([line]))
            if header is None:
                if fields != EPISODE_COLUMNS:
                    raise ValidationError(f"expected header {','.join(EPISODE_COLUMNS)}", line=lineno)
                header = fields
                continue
            if len(fields) != len(EPISODE_COLUMNS):
                raise ValidationError(f"expected {len(EPISODE_COLUMNS)} columns, found {len(fields)}", line=lineno)
            try:
                values.append([float(v) for v in fields])
            except ValueError as e:
                raise ValidationError(f"non-numeric value in {fields}", line=lineno) from e
    if header is None:
        raise ValidationError(f"{path} has no episode header")
    data = np.array(values).reshape(-1, len(EPISODE_COLUMNS))
    rows = {name: data[:, i] for i, name in enumerate(EPISODE_COLUMNS)}
    return EpisodeTrace(rows, meta.pop("map", None), meta.pop("plan", None), meta)
