"""
Kinematic bicycle simulation, range-finder ray casting and collision checks.

All functions are pure: they take value inputs and return new values.
"""

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import shapely
from shapely.geometry import Polygon, box

from refmod.config import SimParams
from refmod.errors import ValidationError
from refmod.utils.geometry import box_corners, oriented_rectangle, ray_segment_distances, ring_edges, wrap_angle


@dataclass(frozen=True)
class VehicleState:
    """Pose, speed and steering angle of the simulated car."""
    x: float
    y: float
    theta: float
    v: float = 0.0
    delta: float = 0.0

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def as_tuple(self) -> Tuple[float, float, float, float, float]:
        return self.x, self.y, self.theta, self.v, self.delta


@dataclass(frozen=True)
class Scan:
    """One sweep of the range finders; angles are offsets from the heading."""
    ranges: np.ndarray
    angles: np.ndarray

    def __len__(self) -> int:
        return len(self.ranges)


@dataclass(frozen=True)
class Obstacle:
    """Axis-aligned rectangular obstacle."""
    cx: float
    cy: float
    width: float
    height: float

    def corners(self) -> np.ndarray:
        return box_corners(self.cx, self.cy, self.width, self.height)

    def inflated(self, margin: float) -> "Obstacle":
        return Obstacle(self.cx, self.cy, self.width + 2 * margin, self.height + 2 * margin)


@dataclass(frozen=True, eq=False)
class ObstacleMap:
    """
    Drivable region plus static obstacles.

    The first boundary ring is the outer shell of the drivable region; every
    further ring is a hole in it (for instance the inner edge of a race track).
    """
    boundaries: Tuple[np.ndarray, ...] = ()
    obstacles: Tuple[Obstacle, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "boundaries", tuple(np.asarray(b, dtype=float) for b in self.boundaries))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        for ring in self.boundaries:
            if ring.ndim != 2 or ring.shape[1] != 2 or len(ring) < 3:
                raise ValidationError("boundary rings need at least three (x, y) vertices")
        if self.boundaries:
            (xmin, ymin, xmax, ymax) = self.bounds
            for obs in self.obstacles:
                if not (xmin <= obs.cx <= xmax and ymin <= obs.cy <= ymax):
                    raise ValidationError(f"obstacle at ({obs.cx}, {obs.cy}) lies outside the drivable region")

    @cached_property
    def region(self) -> Optional[Polygon]:
        if not self.boundaries:
            return None
        return Polygon(self.boundaries[0], holes=[ring for ring in self.boundaries[1:]])

    @cached_property
    def bounds(self) -> Tuple[float, float, float, float]:
        if self.boundaries:
            pts = np.vstack(self.boundaries)
        elif self.obstacles:
            pts = np.vstack([obs.corners() for obs in self.obstacles])
        else:
            return (0.0, 0.0, 0.0, 0.0)
        return (float(pts[:, 0].min()), float(pts[:, 1].min()), float(pts[:, 0].max()), float(pts[:, 1].max()))

    @cached_property
    def obstacle_boxes(self) -> np.ndarray:
        return np.array([
            box(o.cx - o.width / 2, o.cy - o.height / 2, o.cx + o.width / 2, o.cy + o.height / 2)
            for o in self.obstacles
        ], dtype=object)

    @cached_property
    def wall_segments(self) -> Tuple[np.ndarray, np.ndarray]:
        """Every boundary and obstacle edge as (starts, ends) arrays."""
        starts: List[np.ndarray] = []
        ends: List[np.ndarray] = []
        rings = list(self.boundaries) + [obs.corners() for obs in self.obstacles]
        for ring in rings:
            s, e = ring_edges(ring)
            starts.append(s)
            ends.append(e)
        if not starts:
            return np.zeros((0, 2)), np.zeros((0, 2))
        return np.vstack(starts), np.vstack(ends)

    def with_obstacles(self, obstacles: Sequence[Obstacle]) -> "ObstacleMap":
        return ObstacleMap(self.boundaries, tuple(obstacles))


def beam_angles(params: SimParams) -> np.ndarray:
    """Beam offsets from the heading, evenly spread and symmetric about zero."""
    if params.n_beams == 1:
        return np.zeros(1)
    half = 0.5 * params.beam_fov
    return np.linspace(-half, half, params.n_beams)


def _check_finite(*values: float) -> None:
    if not all(math.isfinite(v) for v in values):
        raise ValidationError(f"non-finite simulator input: {values}")


def step(state: VehicleState, v_ref: float, delta_ref: float, params: SimParams) -> VehicleState:
    """
    Advance the car by one integration step.

    The proportional low-level controller moves the steering toward delta_ref
    (rate limited) and the speed toward v_ref (acceleration limited); the
    kinematic bicycle model is then integrated with explicit Euler.

    Args:
        state: current vehicle state
        v_ref: speed reference (m/s)
        delta_ref: steering reference (rad)
        params: simulation parameters

    Returns:
        The state one ``params.dt`` later
    """
    _check_finite(*state.as_tuple(), v_ref, delta_ref)
    dt = params.dt
    delta_ref = min(max(delta_ref, -params.max_steer), params.max_steer)
    v_ref = min(max(v_ref, 0.0), params.max_speed)

    steer_rate = params.steer_gain * (delta_ref - state.delta)
    steer_rate = min(max(steer_rate, -params.max_steer_rate), params.max_steer_rate)
    delta = state.delta + steer_rate * dt
    delta = min(max(delta, -params.max_steer), params.max_steer)

    accel = params.speed_gain * (v_ref - state.v)
    accel = min(max(accel, -params.max_accel), params.max_accel)
    v = state.v + accel * dt
    v = min(max(v, 0.0), params.max_speed)

    x = state.x + v * math.cos(state.theta) * dt
    y = state.y + v * math.sin(state.theta) * dt
    theta = wrap_angle(state.theta + v * math.tan(delta) / params.wheelbase * dt)
    return VehicleState(x, y, theta, v, delta)


def cast_scan(state: VehicleState, obstacle_map: ObstacleMap, params: SimParams) -> Scan:
    """
    Simulate the range finders from the vehicle's pose.

    Each range is the distance to the first boundary or obstacle edge hit by
    the beam, clipped to ``params.max_range``.
    """
    angles = beam_angles(params)
    headings = state.theta + angles
    directions = np.column_stack([np.cos(headings), np.sin(headings)])
    starts, ends = obstacle_map.wall_segments
    if len(starts) == 0:
        return Scan(np.full(params.n_beams, params.max_range), angles)
    hits = ray_segment_distances(state.position, directions, starts, ends)
    ranges = np.minimum(hits.min(axis=1), params.max_range)
    return Scan(ranges, angles)


def footprint(state: VehicleState, params: Optional[SimParams] = None) -> Polygon:
    """Vehicle outline (L x vehicle_width) centred on the state's position."""
    params = params or SimParams()
    corners = oriented_rectangle(state.x, state.y, state.theta, params.length, params.vehicle_width)
    return Polygon(corners)


def check_collision(state: VehicleState, obstacle_map: ObstacleMap, params: Optional[SimParams] = None) -> bool:
    """
    True iff the vehicle footprint touches an obstacle or leaves the drivable region.
    """
    body = footprint(state, params)
    if obstacle_map.obstacles and bool(shapely.intersects(body, obstacle_map.obstacle_boxes).any()):
        return True
    region = obstacle_map.region
    if region is not None and not region.contains(body):
        return True
    return False


def load_obstacle_map(path: Union[str, Path]) -> ObstacleMap:
    """
    Read an obstacle map file.

    Format (one item per line, ``#`` starts a comment)::

        boundary x1,y1 x2,y2 x3,y3 ...
        obstacle cx cy w h
    """
    boundaries: List[np.ndarray] = []
    obstacles: List[Obstacle] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            keyword, *fields = line.split()
            try:
                if keyword == "boundary":
                    ring = np.array([[float(c) for c in pt.split(",")] for pt in fields])
                    if ring.ndim != 2 or ring.shape[1] != 2 or len(ring) < 3:
                        raise ValueError("boundary needs at least three x,y vertices")
                    boundaries.append(ring)
                elif keyword == "obstacle":
                    if len(fields) != 4:
                        raise ValueError("obstacle needs cx cy w h")
                    cx, cy, w, h = (float(v) for v in fields)
                    if w <= 0 or h <= 0:
                        raise ValueError("obstacle sizes must be positive")
                    obstacles.append(Obstacle(cx, cy, w, h))
                else:
                    raise ValueError(f"unknown keyword '{keyword}'")
            except ValueError as e:
                raise ValidationError(str(e), line=lineno) from e
    return ObstacleMap(tuple(boundaries), tuple(obstacles))


def save_obstacle_map(obstacle_map: ObstacleMap, path: Union[str, Path]) -> Path:
    path = Path(path)
    lines = ["# refmod obstacle map"]
    for ring in obstacle_map.boundaries:
        lines.append("boundary " + " ".join(f"{x:.6f},{y:.6f}" for x, y in ring))
    for obs in obstacle_map.obstacles:
        lines.append(f"obstacle {obs.cx:.6f} {obs.cy:.6f} {obs.width:.6f} {obs.height:.6f}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
