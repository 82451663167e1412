"""
Pure pursuit path following with friction-limited velocity references.
"""

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import NamedTuple, Union

import numpy as np

from refmod.config import PPConfig, SimParams
from refmod.errors import ValidationError
from refmod.sim_core import VehicleState
from refmod.utils.geometry import wrap_angle


class Projection(NamedTuple):
    """Nearest point of a path to a query point."""
    segment: int
    param: float
    point: np.ndarray
    arclength: float
    distance: float


class PursuitReference(NamedTuple):
    v_ref: float
    delta_ref: float


@dataclass(frozen=True, eq=False)
class PlanPath:
    """Polyline reference path; ``closed`` paths loop from the last waypoint to the first."""
    waypoints: np.ndarray
    closed: bool = False

    def __post_init__(self):
        pts = np.asarray(self.waypoints, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValidationError("a plan path needs at least two (x, y) waypoints")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("plan path waypoints must be finite")
        object.__setattr__(self, "waypoints", pts)
        if np.any(self.segment_lengths <= 0.0):
            raise ValidationError("consecutive plan path waypoints must be distinct")

    @cached_property
    def segment_vectors(self) -> np.ndarray:
        if self.closed:
            return np.roll(self.waypoints, -1, axis=0) - self.waypoints
        return np.diff(self.waypoints, axis=0)

    @cached_property
    def segment_lengths(self) -> np.ndarray:
        return np.hypot(self.segment_vectors[:, 0], self.segment_vectors[:, 1])

    @cached_property
    def arclength(self) -> np.ndarray:
        """Cumulative arclength at each waypoint (starts at 0)."""
        return np.concatenate([[0.0], np.cumsum(self.segment_lengths)])[: len(self.waypoints)]

    @property
    def length(self) -> float:
        return float(self.segment_lengths.sum())

    @property
    def n_segments(self) -> int:
        return len(self.segment_lengths)

    def tangent(self, index: int) -> float:
        """Heading of the segment leaving waypoint ``index``."""
        index = min(index, self.n_segments - 1)
        dx, dy = self.segment_vectors[index]
        return math.atan2(dy, dx)

    def heading_at(self, index: int) -> float:
        """Path heading at waypoint ``index`` from the neighbouring waypoints."""
        n = len(self.waypoints)
        if self.closed:
            ahead, behind = self.waypoints[(index + 1) % n], self.waypoints[index - 1]
        else:
            ahead = self.waypoints[min(index + 1, n - 1)]
            behind = self.waypoints[max(index - 1, 0)]
        dx, dy = ahead - behind
        return math.atan2(dy, dx)

    def project(self, point: np.ndarray) -> Projection:
        """Nearest point on the polyline to ``point``."""
        starts = self.waypoints[: self.n_segments]
        vecs = self.segment_vectors
        rel = np.asarray(point, dtype=float) - starts
        t = np.clip(np.einsum("ij,ij->i", rel, vecs) / self.segment_lengths ** 2, 0.0, 1.0)
        nearest = starts + t[:, None] * vecs
        d2 = np.sum((nearest - point) ** 2, axis=1)
        i = int(np.argmin(d2))
        s = float(self.arclength[i] + t[i] * self.segment_lengths[i])
        return Projection(i, float(t[i]), nearest[i], s, float(math.sqrt(d2[i])))

    def point_at(self, s: float) -> np.ndarray:
        """Point at arclength ``s`` (wrapped on closed paths, clamped on open ones)."""
        if self.closed:
            s = s % self.length
        else:
            s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.arclength, s, side="right") - 1)
        i = min(max(i, 0), self.n_segments - 1)
        u = (s - self.arclength[i]) / self.segment_lengths[i]
        return self.waypoints[i] + u * self.segment_vectors[i]


def _lookahead_from(path: PlanPath, position: np.ndarray, proj: Projection, l_d: float) -> np.ndarray:
    """Circle/polyline crossing at distance l_d, walking forward from a projection."""
    if proj.distance >= l_d:
        return path.point_at(proj.arclength + l_d)

    n = len(path.waypoints)
    if path.closed:
        order = (proj.segment + 1 + np.arange(n)) % n
    else:
        order = np.arange(proj.segment + 1, n)
    if len(order) == 0:
        return path.waypoints[-1].copy()

    dists = np.hypot(*(path.waypoints[order] - position).T)
    outside = np.nonzero(dists >= l_d)[0]
    if len(outside) == 0:
        if path.closed:
            return path.point_at(proj.arclength + l_d)
        return path.waypoints[-1].copy()

    k = int(outside[0])
    a = proj.point if k == 0 else path.waypoints[order[k - 1]]
    b = path.waypoints[order[k]]
    d = b - a
    f = a - position
    qa = float(d @ d)
    qb = 2.0 * float(f @ d)
    qc = float(f @ f) - l_d * l_d
    disc = max(qb * qb - 4.0 * qa * qc, 0.0)
    u = (-qb + math.sqrt(disc)) / (2.0 * qa)
    return a + min(max(u, 0.0), 1.0) * d


def find_lookahead(path: PlanPath, state: VehicleState, l_d: float) -> np.ndarray:
    """
    Point of the path, at or beyond the vehicle's projection, at straight-line
    distance l_d from the vehicle.

    Open paths that end closer than l_d yield their final waypoint.
    """
    if l_d <= 0:
        raise ValidationError("lookahead distance must be positive")
    position = state.position
    return _lookahead_from(path, position, path.project(position), l_d)


def pp_steering(state: VehicleState, target: np.ndarray, L: float, l_d: float,
                delta_max: float = math.inf) -> float:
    """Pure pursuit steering angle toward ``target``, clipped to +-delta_max."""
    dx = float(target[0]) - state.x
    dy = float(target[1]) - state.y
    if dx == 0.0 and dy == 0.0:
        raise ValidationError("pure pursuit target coincides with the vehicle position")
    alpha = wrap_angle(math.atan2(dy, dx) - state.theta)
    delta = math.atan(2.0 * L * math.sin(alpha) / l_d)
    return min(max(delta, -delta_max), delta_max)


def friction_velocity(delta_max_horizon: float, params: SimParams) -> float:
    """
    Highest speed whose lateral acceleration at the given steering stays within
    the tyre friction limit: V = sqrt(b g l / tan(delta)), clipped to max_speed.
    """
    tan_d = math.tan(abs(delta_max_horizon))
    if tan_d <= 0.0:
        return params.max_speed
    v = math.sqrt(params.friction * params.gravity * params.wheelbase / tan_d)
    return min(max(v, 0.0), params.max_speed)


def horizon_steering(path: PlanPath, cfg: PPConfig, params: SimParams, proj: Projection) -> float:
    """Largest steering magnitude demanded over the upcoming horizon, vehicle assumed on-path."""
    ahead = path.arclength - proj.arclength
    if path.closed:
        ahead = np.mod(ahead, path.length)
    idx = np.nonzero((ahead > 0.0) & (ahead <= cfg.horizon))[0]
    idx = idx[np.argsort(ahead[idx], kind="stable")]
    worst = 0.0
    for j in idx:
        if not path.closed and j >= path.n_segments:
            continue
        wp = path.waypoints[j]
        pose = VehicleState(float(wp[0]), float(wp[1]), path.heading_at(int(j)))
        on_path = Projection(int(j), 0.0, wp, float(path.arclength[j]), 0.0)
        target = _lookahead_from(path, wp, on_path, cfg.lookahead)
        if np.array_equal(target, wp):
            continue
        worst = max(worst, abs(pp_steering(pose, target, params.wheelbase, cfg.lookahead, params.max_steer)))
    return worst


def plan(state: VehicleState, path: PlanPath, cfg: PPConfig, params: SimParams) -> PursuitReference:
    """
    Velocity and steering references from pure pursuit.

    The steering follows the lookahead point; the velocity is the friction
    limited speed for the largest steering demanded over the receding horizon.
    """
    proj = path.project(state.position)
    target = _lookahead_from(path, state.position, proj, cfg.lookahead)
    if np.array_equal(target, state.position):
        delta_ref = 0.0
    else:
        delta_ref = pp_steering(state, target, params.wheelbase, cfg.lookahead, params.max_steer)
    worst = max(abs(delta_ref), horizon_steering(path, cfg, params, proj))
    return PursuitReference(friction_velocity(worst, params), delta_ref)


def load_plan_path(path: Union[str, Path], closed: bool = False) -> PlanPath:
    """Read a plan CSV with header ``x,y``."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["x", "y"]:
            raise ValidationError("plan file must start with the header 'x,y'", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError) as e:
                raise ValidationError(f"malformed waypoint {row}", line=lineno) from e
    return PlanPath(np.array(rows), closed=closed)


def save_plan_path(plan_path: PlanPath, path: Union[str, Path]) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x", "y"])
        for x, y in plan_path.waypoints:
            writer.writerow([repr(float(x)), repr(float(y))])
    return path
