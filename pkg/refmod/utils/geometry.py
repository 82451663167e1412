"""
Small planar geometry helpers shared by the simulator and planners.
"""

import math
from typing import Tuple

import numpy as np


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.atan2(math.sin(angle), math.cos(angle))
    if wrapped == -math.pi:
        return math.pi
    return wrapped


def oriented_rectangle(cx: float, cy: float, theta: float, length: float, width: float) -> np.ndarray:
    """
    Corners of a rectangle centred on (cx, cy) with its long side along theta.

    Returns:
        (4, 2) array of corners in counter-clockwise order
    """
    c, s = math.cos(theta), math.sin(theta)
    hl, hw = 0.5 * length, 0.5 * width
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([cx, cy])


def box_corners(cx: float, cy: float, width: float, height: float) -> np.ndarray:
    """Corners of an axis-aligned box, counter-clockwise from bottom-left."""
    hw, hh = 0.5 * width, 0.5 * height
    return np.array([
        [cx - hw, cy - hh],
        [cx + hw, cy - hh],
        [cx + hw, cy + hh],
        [cx - hw, cy + hh],
    ])


def ring_edges(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Start and end points of the edges of a closed ring."""
    starts = np.asarray(points, dtype=float)
    ends = np.roll(starts, -1, axis=0)
    return starts, ends


def ray_segment_distances(origin: np.ndarray, directions: np.ndarray,
                          starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """
    Distance along each ray to each segment.

    Args:
        origin: (2,) common ray origin
        directions: (R, 2) unit ray directions
        starts: (S, 2) segment start points
        ends: (S, 2) segment end points

    Returns:
        (R, S) array of hit distances, ``inf`` where a ray misses a segment
    """
    seg = ends - starts                           # (S, 2)
    rel = starts - origin                         # (S, 2)
    dx = directions[:, 0][:, None]
    dy = directions[:, 1][:, None]
    denom = dx * seg[:, 1][None, :] - dy * seg[:, 0][None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (rel[:, 0][None, :] * seg[:, 1][None, :] - rel[:, 1][None, :] * seg[:, 0][None, :]) / denom
        u = (rel[:, 0][None, :] * dy - rel[:, 1][None, :] * dx) / denom
    hit = (np.abs(denom) > 1e-12) & (t >= 0.0) & (u >= 0.0) & (u <= 1.0)
    return np.where(hit, t, np.inf)


def segment_interval_in_box(point: np.ndarray, direction: np.ndarray, lo: float, hi: float,
                            box_min: np.ndarray, box_max: np.ndarray):
    """
    Parameter interval of ``point + t * direction`` (t in [lo, hi]) inside an
    axis-aligned box, or None if the segment misses it.
    """
    t0, t1 = lo, hi
    for axis in range(2):
        d = direction[axis]
        p = point[axis]
        if abs(d) < 1e-12:
            if p < box_min[axis] or p > box_max[axis]:
                return None
            continue
        ta = (box_min[axis] - p) / d
        tb = (box_max[axis] - p) / d
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
        if t0 > t1:
            return None
    return t0, t1
