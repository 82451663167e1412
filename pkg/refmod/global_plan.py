"""
Minimum-curvature global planning over a discretised track.

A track is K centreline points with unit normals and a width on each side.
A path is a vector of signed offsets n along the normals; its cost is the
arclength-weighted sum of squared discrete curvatures, linearised around
the centreline so that the problem is a convex box-constrained quadratic program.
"""

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, List, NamedTuple, Optional, Tuple, Union

import networkx as nx
import numpy as np
from shapely.geometry import LinearRing, Polygon

from refmod.config import PPConfig, SimParams
from refmod.errors import InfeasibleError, ValidationError
from refmod.mod_planner import PurePursuitPlanner
from refmod.pure_pursuit import PlanPath
from refmod.sim_core import ObstacleMap
from refmod.utils.geometry import segment_interval_in_box

BUNDLED_TRACK = Path(__file__).parent / "data" / "race_track.csv"

# keeps optimizer output strictly inside the open box
STRICT_MARGIN = 2e-9


@dataclass(frozen=True, eq=False)
class TrackModel:
    """Centreline points, left unit normals and the widths on each side."""
    centerline: np.ndarray
    normals: np.ndarray
    w_left: np.ndarray          # along +normal
    w_right: np.ndarray         # along -normal
    closed: bool = True

    def __len__(self) -> int:
        return len(self.centerline)

    def points(self, n: np.ndarray) -> np.ndarray:
        """Path points c_k + n_k * N_k."""
        return self.centerline + np.asarray(n, dtype=float)[:, None] * self.normals

    @cached_property
    def left_boundary(self) -> np.ndarray:
        return self.points(self.w_left)

    @cached_property
    def right_boundary(self) -> np.ndarray:
        return self.points(-self.w_right)

    def mirrored(self) -> "TrackModel":
        """Reflection across the x axis; left and right swap."""
        flip = np.array([1.0, -1.0])
        return build_track(self.centerline * flip, self.w_right, self.w_left, self.closed)


def _tangents(points: np.ndarray, closed: bool) -> np.ndarray:
    if closed:
        return np.roll(points, -1, axis=0) - np.roll(points, 1, axis=0)
    return np.gradient(points, axis=0)


def build_track(centerline: np.ndarray, w_left: np.ndarray, w_right: np.ndarray, closed: bool = True) -> TrackModel:
    """
    Build a track model from centreline points and widths.

    Normals come from central-difference tangents (periodic on closed tracks)
    rotated to the left. Raises ValidationError for fewer than four points,
    coincident neighbours, non-positive widths or self-intersecting borders.
    """
    c = np.asarray(centerline, dtype=float)
    wl = np.asarray(w_left, dtype=float).reshape(-1)
    wr = np.asarray(w_right, dtype=float).reshape(-1)
    if c.ndim != 2 or c.shape[1] != 2 or len(c) < 4:
        raise ValidationError("a track needs at least four (x, y) centreline points")
    if wl.shape != (len(c),) or wr.shape != (len(c),):
        raise ValidationError("track widths must have one entry per centreline point")
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(wl)) and np.all(np.isfinite(wr))):
        raise ValidationError("track values must be finite")
    if np.any(wl <= 0) or np.any(wr <= 0):
        raise ValidationError("track widths must be positive")
    steps = np.diff(np.vstack([c, c[:1]]) if closed else c, axis=0)
    if np.any(np.hypot(steps[:, 0], steps[:, 1]) <= 1e-12):
        raise ValidationError("consecutive centreline points coincide")

    t = _tangents(c, closed)
    norm = np.hypot(t[:, 0], t[:, 1])
    if np.any(norm <= 1e-12):
        raise ValidationError("centreline tangent is undefined (the track folds back on itself)")
    t = t / norm[:, None]
    normals = np.column_stack([-t[:, 1], t[:, 0]])
    track = TrackModel(c, normals, wl, wr, closed)
    _check_borders(track)
    return track


def _check_borders(track: TrackModel) -> None:
    # a border at least as wide as the local turning radius folds over
    kappa = discrete_curvature(track.centerline, track.closed)
    inner = slice(None) if track.closed else slice(1, -1)
    if np.any(track.w_left[inner] * kappa >= 1.0) or np.any(-track.w_right[inner] * kappa >= 1.0):
        raise ValidationError("track width exceeds the local turning radius")
    left, right = track.left_boundary, track.right_boundary
    if track.closed:
        rings = [LinearRing(left), LinearRing(right)]
        if not all(r.is_simple for r in rings) or rings[0].intersects(rings[1]):
            raise ValidationError("track borders self-intersect at the given widths")
    else:
        outline = Polygon(np.vstack([left, right[::-1]]))
        if not outline.is_valid:
            raise ValidationError("track borders self-intersect at the given widths")


def load_track(path: Union[str, Path], closed: bool = True) -> TrackModel:
    """Read a track CSV with header ``x,y,w_left,w_right``."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:4]] != ["x", "y", "w_left", "w_right"]:
            raise ValidationError("track file must start with the header 'x,y,w_left,w_right'", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                if len(row) < 4:
                    raise ValueError("expected four columns")
                rows.append([float(v) for v in row[:4]])
            except ValueError as e:
                raise ValidationError(f"malformed track row {row}", line=lineno) from e
    data = np.array(rows)
    if len(data) == 0:
        raise ValidationError("track file holds no points")
    return build_track(data[:, :2], data[:, 2], data[:, 3], closed)


def bundled_track() -> TrackModel:
    return load_track(BUNDLED_TRACK, closed=True)


def straight_track(length: float, width: float, spacing: float = 0.5) -> TrackModel:
    """Open straight track along +x from the origin, ``width`` wide in total."""
    k = int(round(length / spacing)) + 1
    xs = np.linspace(0.0, length, max(k, 4))
    half = np.full(len(xs), 0.5 * width)
    return build_track(np.column_stack([xs, np.zeros_like(xs)]), half, half, closed=False)


def track_region(track: TrackModel) -> ObstacleMap:
    """
    Drivable region of a track as an obstacle map.

    Closed tracks give two rings: the larger border is the shell and the other
    a hole. Open tracks give one ring around the corridor.
    """
    if not track.closed:
        return ObstacleMap((np.vstack([track.left_boundary, track.right_boundary[::-1]]),))
    left, right = track.left_boundary, track.right_boundary
    if Polygon(left).area >= Polygon(right).area:
        return ObstacleMap((left, right))
    return ObstacleMap((right, left))


class CurvatureTerms(NamedTuple):
    """kappa(n) ~= kappa0 + jacobian @ n, one row per curvature term."""
    kappa0: np.ndarray
    jacobian: np.ndarray
    weights: np.ndarray         # centreline arclength each term stands for


def discrete_curvature(points: np.ndarray, closed: bool) -> np.ndarray:
    """Signed three-point curvature 2 * cross(a, b) / (|a| |b| |a + b|) at every interior point."""
    p = np.asarray(points, dtype=float)
    if closed:
        prev, cur, nxt = np.roll(p, 1, axis=0), p, np.roll(p, -1, axis=0)
    else:
        prev, cur, nxt = p[:-2], p[1:-1], p[2:]
    a = cur - prev
    b = nxt - cur
    cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    denom = np.hypot(*a.T) * np.hypot(*b.T) * np.hypot(*(a + b).T)
    return 2.0 * cross / denom


def curvature_terms(track: TrackModel) -> CurvatureTerms:
    """Curvature at n = 0 and its exact Jacobian with respect to the offsets."""
    K = len(track)
    c, N = track.centerline, track.normals
    if track.closed:
        centre = np.arange(K)
    else:
        centre = np.arange(1, K - 1)
    i_prev, i_next = (centre - 1) % K, (centre + 1) % K

    a = c[centre] - c[i_prev]
    b = c[i_next] - c[centre]
    s = a + b
    la2, lb2, ls2 = (np.sum(v * v, axis=1) for v in (a, b, s))
    cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    denom = np.sqrt(la2 * lb2 * ls2)
    kappa0 = 2.0 * cross / denom

    dcross_da = np.column_stack([b[:, 1], -b[:, 0]])
    dcross_db = np.column_stack([-a[:, 1], a[:, 0]])
    dlog_da = a / la2[:, None] + s / ls2[:, None]
    dlog_db = b / lb2[:, None] + s / ls2[:, None]
    dk_da = (2.0 / denom)[:, None] * dcross_da - kappa0[:, None] * dlog_da
    dk_db = (2.0 / denom)[:, None] * dcross_db - kappa0[:, None] * dlog_db

    jac = np.zeros((len(centre), K))
    rows = np.arange(len(centre))
    np.add.at(jac, (rows, i_prev), np.sum(-dk_da * N[i_prev], axis=1))
    np.add.at(jac, (rows, centre), np.sum((dk_da - dk_db) * N[centre], axis=1))
    np.add.at(jac, (rows, i_next), np.sum(dk_db * N[i_next], axis=1))
    weights = 0.5 * (np.sqrt(la2) + np.sqrt(lb2))
    return CurvatureTerms(kappa0, jac, weights)


def curvature_cost(track: TrackModel, n: np.ndarray, terms: Optional[CurvatureTerms] = None) -> float:
    """Arclength-weighted sum of squared linearised curvatures, sum w_k kappa_k^2."""
    n = np.asarray(n, dtype=float)
    if n.shape != (len(track),):
        raise ValidationError(f"offset vector has shape {n.shape}, track has {len(track)} points")
    terms = terms or curvature_terms(track)
    r = terms.kappa0 + terms.jacobian @ n
    return float(r @ (terms.weights * r))


def _clip(x, lb, ub):
    return np.minimum(np.maximum(x, lb), ub)


def kkt_residual(x: np.ndarray, grad: np.ndarray, lb: np.ndarray, ub: np.ndarray) -> float:
    """Infinity norm of the projected-gradient step x - P(x - grad)."""
    return float(np.max(np.abs(x - _clip(x - grad, lb, ub)))) if len(x) else 0.0


def box_qp(H: np.ndarray, q: np.ndarray, lb: np.ndarray, ub: np.ndarray, x0: np.ndarray,
           max_iter: int = 100, tol: float = 1e-12, armijo: float = 0.1, reg: float = 1e-9,
           progress_callback: Optional[Callable[[int, float], None]] = None) -> Tuple[np.ndarray, int]:
    """
    Minimise 0.5 x'Hx + q'x over lb <= x <= ub with projected Newton steps.

    Variables at a bound whose gradient pushes outward are clamped; the Newton
    step is taken in the free subspace and backtracked along the projection
    arc until the Armijo condition holds.

    Returns:
        (solution, iterations)
    """
    x = _clip(np.asarray(x0, dtype=float), lb, ub)
    alphas = 0.5 ** np.arange(30)

    def f(z):
        return 0.5 * z @ H @ z + q @ z

    for it in range(1, max_iter + 1):
        g = H @ x + q
        res = kkt_residual(x, g, lb, ub)
        if progress_callback:
            progress_callback(it, res)
        if res <= tol:
            return x, it
        clamped = ((x <= lb) & (g > 0)) | ((x >= ub) & (g < 0))
        free = ~clamped
        if not np.any(free):
            return x, it

        Hff = H[np.ix_(free, free)] + reg * np.eye(int(free.sum()))
        dx = np.zeros_like(x)
        dx[free] = np.linalg.solve(Hff, -g[free])

        f_old = f(x)
        for t in alphas:
            x_new = _clip(x + t * dx, lb, ub)
            if f_old - f(x_new) >= armijo * g @ (x - x_new):
                break
        else:
            # no descent along the Newton arc; fall back to a projected gradient step
            step = 1.0 / max(np.linalg.norm(H, 2), 1e-12)
            x_new = _clip(x - step * g, lb, ub)
        if np.array_equal(x_new, x):
            return x, it
        x = x_new
    return x, max_iter


class OptimizationResult(NamedTuple):
    offsets: np.ndarray
    cost: float
    residual: float
    iterations: int
    lower: np.ndarray
    upper: np.ndarray


def _free_intervals(lo: float, hi: float, blocked: List[Tuple[float, float]]) -> List[Tuple[float, float]]:
    free = []
    cursor = lo
    for b0, b1 in sorted(blocked):
        if b0 > cursor:
            free.append((cursor, b0))
        cursor = max(cursor, b1)
    if cursor < hi:
        free.append((cursor, hi))
    return [(a, b) for a, b in free if b - a > 2 * STRICT_MARGIN]


def admissible_intervals(track: TrackModel, obstacles: Optional[ObstacleMap],
                         margin: float = 0.0) -> List[List[Tuple[float, float]]]:
    """
    Obstacle-free offset intervals along every normal.

    The track width is shrunk by ``margin`` on both sides and every obstacle is
    inflated by ``margin`` before it is cut out of the normal segment.
    """
    lows = -track.w_right + margin
    highs = track.w_left - margin
    boxes = []
    if obstacles is not None:
        for obs in obstacles.obstacles:
            grown = obs.inflated(margin)
            corners = grown.corners()
            boxes.append((corners.min(axis=0), corners.max(axis=0)))

    intervals = []
    for k in range(len(track)):
        lo, hi = float(lows[k]), float(highs[k])
        if hi - lo <= 2 * STRICT_MARGIN:
            raise InfeasibleError(f"track point {k} is narrower than twice the margin {margin}")
        blocked = []
        for bmin, bmax in boxes:
            hit = segment_interval_in_box(track.centerline[k], track.normals[k], lo, hi, bmin, bmax)
            if hit is not None:
                blocked.append(hit)
        free = _free_intervals(lo, hi, blocked)
        if not free:
            raise InfeasibleError(f"obstacles block the full width at track point {k}")
        intervals.append(free)
    return intervals


def _overlap(a: Tuple[float, float], b: Tuple[float, float]) -> bool:
    return max(a[0], b[0]) < min(a[1], b[1])


def select_corridor(intervals: List[List[Tuple[float, float]]], closed: bool) -> List[Tuple[float, float]]:
    """
    Choose one free interval per point so that neighbours overlap.

    The choice is a shortest path over (point, interval) nodes whose weights
    favour wide intervals, which picks the larger side of each obstacle unless
    that side is a dead end.
    """
    K = len(intervals)
    graph = nx.DiGraph()
    order = list(range(K))

    def weight(interval):
        return 1.0 / (interval[1] - interval[0])

    if closed:
        # start where the choice is unique if possible
        start = next((k for k in order if len(intervals[k]) == 1), 0)
        order = order[start:] + order[:start]
    for pos in range(len(order) - 1):
        k, k_next = order[pos], order[pos + 1]
        for i, a in enumerate(intervals[k]):
            for j, b in enumerate(intervals[k_next]):
                if _overlap(a, b):
                    graph.add_edge((pos, i), (pos + 1, j), weight=weight(b))

    last = len(order) - 1
    best = None
    for i, first in enumerate(intervals[order[0]]):
        if not closed and not first[0] < 0.0 < first[1]:
            continue
        source = (0, i)
        sink = ("end", i)
        for j, b in enumerate(intervals[order[last]]):
            if closed and not _overlap(b, first):
                continue
            if not closed and not b[0] < 0.0 < b[1]:
                continue
            graph.add_edge((last, j), sink, weight=0.0)
        if source not in graph or sink not in graph:
            continue
        try:
            length, route = nx.single_source_dijkstra(graph, source, sink, weight="weight")
        except nx.NetworkXNoPath:
            continue
        length += weight(first)
        if best is None or length < best[0]:
            best = (length, route)
    if best is None:
        raise InfeasibleError("no continuous obstacle-free corridor along the track")

    chosen: List[Tuple[float, float]] = [None] * K
    for pos, idx in best[1][:-1]:
        chosen[order[pos]] = intervals[order[pos]][idx]
    return chosen


def optimize_offsets(track: TrackModel, obstacles: Optional[ObstacleMap] = None, margin: float = 0.0,
                     progress_callback: Optional[Callable[[int, float], None]] = None) -> OptimizationResult:
    """
    Minimum-curvature offsets inside the track corridor.

    Args:
        track: the track model
        obstacles: optional static obstacles to avoid
        margin: clearance kept from the borders and from every obstacle (m)
        progress_callback: called with (iteration, residual) by the solver

    Returns:
        OptimizationResult; offsets lie strictly inside the admissible box
    """
    K = len(track)
    corridor = select_corridor(admissible_intervals(track, obstacles, margin), track.closed)
    lb = np.array([a for a, _ in corridor]) + STRICT_MARGIN
    ub = np.array([b for _, b in corridor]) - STRICT_MARGIN

    free = np.ones(K, dtype=bool)
    if not track.closed:
        # open ends stay on the centreline
        free[[0, -1]] = False
        lb[[0, -1]] = 0.0
        ub[[0, -1]] = 0.0

    terms = curvature_terms(track)
    J = terms.jacobian[:, free]
    WJ = terms.weights[:, None] * J
    H = 2.0 * J.T @ WJ
    q = 2.0 * WJ.T @ terms.kappa0
    x0 = _clip(np.zeros(int(free.sum())), lb[free], ub[free])
    x, iterations = box_qp(H, q, lb[free], ub[free], x0, progress_callback=progress_callback)

    offsets = np.zeros(K)
    offsets[free] = x
    residual = kkt_residual(x, H @ x + q, lb[free], ub[free])
    return OptimizationResult(offsets, curvature_cost(track, offsets, terms), residual, iterations, lb, ub)


def to_plan_path(track: TrackModel, n: np.ndarray, samples_per_segment: int = 5) -> PlanPath:
    """Offset path resampled at uniform arclength spacing."""
    if samples_per_segment < 1:
        raise ValidationError("samples_per_segment must be at least 1")
    pts = track.points(n)
    poly = np.vstack([pts, pts[:1]]) if track.closed else pts
    seg = np.hypot(*np.diff(poly, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    count = (len(poly) - 1) * samples_per_segment
    if track.closed:
        samples = np.linspace(0.0, s[-1], count, endpoint=False)
    else:
        samples = np.linspace(0.0, s[-1], count + 1)
    xy = np.column_stack([np.interp(samples, s, poly[:, 0]), np.interp(samples, s, poly[:, 1])])
    return PlanPath(xy, closed=track.closed)


def benchmark_plan(track: TrackModel, obstacles: Optional[ObstacleMap], margin: float,
                   samples_per_segment: int = 5,
                   progress_callback: Optional[Callable[[int, float], None]] = None) -> Tuple[PlanPath, OptimizationResult]:
    """Obstacle-aware minimum-curvature plan and its solver report."""
    result = optimize_offsets(track, obstacles, margin, progress_callback)
    return to_plan_path(track, result.offsets, samples_per_segment), result


class BenchmarkPlanner(PurePursuitPlanner):
    """Pure pursuit along an obstacle-aware minimum-curvature plan."""

    def __init__(self, track: TrackModel, obstacles: Optional[ObstacleMap], margin: float,
                 cfg: Optional[PPConfig] = None, params: Optional[SimParams] = None,
                 samples_per_segment: int = 5):
        path, result = benchmark_plan(track, obstacles, margin, samples_per_segment)
        super().__init__(path, cfg, params)
        self.track = track
        self.result = result
