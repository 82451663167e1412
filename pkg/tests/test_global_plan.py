import math

import numpy as np
import pytest

from refmod.errors import InfeasibleError, ValidationError
from refmod.global_plan import (
    STRICT_MARGIN, BenchmarkPlanner, box_qp, build_track, bundled_track, curvature_cost, curvature_terms,
    discrete_curvature, kkt_residual, load_track, optimize_offsets, straight_track, to_plan_path, track_region,
)
from refmod.sim_core import Obstacle, ObstacleMap


def circle_track(radius: float = 5.0, count: int = 60, width: float = 1.0):
    phi = np.linspace(0.0, 2 * math.pi, count, endpoint=False)
    pts = radius * np.column_stack([np.cos(phi), np.sin(phi)])
    return build_track(pts, np.full(count, width), np.full(count, width), closed=True)


def unit_straight(count: int = 12, width: float = 3.0):
    xs = np.arange(count, dtype=float)
    return build_track(np.column_stack([xs, np.zeros(count)]), np.full(count, width), np.full(count, width),
                       closed=False)


def open_arc(radius: float = 5.0, count: int = 20):
    phi = np.linspace(0.0, math.pi / 2, count)
    pts = radius * np.column_stack([np.sin(phi), 1.0 - np.cos(phi)])
    return build_track(pts, np.full(count, 1.0), np.full(count, 0.8), closed=False)


def brute_force_cost(track, lower, upper, levels: int = 21) -> float:
    """Dynamic programme over a grid of offsets; endpoints stay on the centreline."""
    K = len(track)
    terms = curvature_terms(track)
    grids = [np.array([0.0]) if k in (0, K - 1) else np.linspace(lower[k], upper[k], levels) for k in range(K)]
    value = np.zeros((len(grids[0]), len(grids[1])))
    for row, k in enumerate(range(1, K - 1)):
        jac = terms.jacobian[row]
        a = grids[k - 1][:, None, None]
        b = grids[k][None, :, None]
        c = grids[k + 1][None, None, :]
        r = terms.kappa0[row] + jac[k - 1] * a + jac[k] * b + jac[k + 1] * c
        value = np.min(value[:, :, None] + terms.weights[row] * r * r, axis=0)
    return float(value.min())


def test_straight_track_normals_point_left():
    track = straight_track(10.0, 2.0)
    np.testing.assert_allclose(track.normals, np.tile([0.0, 1.0], (len(track), 1)), atol=1e-12)
    assert not track.closed


def test_circle_normals_point_to_centre():
    track = circle_track()
    radial = track.centerline / np.linalg.norm(track.centerline, axis=1)[:, None]
    np.testing.assert_allclose(track.normals, -radial, atol=1e-12)


def test_track_validation():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    with pytest.raises(ValidationError):
        build_track(pts, np.ones(4), np.ones(4), closed=False)
    with pytest.raises(ValidationError):
        build_track(pts[:3], np.ones(3), np.ones(3), closed=False)
    with pytest.raises(ValidationError):
        build_track(np.column_stack([np.arange(5.0), np.zeros(5)]), np.zeros(5), np.ones(5), closed=False)


def test_borders_wider_than_the_radius_are_rejected():
    phi = np.linspace(0.0, 2 * math.pi, 40, endpoint=False)
    pts = np.column_stack([np.cos(phi), np.sin(phi)])
    with pytest.raises(ValidationError):
        build_track(pts, np.full(40, 1.5), np.full(40, 0.5), closed=True)


def test_centreline_has_zero_cost_on_straight():
    track = straight_track(10.0, 2.0)
    assert curvature_cost(track, np.zeros(len(track))) == 0.0


def test_single_offset_on_unit_straight():
    track = unit_straight(10)
    h = 0.1
    n = np.zeros(10)
    n[4] = h
    assert curvature_cost(track, n) == pytest.approx(6 * h * h, rel=1e-9)


def test_circle_curvature_is_inverse_radius():
    track = circle_track(radius=5.0)
    np.testing.assert_allclose(discrete_curvature(track.centerline, True), 0.2, rtol=1e-12)


def test_ring_cost_decreases_toward_the_outside():
    track = circle_track()
    costs = [curvature_cost(track, np.full(len(track), v)) for v in np.linspace(-0.9, 0.9, 19)]
    assert all(a < b for a, b in zip(costs, costs[1:]))


def test_ring_optimum_hugs_the_outer_border():
    track = circle_track()
    result = optimize_offsets(track)
    np.testing.assert_allclose(result.offsets, -track.w_right, atol=1e-6)
    assert np.all(result.offsets > -track.w_right)
    assert result.residual < 1e-6


def test_straight_optimum_is_the_centreline():
    result = optimize_offsets(straight_track(20.0, 3.0))
    assert np.max(np.abs(result.offsets)) < 1e-6


def test_bundled_track_solution():
    track = bundled_track()
    assert len(track) == 160
    assert track.closed
    result = optimize_offsets(track)
    assert result.residual < 1e-6
    assert np.all(result.offsets >= result.lower)
    assert np.all(result.offsets <= result.upper)
    assert np.all(result.offsets > -track.w_right)
    assert np.all(result.offsets < track.w_left)
    assert result.cost <= curvature_cost(track, np.zeros(len(track)))


def test_mirror_image_negates_offsets():
    track = open_arc()
    original = optimize_offsets(track).offsets
    mirrored = optimize_offsets(track.mirrored()).offsets
    np.testing.assert_allclose(mirrored, -original, atol=1e-6)


def test_obstacle_detour_takes_wider_side_and_beats_brute_force():
    track = unit_straight(12)
    obstacles = ObstacleMap(obstacles=(Obstacle(5.5, -0.3, 1.0, 1.0),))
    result = optimize_offsets(track, obstacles)
    assert result.offsets[5] >= 0.2
    assert result.offsets[6] >= 0.2
    assert result.offsets[0] == 0.0
    assert result.offsets[-1] == 0.0
    assert result.cost <= brute_force_cost(track, result.lower, result.upper) + 1e-9


def test_plain_optimum_beats_brute_force():
    track = open_arc(count=10)
    result = optimize_offsets(track)
    assert result.cost <= brute_force_cost(track, result.lower, result.upper) + 1e-9


def test_full_width_wall_is_infeasible():
    track = unit_straight(12, width=1.0)
    wall = ObstacleMap(obstacles=(Obstacle(5.0, 0.0, 0.5, 4.0),))
    with pytest.raises(InfeasibleError):
        optimize_offsets(track, wall)


def test_margin_narrower_than_track_is_infeasible():
    with pytest.raises(InfeasibleError):
        optimize_offsets(straight_track(10.0, 1.0), margin=0.6)


def test_box_qp_known_solution():
    H = 2.0 * np.eye(2)
    q = np.array([-4.0, 6.0])
    x, _ = box_qp(H, q, np.array([-1.0, -1.0]), np.array([1.0, 1.0]), np.zeros(2))
    np.testing.assert_allclose(x, [1.0, -1.0])
    assert kkt_residual(x, H @ x + q, np.array([-1.0, -1.0]), np.array([1.0, 1.0])) == 0.0


def test_resampled_plan_is_uniform():
    track = bundled_track()
    path = to_plan_path(track, np.zeros(len(track)), samples_per_segment=4)
    assert path.closed
    assert len(path.waypoints) == 4 * len(track)
    spacing = path.segment_lengths
    assert spacing.max() / spacing.min() < 1.05
    closing = np.linalg.norm(path.waypoints[0] - path.waypoints[-1])
    assert closing == pytest.approx(spacing.mean(), rel=0.05)


def test_open_plan_keeps_both_ends():
    track = straight_track(10.0, 2.0)
    path = to_plan_path(track, np.zeros(len(track)), samples_per_segment=3)
    np.testing.assert_allclose(path.waypoints[0], [0.0, 0.0])
    np.testing.assert_allclose(path.waypoints[-1], [10.0, 0.0])
    np.testing.assert_allclose(path.segment_lengths, path.segment_lengths[0])


def test_track_region_shell_is_outer_border():
    track = circle_track()
    region = track_region(track)
    assert region.region.area == pytest.approx(math.pi * (6.0 ** 2 - 4.0 ** 2), rel=0.01)
    assert len(region.boundaries) == 2


def test_track_file_errors(tmp_path):
    path = tmp_path / "track.csv"
    path.write_text("x,y,w\n", encoding="utf-8")
    with pytest.raises(ValidationError) as err:
        load_track(path)
    assert err.value.line == 1
    path.write_text("x,y,w_left,w_right\n0,0,1,1\n1,0,1\n", encoding="utf-8")
    with pytest.raises(ValidationError) as err:
        load_track(path, closed=False)
    assert err.value.line == 3


def test_benchmark_planner_avoids_obstacles():
    track = straight_track(25.0, 8.0)
    obstacles = ObstacleMap(obstacles=(Obstacle(10.0, 0.0, 1.0, 1.0),))
    planner = BenchmarkPlanner(track, obstacles, margin=0.45)
    assert planner.result.residual < 1e-6
    near = np.abs(planner.path.waypoints[:, 0] - 10.0) <= 0.5
    assert np.all(np.abs(planner.path.waypoints[near, 1]) >= 0.95 - STRICT_MARGIN - 1e-9)


def test_ring_cost_does_not_depend_on_sampling_density():
    coarse = circle_track(count=60)
    fine = circle_track(count=240)
    expected = 2 * math.pi / 5.0
    assert curvature_cost(coarse, np.zeros(60)) == pytest.approx(expected, rel=1e-2)
    assert curvature_cost(fine, np.zeros(240)) == pytest.approx(expected, rel=1e-3)


def assert_no_better_neighbour(track, result, step=1e-3):
    base = curvature_cost(track, result.offsets)
    for k in range(len(track)):
        for delta in (-step, step):
            value = result.offsets[k] + delta
            if not result.lower[k] <= value <= result.upper[k]:
                continue
            n = result.offsets.copy()
            n[k] = value
            assert curvature_cost(track, n) >= base - 1e-12, (k, delta)


def test_bundled_raceline_has_no_better_neighbour():
    track = bundled_track()
    assert_no_better_neighbour(track, optimize_offsets(track, margin=0.45))


def test_arc_optimum_has_no_better_neighbour():
    track = open_arc(count=16)
    assert_no_better_neighbour(track, optimize_offsets(track))


def test_bundled_raceline_cuts_the_corners():
    track = bundled_track()
    result = optimize_offsets(track, margin=0.45)
    assert np.max(np.abs(result.offsets)) > 0.9
    race_kappa = np.abs(discrete_curvature(track.points(result.offsets), True))
    centre_kappa = np.abs(discrete_curvature(track.centerline, True))
    assert centre_kappa.max() == pytest.approx(0.25, rel=1e-2)
    assert race_kappa.max() < centre_kappa.max()
