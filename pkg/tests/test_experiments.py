import math

import numpy as np
import pytest

from refmod.config import Environment, PlannerKind, RunConfig
from refmod.errors import MissingCheckpointError
from refmod.environments import OutcomeStatus, run_episode
from refmod.experiments import evaluate, make_world, summarize, write_results_csv
from refmod.global_plan import bundled_track, optimize_offsets, to_plan_path
from refmod.mod_planner import PurePursuitPlanner

from conftest import zero_actor_agent


def small_config(**update) -> RunConfig:
    return RunConfig(episodes=3, episode_timeout=10.0, **update)


def test_worlds_are_seeded_per_condition():
    cfg = small_config()
    a = make_world(cfg, 7, True)
    b = make_world(cfg, 7, True)
    empty = make_world(cfg, 7, False)
    assert a.obstacle_map.obstacles == b.obstacle_map.obstacles
    assert len(a.obstacle_map.obstacles) == cfg.forest.n_obstacles
    assert empty.obstacle_map.obstacles == ()


def test_obstacle_file_replaces_random_obstacles(tmp_path):
    fixed = tmp_path / "fixed.map"
    fixed.write_text("obstacle 12 0 1 1\n", encoding="utf-8")
    world = make_world(small_config(obstacle_file=fixed), 3, True)
    assert [(o.cx, o.cy) for o in world.obstacle_map.obstacles] == [(12.0, 0.0)]


def test_friction_limit_holds_over_a_batch():
    results = evaluate(small_config(planner=PlannerKind.PURE_PURSUIT))
    assert len(results) == 6
    assert all(r.friction_excess <= 1e-9 for r in results)


def test_hybrid_without_agent_is_rejected():
    with pytest.raises(MissingCheckpointError):
        evaluate(small_config(planner=PlannerKind.HYBRID))


def test_zero_actor_matches_pure_pursuit():
    pursuit = evaluate(small_config(planner=PlannerKind.PURE_PURSUIT))
    hybrid = evaluate(small_config(planner=PlannerKind.HYBRID), zero_actor_agent(14))
    assert [(r.status, r.elapsed, r.steps) for r in hybrid] == [(r.status, r.elapsed, r.steps) for r in pursuit]
    assert all(r.mean_abs_delta_nn == 0.0 for r in hybrid)


def test_results_are_independent_of_worker_count():
    cfg = small_config(planner=PlannerKind.PURE_PURSUIT)
    serial = evaluate(cfg)
    pooled = evaluate(cfg.model_copy(update={"workers": 2}))
    assert serial == pooled


def test_summary_averages_successes_only(tmp_path):
    results = evaluate(small_config(planner=PlannerKind.PURE_PURSUIT), conditions=(False,))
    (summary,) = summarize(results)
    assert summary.episodes == 3
    assert summary.successes + summary.crashes + summary.timeouts == 3
    goals = [r.elapsed for r in results if r.status == "goal"]
    if goals:
        assert summary.mean_time == pytest.approx(np.mean(goals))
    else:
        assert math.isnan(summary.mean_time)
    path = write_results_csv([summary], tmp_path / "results.csv")
    assert path.read_text(encoding="utf-8").startswith("planner,environment,obstacles")


@pytest.mark.slow
def test_benchmark_clears_every_forest():
    cfg = RunConfig(planner=PlannerKind.BENCHMARK, environment=Environment.FOREST, episodes=100, workers=4)
    summaries = {s.obstacles: s for s in summarize(evaluate(cfg))}
    assert summaries[True].success_rate == 1.0
    assert summaries[False].success_rate == 1.0
    assert summaries[True].mean_time > summaries[False].mean_time


def track_config(**update) -> RunConfig:
    return RunConfig(**{"environment": Environment.TRACK, "episodes": 2, "episode_timeout": 30.0, **update})


def test_track_reference_is_the_obstacle_free_raceline():
    cfg = track_config()
    track = bundled_track()
    raceline = to_plan_path(track, optimize_offsets(track, None, cfg.plan_margin).offsets,
                            cfg.track.samples_per_segment)
    empty = make_world(cfg, 0, False)
    crowded = make_world(cfg, 1, True)
    np.testing.assert_allclose(empty.path.waypoints, raceline.waypoints, atol=1e-12)
    assert crowded.path is empty.path
    centre = to_plan_path(track, np.zeros(len(track)), cfg.track.samples_per_segment)
    assert np.max(np.linalg.norm(empty.path.waypoints - centre.waypoints, axis=1)) > 0.5


def test_raceline_lap_is_faster_than_centreline_lap():
    cfg = track_config()
    world = make_world(cfg, 0, False)
    centre = to_plan_path(world.track, np.zeros(len(world.track)), cfg.track.samples_per_segment)
    laps = {}
    for name, path in (("raceline", world.path), ("centreline", centre)):
        planner = PurePursuitPlanner(path, cfg.pursuit, cfg.sim)
        outcome = run_episode(planner, world.obstacle_map, path, cfg.sim, cfg.max_steps)
        assert outcome.status is OutcomeStatus.GOAL, name
        laps[name] = outcome.elapsed
    assert laps["raceline"] < laps["centreline"]


def test_benchmark_matches_pure_pursuit_on_an_empty_track():
    times = {}
    for planner in (PlannerKind.BENCHMARK, PlannerKind.PURE_PURSUIT):
        results = evaluate(track_config(planner=planner), conditions=(False,))
        assert all(r.status == "goal" for r in results)
        times[planner] = [r.elapsed for r in results]
    assert times[PlannerKind.BENCHMARK] == times[PlannerKind.PURE_PURSUIT]


@pytest.mark.slow
def test_track_obstacles_slow_the_benchmark_down():
    cfg = track_config(planner=PlannerKind.BENCHMARK, episodes=10, workers=4)
    summaries = {s.obstacles: s for s in summarize(evaluate(cfg))}
    assert summaries[False].success_rate == 1.0
    assert summaries[True].success_rate >= 0.9
    assert summaries[True].mean_time > summaries[False].mean_time
