"""
World and planner construction plus batched evaluation for the CLI.
"""

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from refmod.config import Environment, PlannerKind, RunConfig
from refmod.environments import (
    EpisodeOutcome, episode_seed, gen_forest, place_track_obstacles, run_episode, save_episode_csv,
)
from refmod.errors import MissingCheckpointError
from refmod.global_plan import (
    BenchmarkPlanner, TrackModel, bundled_track, load_track, optimize_offsets, straight_track, to_plan_path,
)
from refmod.mod_planner import HybridPlanner, Planner, PurePursuitPlanner
from refmod.pure_pursuit import PlanPath, save_plan_path
from refmod.sim_core import ObstacleMap, load_obstacle_map, save_obstacle_map
from refmod.td3 import Td3Agent

EVAL_STREAM = 0
TRAIN_STREAM = 1


class World(NamedTuple):
    obstacle_map: ObstacleMap
    path: PlanPath              # reference the goal is measured on
    track: TrackModel           # planning model for the benchmark planner
    with_obstacles: bool


def _load_track(track_file: Optional[Union[str, Path]], closed: bool) -> TrackModel:
    return bundled_track() if track_file is None else load_track(track_file, closed)


def run_track(cfg: RunConfig) -> TrackModel:
    return _load_track(cfg.track.track_file, cfg.track.closed)


@lru_cache(maxsize=8)
def _raceline(track_file: Optional[str], closed: bool, margin: float, samples_per_segment: int):
    track = _load_track(track_file, closed)
    offsets = optimize_offsets(track, None, margin).offsets
    return track, to_plan_path(track, offsets, samples_per_segment)


def track_reference(cfg: RunConfig) -> Tuple[TrackModel, PlanPath]:
    """Track model and its obstacle-free minimum-curvature raceline, solved once per track config."""
    track_file = None if cfg.track.track_file is None else str(Path(cfg.track.track_file).resolve())
    return _raceline(track_file, cfg.track.closed, cfg.plan_margin, cfg.track.samples_per_segment)


def make_world(cfg: RunConfig, seed: int, with_obstacles: bool = True) -> World:
    """Seeded world for one episode; an ``obstacle_file`` replaces the random obstacles."""
    fixed = load_obstacle_map(cfg.obstacle_file).obstacles if (cfg.obstacle_file and with_obstacles) else None
    if cfg.environment is Environment.FOREST:
        count = cfg.forest.n_obstacles if (with_obstacles and fixed is None) else 0
        spec = cfg.forest.model_copy(update={"seed": seed, "n_obstacles": count})
        obstacle_map, path = gen_forest(spec)
        track = straight_track(spec.forest_length, spec.forest_width)
    else:
        track, path = track_reference(cfg)
        count = cfg.track.track_obstacles if (with_obstacles and fixed is None) else 0
        obstacle_map = place_track_obstacles(track, count, seed, cfg.track, cfg.sim)
    if fixed is not None:
        obstacle_map = obstacle_map.with_obstacles(fixed)
    return World(obstacle_map, path, track, with_obstacles)


def make_planner(cfg: RunConfig, world: World, agent: Optional[Td3Agent] = None) -> Planner:
    if cfg.planner is PlannerKind.PURE_PURSUIT:
        return PurePursuitPlanner(world.path, cfg.pursuit, cfg.sim)
    if cfg.planner is PlannerKind.BENCHMARK:
        obstacles = world.obstacle_map if world.obstacle_map.obstacles else None
        return BenchmarkPlanner(world.track, obstacles, cfg.plan_margin, cfg.pursuit, cfg.sim,
                                cfg.track.samples_per_segment)
    if agent is None:
        raise MissingCheckpointError("the hybrid planner needs a trained checkpoint (--checkpoint)")
    return HybridPlanner(world.path, agent, cfg.pursuit, cfg.sim)


def friction_excess(outcome: EpisodeOutcome, cfg: RunConfig) -> float:
    """Largest v_ref^2 tan|delta_ref| / l - b g over the commanded pairs (<= 0 when within the limit)."""
    sim = cfg.sim
    limit = sim.friction * sim.gravity
    excess = [c.v_ref ** 2 * math.tan(abs(c.delta_ref)) / sim.wheelbase - limit for c in outcome.commands]
    return max(excess) if excess else -limit


@dataclass
class EpisodeResult:
    planner: str
    environment: str
    obstacles: bool
    index: int
    seed: int
    status: str
    elapsed: float
    steps: int
    total_reward: float
    mean_abs_delta_nn: float
    friction_excess: float


def evaluate_episode(cfg: RunConfig, index: int, with_obstacles: bool, agent: Optional[Td3Agent] = None,
                     trace_dir: Optional[Path] = None) -> EpisodeResult:
    """Run evaluation episode ``index`` of one condition; optionally write its trace files."""
    seed = episode_seed(cfg.seed, index, EVAL_STREAM)
    world = make_world(cfg, seed, with_obstacles)
    planner = make_planner(cfg, world, agent)
    outcome = run_episode(planner, world.obstacle_map, world.path, cfg.sim, cfg.max_steps, reward_cfg=cfg.reward)
    condition = "obstacles" if with_obstacles else "empty"
    if trace_dir is not None:
        trace_dir.mkdir(parents=True, exist_ok=True)
        stem = f"{cfg.planner.value}_{condition}_{index:03d}"
        save_obstacle_map(world.obstacle_map, trace_dir / f"{stem}.map")
        save_plan_path(planner.path, trace_dir / f"{stem}_plan.csv")
        save_episode_csv(outcome, trace_dir / f"{stem}.csv", cfg.sim, f"{stem}.map", f"{stem}_plan.csv",
                         meta={"planner": cfg.planner.value, "seed": seed,
                               "closed": str(planner.path.closed).lower()})
    return EpisodeResult(
        cfg.planner.value, cfg.environment.value, with_obstacles, index, seed, outcome.status.value,
        outcome.elapsed, outcome.steps, outcome.total_reward, outcome.mean_abs_delta_nn,
        friction_excess(outcome, cfg),
    )


def _evaluate_job(args):
    return evaluate_episode(*args)


def evaluate(cfg: RunConfig, agent: Optional[Td3Agent] = None, conditions: Sequence[bool] = (True, False),
             trace_dir: Optional[Path] = None,
             progress_callback: Optional[Callable[[EpisodeResult], None]] = None) -> List[EpisodeResult]:
    """
    Evaluate the configured planner over ``cfg.episodes`` seeded episodes per condition.

    With ``cfg.workers > 1`` episodes run in a process pool; results are
    returned in (condition, index) order either way.
    """
    if cfg.planner is PlannerKind.HYBRID and agent is None:
        raise MissingCheckpointError("the hybrid planner needs a trained checkpoint (--checkpoint)")
    jobs = []
    for with_obstacles in conditions:
        for index in range(cfg.episodes):
            trace = trace_dir if (trace_dir is not None and index < cfg.trace_episodes) else None
            jobs.append((cfg, index, with_obstacles, agent, trace))

    results: List[EpisodeResult] = []
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for result in pool.map(_evaluate_job, jobs):
                results.append(result)
                if progress_callback:
                    progress_callback(result)
    else:
        for job in jobs:
            result = _evaluate_job(job)
            results.append(result)
            if progress_callback:
                progress_callback(result)
    return results


@dataclass
class ConditionSummary:
    planner: str
    environment: str
    obstacles: bool
    episodes: int
    successes: int
    crashes: int
    timeouts: int
    success_rate: float
    mean_time: float            # over successful episodes only; nan when none succeeded


def summarize(results: Iterable[EpisodeResult]) -> List[ConditionSummary]:
    """Per-condition success counts and mean completion time."""
    groups = {}
    for r in results:
        groups.setdefault((r.planner, r.environment, r.obstacles), []).append(r)
    summaries = []
    for (planner, environment, obstacles), group in groups.items():
        times = [r.elapsed for r in group if r.status == "goal"]
        successes = len(times)
        crashes = sum(r.status == "crash" for r in group)
        timeouts = sum(r.status == "timeout" for r in group)
        summaries.append(ConditionSummary(
            planner, environment, obstacles, len(group), successes, crashes, timeouts,
            successes / len(group), float(np.mean(times)) if times else float("nan"),
        ))
    return summaries


def _write_rows(path: Path, rows: List[dict]) -> Path:
    with open(path, "w", encoding="utf-8", newline="") as f:
        if not rows:
            return path
        writer = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
    return path


def write_episodes_csv(results: Sequence[EpisodeResult], path: Union[str, Path]) -> Path:
    return _write_rows(Path(path), [asdict(r) for r in results])


def write_results_csv(summaries: Sequence[ConditionSummary], path: Union[str, Path]) -> Path:
    return _write_rows(Path(path), [asdict(s) for s in summaries])
