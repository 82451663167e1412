"""
TD3 training loop: episodes in freshly generated worlds, one update per step.
"""

from collections import deque
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from refmod.config import RunConfig
from refmod.environments import StepRecord, episode_seed, run_episode
from refmod.errors import TrainingDivergedError
from refmod.experiments import TRAIN_STREAM, make_world
from refmod.mod_planner import HybridPlanner
from refmod.td3 import ReplayBuffer, Td3Agent, TrainDiagnostics, Transition


@dataclass
class CurveRow:
    step: int
    episode_reward: float
    success_rate_window: float
    mean_abs_delta_nn: float


CURVE_COLUMNS = ["step", "episode_reward", "success_rate_window", "mean_abs_delta_nn"]


class Trainer:
    """
    Owns the agent, the replay buffer and the training counters.

    Obstacles are regenerated every episode from a seed derived from the
    master seed. The first ``warmup_steps`` actions are uniform random; after
    that every environment step is followed by one ``train_step``.
    """

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.agent = Td3Agent.create(cfg.sim.state_dim, cfg.td3, cfg.seed)
        self.buffer = ReplayBuffer(cfg.td3.buffer_capacity, cfg.sim.state_dim,
                                   np.random.default_rng(np.random.SeedSequence([cfg.seed, 2])))
        self.warmup_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
        self.steps = 0
        self.episodes = 0
        self.curve: List[CurveRow] = []
        self.last_diagnostics: Optional[TrainDiagnostics] = None

    def run(self, progress_callback: Optional[Callable[[CurveRow], None]] = None,
            checkpoint_callback: Optional[Callable[[Td3Agent, int], None]] = None) -> List[CurveRow]:
        cfg = self.cfg
        successes = deque(maxlen=cfg.success_window)

        while self.steps < cfg.train_steps:
            world = make_world(cfg, episode_seed(cfg.seed, self.episodes, TRAIN_STREAM), True)
            planner = HybridPlanner(world.path, self.agent, cfg.pursuit, cfg.sim, explore=True,
                                    random_action_rng=self.warmup_rng if self.steps < cfg.td3.warmup_steps else None)

            def on_step(record: StepRecord):
                self.buffer.push(Transition(
                    record.observation.planner_state.vector, record.command.action, record.reward,
                    record.next_observation.planner_state.vector, record.done,
                ))
                self.steps += 1
                if self.steps >= cfg.td3.warmup_steps:
                    planner.random_action_rng = None
                    self.last_diagnostics = self.agent.train_step(self.buffer, self.steps)
                if checkpoint_callback and self.steps % cfg.checkpoint_interval == 0:
                    checkpoint_callback(self.agent, self.steps)

            budget = min(cfg.max_steps, cfg.train_steps - self.steps)
            outcome = run_episode(planner, world.obstacle_map, world.path, cfg.sim, budget,
                                  reward_cfg=cfg.reward, step_callback=on_step)
            self.episodes += 1
            successes.append(outcome.success)
            row = CurveRow(self.steps, outcome.total_reward, float(np.mean(successes)), outcome.mean_abs_delta_nn)
            self.curve.append(row)
            if progress_callback:
                progress_callback(row)
        return self.curve

    def diagnostic_dump(self, error: TrainingDivergedError) -> str:
        """Plain-text state report written when training diverges."""
        lines = [
            f"error = {error}",
            f"steps = {self.steps}",
            f"episodes = {self.episodes}",
            f"buffer_size = {len(self.buffer)}",
            f"updates = {self.agent.updates}",
        ]
        if self.last_diagnostics is not None:
            for key, value in vars(self.last_diagnostics).items():
                lines.append(f"last_{key} = {value}")
        for name, net in self.agent.networks().items():
            finite = net.is_finite()
            scale = max(float(np.max(np.abs(p))) for p in net.parameters()) if finite else float("nan")
            lines.append(f"{name} = finite={finite} max_abs={scale}")
        return "\n".join(lines) + "\n"
