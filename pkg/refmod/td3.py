"""
Twin-delayed deep deterministic policy gradient (TD3) on top of refmod.neural.

The agent owns its networks and optimizer states; ``train_step`` replaces them
with updated copies. One trainer thread drives an agent at a time.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, NamedTuple, Optional, Union

import numpy as np
from dotenv import dotenv_values

from refmod.config import Td3Config
from refmod.errors import MissingCheckpointError, TrainingDivergedError, ValidationError
from refmod.neural import Activation, AdamState, Mlp, adam_step, backward, forward, load_network, polyak_update, save_network

# tolerance on the [-1, 1] state box, absorbs rounding in the affine scaling
_STATE_TOL = 1e-9

NETWORK_FILES = (
    "actor", "actor_target",
    "critic1", "critic1_target",
    "critic2", "critic2_target",
)


class Transition(NamedTuple):
    state: np.ndarray
    action: float
    reward: float
    next_state: np.ndarray
    done: bool


class Batch(NamedTuple):
    """Column-stacked transitions; actions are (n, 1)."""
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __len__(self) -> int:
        return len(self.rewards)


class ReplayBuffer:
    """Fixed-capacity ring of transitions with a seeded uniform sampler."""

    def __init__(self, capacity: int, state_dim: int, seed: Union[int, np.random.Generator] = 0):
        if capacity <= 0:
            raise ValidationError("replay buffer capacity must be positive")
        self.capacity = capacity
        self.state_dim = state_dim
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, 1))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.dones = np.zeros(capacity)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, t: Transition) -> None:
        state = np.asarray(t.state, dtype=float)
        next_state = np.asarray(t.next_state, dtype=float)
        if state.shape != (self.state_dim,) or next_state.shape != (self.state_dim,):
            raise ValidationError(f"transition states must have {self.state_dim} entries")
        values = np.concatenate([state, next_state, [t.action, t.reward]])
        if not np.all(np.isfinite(values)):
            raise ValidationError("transition contains non-finite values")
        if np.any(np.abs(state) > 1.0 + _STATE_TOL) or np.any(np.abs(next_state) > 1.0 + _STATE_TOL):
            raise ValidationError("transition states must be scaled to [-1, 1]")
        if abs(t.action) > 1.0 + _STATE_TOL:
            raise ValidationError("transition action must lie in [-1, 1]")

        i = self.cursor
        self.states[i] = state
        self.actions[i, 0] = t.action
        self.rewards[i] = t.reward
        self.next_states[i] = next_state
        self.dones[i] = float(t.done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n: int) -> Batch:
        """Uniform sample of ``n`` stored transitions, with replacement."""
        if self.size == 0:
            raise ValidationError("cannot sample from an empty replay buffer")
        if n > self.size:
            raise ValidationError(f"requested {n} samples from a buffer holding {self.size}")
        idx = self.rng.integers(0, self.size, size=n)
        return Batch(
            self.states[idx].copy(),
            self.actions[idx].copy(),
            self.rewards[idx].copy(),
            self.next_states[idx].copy(),
            self.dones[idx].copy(),
        )


@dataclass
class TrainDiagnostics:
    critic1_loss: float = float("nan")
    critic2_loss: float = float("nan")
    actor_loss: Optional[float] = None
    mean_target: float = float("nan")
    skipped: bool = False


class Targets(NamedTuple):
    q1: np.ndarray
    q2: np.ndarray
    y: np.ndarray


@dataclass
class Td3Agent:
    """Actor, twin critics, their targets and Adam states."""
    actor: Mlp
    actor_target: Mlp
    critic1: Mlp
    critic2: Mlp
    critic1_target: Mlp
    critic2_target: Mlp
    cfg: Td3Config = field(default_factory=Td3Config)
    seed: int = 0
    rng: np.random.Generator = None
    actor_opt: AdamState = None
    critic1_opt: AdamState = None
    critic2_opt: AdamState = None
    updates: int = 0

    def __post_init__(self):
        if self.rng is None:
            self.rng = np.random.default_rng(np.random.SeedSequence([self.seed, 1]))
        if self.actor.sizes[-1] != 1 or self.actor.output is not Activation.TANH:
            raise ValidationError("the actor must have a single tanh output")
        if self.critic1.sizes[0] != self.state_dim + 1 or self.critic2.sizes[0] != self.state_dim + 1:
            raise ValidationError("critics take the state plus the action as input")
        for online, target in ((self.actor, self.actor_target), (self.critic1, self.critic1_target),
                               (self.critic2, self.critic2_target)):
            if online.sizes != target.sizes:
                raise ValidationError("target networks must match their online networks")
        self.actor_opt = self.actor_opt or AdamState.for_net(self.actor)
        self.critic1_opt = self.critic1_opt or AdamState.for_net(self.critic1)
        self.critic2_opt = self.critic2_opt or AdamState.for_net(self.critic2)

    @classmethod
    def create(cls, state_dim: int, cfg: Optional[Td3Config] = None, seed: int = 0) -> "Td3Agent":
        """Freshly initialised agent; targets start as copies of the online networks."""
        cfg = cfg or Td3Config()
        actor_seed, c1_seed, c2_seed = np.random.SeedSequence([seed, 0]).spawn(3)
        hidden = list(cfg.hidden_sizes)
        actor = Mlp.init([state_dim] + hidden + [1], Activation.TANH, np.random.default_rng(actor_seed))
        critic1 = Mlp.init([state_dim + 1] + hidden + [1], Activation.IDENTITY, np.random.default_rng(c1_seed))
        critic2 = Mlp.init([state_dim + 1] + hidden + [1], Activation.IDENTITY, np.random.default_rng(c2_seed))
        return cls(actor, actor.copy(), critic1, critic2, critic1.copy(), critic2.copy(), cfg, seed)

    @property
    def state_dim(self) -> int:
        return self.actor.sizes[0]

    def select_action(self, state: np.ndarray, explore: bool = False) -> float:
        """Actor output, optionally with clipped Gaussian exploration noise."""
        a = float(forward(self.actor, state)[0])
        if explore:
            a = a + float(self.rng.normal(0.0, self.cfg.exploration_noise))
            a = min(max(a, -1.0), 1.0)
        return a

    def compute_targets(self, batch: Batch) -> Targets:
        """Clipped double-Q targets with target-policy smoothing."""
        cfg = self.cfg
        noise = np.clip(self.rng.normal(0.0, cfg.policy_noise, size=(len(batch), 1)),
                        -cfg.noise_clip, cfg.noise_clip)
        next_actions = np.clip(forward(self.actor_target, batch.next_states) + noise, -1.0, 1.0)
        sa = np.hstack([batch.next_states, next_actions])
        q1 = forward(self.critic1_target, sa)[:, 0]
        q2 = forward(self.critic2_target, sa)[:, 0]
        y = batch.rewards + cfg.gamma * (1.0 - batch.dones) * np.minimum(q1, q2)
        return Targets(q1, q2, y)

    def _critic_update(self, critic: Mlp, opt: AdamState, sa: np.ndarray, y: np.ndarray):
        q = forward(critic, sa)[:, 0]
        err = q - y
        loss = float(np.mean(err * err))
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"critic loss became non-finite ({loss})")
        grads, _ = backward(critic, sa, (2.0 / len(y)) * err[:, None])
        critic, opt = adam_step(critic, grads, opt, self.cfg.critic_lr)
        return critic, opt, loss

    def train_step(self, buffer: ReplayBuffer, step_index: int) -> TrainDiagnostics:
        """
        One TD3 update from a sampled minibatch.

        Both critics regress toward the clipped double-Q target every call; the
        actor and all targets update every ``policy_delay`` calls. A buffer
        holding fewer than ``batch_size`` transitions leaves the agent untouched
        and returns diagnostics with ``skipped`` set.
        """
        cfg = self.cfg
        if len(buffer) < cfg.batch_size:
            return TrainDiagnostics(skipped=True)

        batch = buffer.sample(cfg.batch_size)
        targets = self.compute_targets(batch)
        sa = np.hstack([batch.states, batch.actions])
        self.critic1, self.critic1_opt, loss1 = self._critic_update(self.critic1, self.critic1_opt, sa, targets.y)
        self.critic2, self.critic2_opt, loss2 = self._critic_update(self.critic2, self.critic2_opt, sa, targets.y)
        diag = TrainDiagnostics(loss1, loss2, None, float(np.mean(targets.y)))

        if step_index % cfg.policy_delay == 0:
            diag.actor_loss = self._actor_update(batch.states)
            self.soft_update()
        self.updates += 1
        return diag

    def _actor_update(self, states: np.ndarray) -> float:
        # maximise Q1(s, pi(s)): gradient flows through the critic's action input
        actions = forward(self.actor, states)
        sa = np.hstack([states, actions])
        q = forward(self.critic1, sa)[:, 0]
        loss = -float(np.mean(q))
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"actor loss became non-finite ({loss})")
        d_q = np.full((len(states), 1), -1.0 / len(states))
        _, d_sa = backward(self.critic1, sa, d_q)
        grads, _ = backward(self.actor, states, d_sa[:, -1:])
        self.actor, self.actor_opt = adam_step(self.actor, grads, self.actor_opt, self.cfg.actor_lr)
        return loss

    def soft_update(self, tau: Optional[float] = None) -> None:
        tau = self.cfg.tau if tau is None else tau
        self.actor_target = polyak_update(self.actor_target, self.actor, tau)
        self.critic1_target = polyak_update(self.critic1_target, self.critic1, tau)
        self.critic2_target = polyak_update(self.critic2_target, self.critic2, tau)

    def networks(self) -> Dict[str, Mlp]:
        return {name: getattr(self, name) for name in NETWORK_FILES}


def save_checkpoint(agent: Td3Agent, directory: Union[str, Path]) -> Path:
    """Write the six networks plus ``manifest.txt`` (hyperparameters and seed)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, net in agent.networks().items():
        save_network(net, directory / f"{name}.rmnn")
    lines = [f"seed = {agent.seed}", f"state_dim = {agent.state_dim}", f"updates = {agent.updates}"]
    for key, value in agent.cfg.model_dump().items():
        if key == "hidden_sizes":
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return directory


def load_checkpoint(directory: Union[str, Path]) -> Td3Agent:
    """Restore an agent saved by ``save_checkpoint`` (optimizer moments start fresh)."""
    directory = Path(directory)
    manifest = directory / "manifest.txt"
    if not directory.is_dir() or not manifest.exists():
        raise MissingCheckpointError(f"no checkpoint found at {directory}")
    missing = [name for name in NETWORK_FILES if not (directory / f"{name}.rmnn").exists()]
    if missing:
        raise MissingCheckpointError(f"checkpoint {directory} lacks {', '.join(missing)}")

    values = dotenv_values(manifest)
    try:
        seed = int(values.pop("seed"))
        state_dim = int(values.pop("state_dim"))
        updates = int(values.pop("updates", 0))
    except (KeyError, TypeError, ValueError) as e:
        raise ValidationError(f"checkpoint manifest {manifest} is incomplete") from e
    cfg = Td3Config(**{k: v for k, v in values.items() if k in Td3Config.model_fields})
    nets = {name: load_network(directory / f"{name}.rmnn") for name in NETWORK_FILES}
    agent = Td3Agent(cfg=cfg, seed=seed, updates=updates, **nets)
    if agent.state_dim != state_dim:
        raise ValidationError(f"checkpoint actor expects {agent.state_dim} inputs, manifest says {state_dim}")
    return agent
