import numpy as np
import pytest

from refmod.config import ForestSpec, RunConfig, SimParams, Td3Config
from refmod.neural import Activation, Mlp
from refmod.pure_pursuit import PlanPath
from refmod.td3 import Td3Agent


@pytest.fixture
def params():
    return SimParams()


@pytest.fixture
def straight_path():
    xs = np.linspace(0.0, 40.0, 81)
    return PlanPath(np.column_stack([xs, np.zeros_like(xs)]))


@pytest.fixture
def small_td3():
    return Td3Config(hidden_sizes=(16, 16), batch_size=8, buffer_capacity=1000, warmup_steps=0)


def zero_actor_agent(state_dim: int, cfg: Td3Config = None, seed: int = 0) -> Td3Agent:
    """Agent whose actor always outputs exactly zero."""
    agent = Td3Agent.create(state_dim, cfg or Td3Config(hidden_sizes=(8,)), seed)
    agent.actor = Mlp.zeros(agent.actor.sizes, Activation.TANH)
    agent.actor_target = agent.actor.copy()
    return agent


@pytest.fixture
def zero_agent(params):
    return zero_actor_agent(params.state_dim)


@pytest.fixture
def small_run_config(tmp_path):
    """Fast forest config for end-to-end runs."""
    return RunConfig(
        forest=ForestSpec(n_obstacles=3),
        td3=Td3Config(hidden_sizes=(16, 16), batch_size=16, warmup_steps=50, buffer_capacity=5000),
        episodes=2,
        train_steps=200,
        episode_timeout=10.0,
        out_dir=tmp_path / "out",
    )
