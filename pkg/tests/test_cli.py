import csv

import pytest
from click.testing import CliRunner

from refmod.cli import main
from refmod.env_loader import read_run_config
from refmod.td3 import Td3Agent, load_checkpoint, save_checkpoint
from refmod.utils.run_manifest import config_hash

from conftest import zero_actor_agent

FAST = [
    "--seed", "1",
    "--episodes", "2",
]


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def fast_config(tmp_path):
    conf = tmp_path / "fast.conf"
    conf.write_text(
        "episode_timeout = 8.0\n"
        "hidden_sizes = 16,16\n"
        "batch_size = 16\n"
        "warmup_steps = 50\n"
        "buffer_capacity = 5000\n"
        "checkpoint_interval = 100\n"
        "trace_episodes = 1\n",
        encoding="utf-8",
    )
    return str(conf)


def read_rows(path):
    with open(path, encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def test_version(runner):
    result = runner.invoke(main, ["--version"])
    assert result.exit_code == 0


def test_plan_writes_plan_and_manifest(runner, tmp_path):
    out = tmp_path / "plan"
    result = runner.invoke(main, ["plan", "--environment", "track", "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert (out / "plan.csv").exists()
    manifest = (out / "manifest.txt").read_text(encoding="utf-8")
    assert "command = plan" in manifest
    assert "residual = " in manifest


def test_eval_pure_pursuit(runner, tmp_path, fast_config):
    out = tmp_path / "eval"
    result = runner.invoke(main, ["eval", "--config", fast_config, "--planner", "pure-pursuit",
                                  "--out", str(out)] + FAST)
    assert result.exit_code == 0, result.output
    summaries = read_rows(out / "results.csv")
    assert len(summaries) == 2
    for row in summaries:
        assert int(row["successes"]) + int(row["crashes"]) + int(row["timeouts"]) == 2
    assert len(read_rows(out / "episodes.csv")) == 4
    assert sorted(p.name for p in (out / "traces").glob("*.csv")) == [
        "pure-pursuit_empty_000.csv", "pure-pursuit_empty_000_plan.csv",
        "pure-pursuit_obstacles_000.csv", "pure-pursuit_obstacles_000_plan.csv",
    ]


def test_eval_hybrid_needs_checkpoint(runner, tmp_path):
    result = runner.invoke(main, ["eval", "--planner", "hybrid", "--out", str(tmp_path / "e")])
    assert result.exit_code == 1
    result = runner.invoke(main, ["eval", "--planner", "hybrid", "--checkpoint", str(tmp_path / "none"),
                                  "--out", str(tmp_path / "e")])
    assert result.exit_code == 1


def test_zero_action_hybrid_times_match_pure_pursuit(runner, tmp_path, fast_config):
    agent = zero_actor_agent(14)
    checkpoint = save_checkpoint(agent, tmp_path / "zero")
    times = {}
    for planner in ("pure-pursuit", "hybrid"):
        out = tmp_path / planner
        args = ["eval", "--config", fast_config, "--planner", planner, "--out", str(out),
                "--checkpoint", str(checkpoint)] + FAST
        result = runner.invoke(main, args)
        assert result.exit_code == 0, result.output
        times[planner] = [(r["obstacles"], r["status"], r["elapsed"]) for r in read_rows(out / "episodes.csv")]
    assert times["hybrid"] == times["pure-pursuit"]


def test_train_zero_steps_saves_initial_agent(runner, tmp_path, fast_config):
    out = tmp_path / "train"
    result = runner.invoke(main, ["train", "--config", fast_config, "--steps", "0", "--seed", "4",
                                  "--out", str(out)])
    assert result.exit_code == 0, result.output
    saved = load_checkpoint(out / "checkpoint")
    fresh = Td3Agent.create(14, saved.cfg, 4)
    for name, net in fresh.networks().items():
        for a, b in zip(net.parameters(), saved.networks()[name].parameters()):
            assert a.tobytes() == b.tobytes()
    assert read_rows(out / "training_curve.csv") == []


def test_training_is_reproducible(runner, tmp_path, fast_config):
    blobs = []
    for name in ("a", "b"):
        out = tmp_path / name
        result = runner.invoke(main, ["train", "--config", fast_config, "--steps", "200", "--seed", "2",
                                      "--out", str(out)])
        assert result.exit_code == 0, result.output
        assert (out / "checkpoints" / "step_0000100").is_dir()
        blobs.append([(out / "checkpoint" / f).read_bytes() for f in ("actor.rmnn", "critic1.rmnn")])
        assert len(read_rows(out / "training_curve.csv")) >= 1
    assert blobs[0] == blobs[1]


def test_plot_after_eval(runner, tmp_path, fast_config):
    out = tmp_path / "eval"
    result = runner.invoke(main, ["eval", "--config", fast_config, "--planner", "pure-pursuit",
                                  "--out", str(out)] + FAST)
    assert result.exit_code == 0, result.output
    trace = out / "traces" / "pure-pursuit_obstacles_000.csv"
    plots = tmp_path / "plots"
    result = runner.invoke(main, ["plot", str(trace), "--out", str(plots)])
    assert result.exit_code == 0, result.output
    assert (plots / "pure-pursuit_obstacles_000_trajectory.svg").exists()
    assert (plots / "pure-pursuit_obstacles_000_network.svg").exists()


def test_unknown_config_key_exits_1(runner, tmp_path):
    conf = tmp_path / "bad.conf"
    conf.write_text("not_a_key = 1\n", encoding="utf-8")
    result = runner.invoke(main, ["plan", "--config", str(conf), "--out", str(tmp_path / "p")])
    assert result.exit_code == 1


def test_environment_variable_overrides_seed(runner, tmp_path):
    out = tmp_path / "plan"
    result = runner.invoke(main, ["plan", "--out", str(out)], env={"REFMOD_SEED": "5"})
    assert result.exit_code == 0, result.output
    assert "seed = 5" in (out / "manifest.txt").read_text(encoding="utf-8")


def test_debug_config_reports_sources(runner, tmp_path):
    result = runner.invoke(main, ["plan", "--debug-config", "--seed", "8", "--out", str(tmp_path / "d")])
    assert result.exit_code == 0
    assert "Effective configuration" in result.output
    assert "seed = 8  [command line]" in result.output
    assert not (tmp_path / "d").exists()


def test_evaluation_tables_are_reproducible(runner, tmp_path, fast_config):
    tables = []
    for name in ("a", "b"):
        out = tmp_path / name
        result = runner.invoke(main, ["eval", "--config", fast_config, "--planner", "benchmark",
                                      "--out", str(out)] + FAST)
        assert result.exit_code == 0, result.output
        tables.append([(out / f).read_bytes() for f in ("results.csv", "episodes.csv")])
    assert tables[0] == tables[1]


def test_plot_records_config_and_reports_sources(runner, tmp_path, fast_config):
    out = tmp_path / "eval"
    result = runner.invoke(main, ["eval", "--config", fast_config, "--planner", "pure-pursuit",
                                  "--out", str(out)] + FAST)
    assert result.exit_code == 0, result.output
    trace = str(out / "traces" / "pure-pursuit_empty_000.csv")
    debug = runner.invoke(main, ["plot", trace, "--config", fast_config, "--debug-config",
                                 "--out", str(tmp_path / "none")])
    assert debug.exit_code == 0
    assert "Effective configuration" in debug.output
    assert not (tmp_path / "none").exists()
    plots = tmp_path / "plots"
    result = runner.invoke(main, ["plot", trace, "--config", fast_config, "--seed", "3", "--out", str(plots)])
    assert result.exit_code == 0, result.output
    manifest = (plots / "manifest.txt").read_text(encoding="utf-8")
    assert "command = plot" in manifest
    assert "seed = 3" in manifest
    cfg, _ = read_run_config(fast_config, {"out_dir": str(plots), "seed": 3})
    assert f"config_sha256 = {config_hash(cfg)}" in manifest
