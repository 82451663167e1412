import pydantic
import pytest

from refmod.config import Environment, PlannerKind, RunConfig, Td3Config, section_for_key
from refmod.env_loader import build_run_config, env_overrides, read_config_file, read_run_config
from refmod.errors import ValidationError
from refmod.utils import config_hash, write_manifest


def test_defaults_match_bundled_config():
    cfg, sources = read_run_config(environ={})
    assert cfg == RunConfig()
    assert sources["seed"] == "defaults"


def test_precedence_file_env_flags(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("seed = 3\nepisodes = 7\nlookahead = 1.5\n", encoding="utf-8")
    cfg, sources = read_run_config(conf, {"episodes": 9}, environ={"REFMOD_SEED": "5"})
    assert cfg.seed == 5
    assert cfg.episodes == 9
    assert cfg.pursuit.lookahead == 1.5
    assert sources["seed"] == "environment"
    assert sources["episodes"] == "command line"
    assert sources["lookahead"] == str(conf)


def test_flat_keys_route_to_sections():
    assert section_for_key("max_speed") == "sim"
    assert section_for_key("hidden_sizes") == "td3"
    assert section_for_key("seed") is None
    cfg = build_run_config({"hidden_sizes": "64,32", "planner": "pure-pursuit", "environment": "track"})
    assert cfg.td3.hidden_sizes == (64, 32)
    assert cfg.planner is PlannerKind.PURE_PURSUIT
    assert cfg.environment is Environment.TRACK


def test_unknown_key_is_rejected():
    with pytest.raises(ValidationError):
        build_run_config({"wheel_base": "0.3"})


def test_invalid_values_are_rejected():
    with pytest.raises(pydantic.ValidationError):
        build_run_config({"max_speed": "-1"})
    with pytest.raises(pydantic.ValidationError):
        Td3Config(hidden_sizes="")


def test_line_without_value_reports_line(tmp_path):
    conf = tmp_path / "bad.conf"
    conf.write_text("seed = 1\njust_a_word\n", encoding="utf-8")
    with pytest.raises(ValidationError) as err:
        read_config_file(conf)
    assert err.value.line == 2


def test_missing_config_file(tmp_path):
    with pytest.raises(ValidationError):
        read_config_file(tmp_path / "absent.conf")


def test_env_overrides_use_prefix():
    assert env_overrides({"REFMOD_SEED": "4", "HOME": "/root"}) == {"seed": "4"}


def test_derived_values():
    cfg = RunConfig(episode_timeout=2.0)
    assert cfg.max_steps == 200
    assert cfg.plan_margin == pytest.approx(0.45)
    assert cfg.sim.state_dim == 14


def test_manifest_records_config_hash(tmp_path):
    cfg = RunConfig(seed=11)
    path = write_manifest(tmp_path, "eval", cfg, {"episodes": 3})
    text = path.read_text(encoding="utf-8")
    assert f"config_sha256 = {config_hash(cfg)}" in text
    assert "seed = 11" in text
    assert "episodes = 3" in text
    assert config_hash(cfg) != config_hash(RunConfig(seed=12))
