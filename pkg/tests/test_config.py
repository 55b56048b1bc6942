import json
from pathlib import Path

import pytest

from lgsd import config as cfgmod
from lgsd.config import ConfigError, RunConfig

SCHEMA = Path(cfgmod.__file__).parent / "schema" / "run_config.schema.json"


def test_full_scale_defaults():
    c = RunConfig()
    assert c.skill.init_lambda == 300.0
    assert c.ppo.gae_lambda == 0.95
    assert c.ppo.lr == 1e-4
    assert c.skill.dim == 2


def test_desk_defaults():
    c = RunConfig()
    assert (c.trainer.epochs, c.trainer.episodes_per_epoch, c.env.episode_length) == (300, 8, 100)
    assert (c.skill.eps, c.skill.lr_dual) == (1e-3, 0.01)
    assert (c.hier.decision_interval, c.hier.goal_radius) == (10, 0.1)
    assert c.hidden("phi") == [64, 64]
    assert c.replace(trainer={"network_preset": "full"}).hidden("phi") == [256, 256, 128]


def test_round_trip_through_json(tmp_path):
    c = RunConfig().replace(ppo={"lr": 3e-4}, describer={"template": "point_half_plane_E"})
    cfgmod.dump(c, tmp_path / "c.json")
    assert cfgmod.load(tmp_path / "c.json") == c


def test_partial_file_fills_defaults(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"trainer": {"epochs": 3}}))
    c = cfgmod.load(tmp_path / "c.json")
    assert c.trainer.epochs == 3 and c.ppo == RunConfig().ppo


@pytest.mark.parametrize("doc, where", [
    ({"trainer": {"epoch": 3}}, "trainer"),
    ({"optimizer": {}}, "<root>"),
    ({"ppo": {"lr": "fast"}}, "ppo/lr"),
])
def test_schema_rejects(doc, where):
    with pytest.raises(ConfigError, match=where):
        cfgmod.from_dict(doc)


@pytest.mark.parametrize("doc", [
    {"skill": {"dim": 0}},
    {"ppo": {"gamma": 1.5}},
    {"trainer": {"network_preset": "huge"}},
    {"skill": {"phi_input": "pixels"}},
    {"env": {"dt": -1.0}},
    {"describer": {"rho": 0.0}},
])
def test_value_checks(doc):
    with pytest.raises(ConfigError):
        cfgmod.from_dict(doc)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.json"):
        cfgmod.load(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        cfgmod.load(tmp_path / "bad.json")


def test_shipped_schema_is_current():
    assert json.loads(SCHEMA.read_text()) == cfgmod.json_schema()


CONFIGS = Path(__file__).parent.parent / "configs"


@pytest.mark.parametrize("name, template", [
    ("desk_point_N", "point_half_plane_N"),
    ("desk_point_W", "point_half_plane_W"),
    ("desk_pusher_two_stage", "pusher_two_stage"),
])
def test_shipped_desk_configs_match_helper(name, template):
    assert cfgmod.load(CONFIGS / f"{name}.json") == cfgmod.desk_config(template)


def test_desk_config_picks_environment():
    assert cfgmod.desk_config("pusher_two_stage").env.name == "pusher"
    assert cfgmod.desk_config("point_half_plane_S").env.name == "point"
    assert cfgmod.desk_config(seed=3).trainer.seed == 3
    ablation = cfgmod.load(CONFIGS / "desk_pusher_constant.json")
    assert ablation.env.name == "pusher" and ablation.describer.template == "constant"
