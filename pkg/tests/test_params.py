import json
import math

import pytest

from vimseq.params import ConfigError, PhysicalParams, default_config, default_params, load_config


def test_defaults_round_trip():
    P = default_params()
    assert P == PhysicalParams()
    assert PhysicalParams.from_sections(P.to_sections()) == P


def test_load_arm_defaults_to_drum_radius():
    P = default_params()
    assert P.load_arm is None
    assert P.servo2_lever == P.drum_radius
    assert P.replace(load_arm=1.0).servo2_lever == 1.0


def test_overlay_merges_nested_keys(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"physical": {"spring": {"spring_const": 500.0}},
                                "es": {"task1-ilqr-es": {"max_iters": 3}}}))
    cfg = load_config(path)
    assert cfg["physical"]["spring"]["spring_const"] == 500.0
    assert cfg["physical"]["spring"]["lever_B"] == 0.035
    assert cfg["es"]["task1-ilqr-es"]["max_iters"] == 3
    assert cfg["es"]["task1-ilqr-es"]["K"] == 4


@pytest.mark.parametrize("doc", [
    {"physical": {"spring": {"spring_const": -1.0}}},
    {"physical": {"spring": {"stiffness": 1.0}}},
    {"physical": {"spring": {"load_arm": 0.0}}},
    {"physical": {"servo": {"theta2_min": 2.0}}},
    {"plotting": {}},
    [1, 2],
])
def test_bad_configs_are_rejected(tmp_path, doc):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ConfigError):
        load_config(path)


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")


def test_control_box():
    P = default_params()
    assert list(P.u_min) == [-math.pi / 2, 0.0, 0.0]
    assert list(P.u_max) == [math.pi / 2, math.pi / 2, 1.0]


def test_shipped_config_has_all_sections():
    cfg = default_config()
    assert {"physical", "task", "es", "solver"} <= set(cfg)
    assert set(cfg["es"]) == {"task1-ilqr-es", "task1-pi2seq", "task2-tidc-es"}
