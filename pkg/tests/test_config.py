import json

import pytest

from cleanplate.config import (TIE_EPS, Config, ConfigError, load_config)


def test_defaults_are_valid():
    Config().validate()


def test_default_weight_values():
    cfg = Config()
    assert cfg.lambda1 == 0.15
    assert cfg.lambda2 == 0.40
    assert cfg.lambda3 == 0.45
    assert (cfg.lambda6, cfg.lambda7, cfg.lambda8) == (0.12, 0.36, 0.03)
    assert (cfg.sigma_c, cfg.sigma_g) == (4.8, 0.25)
    assert (cfg.sigma_e, cfg.sigma_h) == (0.17, 4.8)
    assert cfg.patch_size == 7
    assert cfg.t_r == 0.5
    assert cfg.dbscan_eps == 0.35
    assert cfg.min_pts == 1
    assert cfg.pm_iters == 6
    assert cfg.max_scans == 10
    assert TIE_EPS == 1e-6


def test_lambda4_lambda5_are_renormalized_weights():
    cfg = Config()
    assert cfg.lambda4 == pytest.approx(0.15 / 0.55, rel=1e-15)
    assert cfg.lambda5 == pytest.approx(0.40 / 0.55, rel=1e-15)
    assert cfg.lambda4 + cfg.lambda5 == pytest.approx(1.0, abs=1e-12)


def test_lambda4_lambda5_are_read_only():
    cfg = Config()
    with pytest.raises(AttributeError):
        cfg.lambda4 = 0.5
    with pytest.raises(AttributeError):
        cfg.lambda5 = 0.5


def test_lambda4_tracks_lambda1_lambda2():
    cfg = Config(lambda1=0.2, lambda2=0.3, lambda3=0.5)
    assert cfg.lambda4 == pytest.approx(0.4)
    assert cfg.lambda5 == pytest.approx(0.6)


@pytest.mark.parametrize("field,value,fragment", [
    ("lambda1", -0.1, "lambda1 must be in [0, 1]"),
    ("lambda2", 1.5, "lambda2 must be in [0, 1]"),
    ("lambda6", -0.01, "lambda6 must be in [0, 1]"),
    ("sigma_c", 0.0, "sigma_c must be positive"),
    ("sigma_g", -1.0, "sigma_g must be positive"),
    ("sigma_e", 0.0, "sigma_e must be positive"),
    ("sigma_h", 0.0, "sigma_h must be positive"),
    ("patch_size", 6, "patch_size must be odd and in [5, 31]"),
    ("patch_size", 3, "patch_size must be odd and in [5, 31]"),
    ("patch_size", 33, "patch_size must be odd and in [5, 31]"),
    ("t_r", 0.0, "t_r must be in (0, 1)"),
    ("t_r", 1.0, "t_r must be in (0, 1)"),
    ("dbscan_eps", 0.0, "dbscan_eps must be positive"),
    ("min_pts", 0, "min_pts must be >= 1"),
    ("pm_iters", 0, "pm_iters must be >= 1"),
    ("max_scans", 0, "max_scans must be >= 1"),
    ("snapshot_every", -1, "snapshot_every must be >= 0"),
    ("ransac_threshold", 0.0, "ransac_threshold must be positive"),
    ("ransac_confidence", 1.0, "ransac_confidence must be in (0, 1)"),
    ("ransac_max_iters", 0, "ransac_max_iters must be >= 1"),
    ("match_budget", 7, "match_budget must be >= 8"),
    ("match_cell", 0, "match_cell must be >= 1"),
])
def test_validate_rejects_out_of_range(field, value, fragment):
    cfg = Config(**{field: value})
    with pytest.raises(ConfigError) as exc:
        cfg.validate()
    assert fragment in str(exc.value)


def test_validate_rejects_weights_not_summing_to_one():
    cfg = Config(lambda1=0.2, lambda2=0.2, lambda3=0.2)
    with pytest.raises(ConfigError) as exc:
        cfg.validate()
    assert "must equal 1" in str(exc.value)


def test_validate_rejects_zero_appearance_weight():
    cfg = Config(lambda1=0.0, lambda2=0.0, lambda3=1.0)
    with pytest.raises(ConfigError) as exc:
        cfg.validate()
    assert "lambda1 + lambda2 must be positive" in str(exc.value)


def test_to_dict_roundtrips():
    cfg = Config(patch_size=9, seed=42, t_r=0.4)
    again = Config(**cfg.to_dict())
    assert again == cfg


def test_load_config_defaults_without_inputs():
    assert load_config() == Config()


def test_load_config_reads_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"t_r": 0.4, "seed": 9}))
    cfg = load_config(str(path))
    assert cfg.t_r == 0.4
    assert cfg.seed == 9
    assert cfg.patch_size == 7


def test_load_config_overrides_beat_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"t_r": 0.4, "pm_iters": 3}))
    cfg = load_config(str(path), {"t_r": 0.6})
    assert cfg.t_r == 0.6
    assert cfg.pm_iters == 3


def test_load_config_skips_none_overrides(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"t_r": 0.4}))
    cfg = load_config(str(path), {"t_r": None, "seed": None})
    assert cfg.t_r == 0.4
    assert cfg.seed == 0


def test_load_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"no_such_knob": 1}))
    with pytest.raises(ConfigError) as exc:
        load_config(str(path))
    assert "unknown config keys" in str(exc.value)
    assert "no_such_knob" in str(exc.value)


def test_load_config_rejects_unknown_override():
    with pytest.raises(ConfigError):
        load_config(None, {"bogus": 1})


def test_load_config_rejects_missing_file(tmp_path):
    with pytest.raises(ConfigError) as exc:
        load_config(str(tmp_path / "absent.json"))
    assert "cannot read config file" in str(exc.value)


def test_load_config_rejects_invalid_json(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError) as exc:
        load_config(str(path))
    assert "invalid JSON" in str(exc.value)


def test_load_config_rejects_non_object_json(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError) as exc:
        load_config(str(path))
    assert "must hold a JSON object" in str(exc.value)


def test_load_config_validates_merged_result(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"patch_size": 4}))
    with pytest.raises(ConfigError):
        load_config(str(path))
