from pathlib import Path

import pytest
import yaml

from dmrsafety.config import RunConfig, builtin_path, load_node_config, load_scenario, resolve
from dmrsafety.distributions import ConfigError, TruncatedLognormal


def write_run(tmp_path, **overrides):
    data = {
        "rule_file": "builtin:cobot.rules",
        "scenario_file": "builtin:scenario1.yaml",
        "node_configs": ["builtin:node_s1.yaml", "builtin:node_s1.yaml"],
        "duration_ms": 1000,
        "seed": 3,
    }
    data.update(overrides)
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(data))
    return path


def test_builtin_files_exist():
    for name in ("cobot.rules", "scenario1.yaml", "scenario2.yaml", "scenario3.yaml", "fault_campaign.yaml",
                 "run_default.yaml", *(f"node_s{i}{s}.yaml" for i in (1, 2, 3) for s in ("", "_constant"))):
        assert builtin_path(name).is_file(), name


def test_resolve_relative_to_base(tmp_path):
    assert resolve("x.yaml", tmp_path) == tmp_path / "x.yaml"
    assert resolve("/abs/x.yaml", tmp_path) == Path("/abs/x.yaml")
    assert resolve("builtin:cobot.rules", tmp_path) == builtin_path("cobot.rules")


def test_run_config_from_file(tmp_path):
    (tmp_path / "plan.yaml").write_text("faults: []\n")
    cfg = RunConfig.from_file(write_run(tmp_path, fault_plan="plan.yaml"))
    assert cfg.fault_plan == tmp_path / "plan.yaml"
    assert cfg.node_configs[0] == builtin_path("node_s1.yaml")
    cfg.check_files()


@pytest.mark.parametrize("override", [{"duration_ms": 0}, {"bogus": 1}, {"node_configs": ["a", "b", "c"]}])
def test_run_config_rejects_bad_values(tmp_path, override):
    with pytest.raises(ConfigError):
        RunConfig.from_file(write_run(tmp_path, **override))


def test_run_config_missing_key(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("rule_file: x\n")
    with pytest.raises(ConfigError):
        RunConfig.from_file(path)


def test_missing_referenced_file(tmp_path):
    cfg = RunConfig.from_file(write_run(tmp_path, scenario_file="nowhere.yaml"))
    with pytest.raises(FileNotFoundError):
        cfg.check_files()


def test_hash_tracks_inputs(tmp_path):
    a = RunConfig.from_file(write_run(tmp_path)).content_hash()
    assert RunConfig.from_file(write_run(tmp_path)).content_hash() == a
    assert RunConfig.from_file(write_run(tmp_path, seed=4)).content_hash() != a
    local = tmp_path / "s.yaml"
    local.write_text(builtin_path("scenario1.yaml").read_text() + "\n# edited\n")
    assert RunConfig.from_file(write_run(tmp_path, scenario_file="s.yaml")).content_hash() != a


def test_shipped_fits_mirror_configured_bounds():
    cfg = load_node_config(builtin_path("node_s1.yaml"))
    assert cfg.t_infer == TruncatedLognormal(25.05, 0.51, 0.0, 39.11)
    script = load_scenario(builtin_path("scenario2.yaml"))
    assert script.kind == "occlusion" and script.miss_rate > 0


def test_scenario_must_be_mapping(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_scenario(path)
