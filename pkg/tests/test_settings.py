import json

import pytest

from src.config.settings import DEFAULTS_FILE, Settings
from src.domain.errors import ConfigError


def test_shipped_defaults_match_code():
    with open(DEFAULTS_FILE) as f:
        shipped = json.load(f)
    assert shipped == Settings().to_dict()
    assert Settings.from_file(str(DEFAULTS_FILE)) == Settings()


def test_overrides_merge_over_defaults():
    settings = Settings.from_dict({"qc": {"l_base": 0.2}, "planner": {"max_iterations": 100}})
    assert settings.qc.l_base == 0.2
    assert settings.qc.max_occlusion == 0.30
    assert settings.planner.max_iterations == 100


def test_integer_value_accepted_for_float_field():
    assert Settings.from_dict({"reward": {"alpha": 1}}).reward.alpha == 1.0


@pytest.mark.parametrize("overrides", [
    {"nope": {}},
    {"qc": {"unknown_key": 1}},
    {"qc": 3},
    {"pipeline": {"workers": 1.5}},
    {"reward": {"include_trace_reward": "yes"}},
    {"planner": {"step_size": -1.0}},
    ["not", "a", "dict"],
])
def test_invalid_overrides_raise(overrides):
    with pytest.raises(ConfigError):
        Settings.from_dict(overrides)


def test_unreadable_file_is_config_error(tmp_path):
    bad = tmp_path / "config.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        Settings.from_file(str(bad))
    with pytest.raises(ConfigError):
        Settings.from_file(str(tmp_path / "missing.json"))


def test_load_without_path_gives_defaults():
    assert Settings.load(None) == Settings()
