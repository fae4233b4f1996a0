"""Tests for configuration loading, validation, and hashing."""

import pytest

from videoground.config import (
    PipelineConfig,
    config_from_dict,
    load_config,
)
from videoground.errors import ConfigError


def test_defaults_validate():
    config = PipelineConfig()
    config.validate()
    assert config.seed == 0
    assert config.scenes.threshold == 27.0
    assert config.scenes.min_len == 15
    assert config.audio.window_s == 30.0
    assert config.audio.min_language_prob == 0.5
    assert config.audio.music_ratio == 2.0
    assert config.grounding.iou_gate == 0.3
    assert config.grounding.sim_floor == 0.25
    assert config.features.num_frames == 100
    assert config.eval.retries == 3


def test_config_from_dict_overrides():
    config = config_from_dict({
        "seed": 9,
        "scenes": {"threshold": 30.0},
        "grounding": {"matcher": "llm"},
    })
    assert config.seed == 9
    assert config.scenes.threshold == 30.0
    assert config.scenes.min_len == 15  # untouched default
    assert config.grounding.matcher == "llm"


def test_unknown_top_level_key_rejected():
    with pytest.raises(ConfigError):
        config_from_dict({"sceness": {}})


def test_unknown_section_key_rejected():
    with pytest.raises(ConfigError):
        config_from_dict({"scenes": {"thresh": 30.0}})


def test_bad_values_rejected():
    with pytest.raises(ConfigError):
        config_from_dict({"scenes": {"threshold": -1.0}}).validate()
    with pytest.raises(ConfigError):
        config_from_dict({"audio": {"music_ratio": 0.0}}).validate()
    with pytest.raises(ConfigError):
        config_from_dict({"grounding": {"matcher": "psychic"}}).validate()
    with pytest.raises(ConfigError):
        config_from_dict({"eval": {"retries": 0}}).validate()
    with pytest.raises(ConfigError):
        config_from_dict({"seed": True})
    with pytest.raises(ConfigError):
        config_from_dict({"seed": "zero"})


def test_config_hash_stable_and_sensitive():
    a = PipelineConfig()
    b = PipelineConfig()
    assert a.config_hash == b.config_hash
    assert len(a.config_hash) == 16
    c = config_from_dict({"scenes": {"threshold": 30.0}})
    assert c.config_hash != a.config_hash


def test_to_dict_roundtrip():
    config = config_from_dict({"seed": 3, "audio": {"window_s": 10.0}})
    back = config_from_dict(config.to_dict())
    assert back == config
    assert back.config_hash == config.config_hash


def test_load_config_yaml(tmp_path):
    path = tmp_path / "conf.yaml"
    path.write_text("seed: 4\nscenes:\n  min_len: 10\n")
    config = load_config(str(path))
    assert config.seed == 4
    assert config.scenes.min_len == 10


def test_load_config_none_gives_defaults():
    assert load_config(None) == PipelineConfig()


def test_load_config_rejects_non_mapping(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("- just\n- a\n- list\n")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_grounding_config_to_options():
    config = config_from_dict({"grounding": {"with_masks": True,
                                             "sim_floor": 0.5}})
    options = config.grounding.to_options()
    assert options.with_masks is True
    assert options.sim_floor == 0.5
    assert options.iou_gate == 0.3


def test_backend_endpoints_and_env_override(monkeypatch):
    config = config_from_dict({"backends": {"base_url": "http://h:1"}})
    endpoints = config.backends.endpoints()
    assert endpoints["chat"].url == "http://h:1/v1/chat"
    monkeypatch.setenv("VIDEOGROUND_ENDPOINT_CHAT", "http://other:2/v1/chat")
    overridden = config.backends.endpoints()
    assert overridden["chat"].url == "http://other:2/v1/chat"
    assert overridden["detect"].url == "http://h:1/v1/detect"


def test_backend_url_table_override():
    config = config_from_dict({
        "backends": {"urls": {"asr": "http://asr-host:9/v1/asr"}},
    })
    endpoints = config.backends.endpoints()
    assert endpoints["asr"].url == "http://asr-host:9/v1/asr"


def test_backends_reject_unknown_url_kind():
    with pytest.raises(ConfigError):
        config_from_dict({"backends": {"urls": {"summon": "http://x"}}}).validate()
