import json

import pytest

from app.config.run_config import RUN_CONFIG_FILENAME, RunConfig
from app.utils.errors import ConfigError, IoFailure


def test_desk_preset_defaults():
    cfg = RunConfig.resolve()
    slm = cfg.slm_config()
    assert (slm.d_model, slm.n_heads, slm.ff_dim, slm.gru_hidden, slm.gru_layers) == (16, 2, 32, 16, 2)
    assert (slm.window_size, slm.frame_step) == (60, 30)
    clm = cfg.clm_config(["a", "b", "c"])
    assert (clm.gru_layers, clm.window_size, clm.n_classes) == (1, 90, 3)
    assert clm.class_labels == ["a", "b", "c"]
    train = cfg.train_config()
    assert (train.epochs, train.patience, train.p_users, train.k_windows) == (15, 5, 4, 4)
    assert (cfg.slm_span, cfg.clm_span) == (30.0, 30.0)


def test_full_preset_uses_full_size_models():
    cfg = RunConfig.resolve(preset="full")
    assert cfg.slm_config().d_model == 320
    assert cfg.clm_config([f"u{i}" for i in range(49)]).d_model == 704
    assert (cfg.slm_span, cfg.clm_span) == (600.0, 150.0)
    assert cfg.train_config().epochs == 100


def test_flags_override_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"seed": 3, "threads": 2, "slm": {"gru_hidden": 8, "embedding_size": 8}}),
                    encoding="utf-8")
    cfg = RunConfig.resolve(path, seed=11, threads=None)
    assert cfg.seed == 11
    assert cfg.threads == 2
    assert cfg.slm_config().gru_hidden == 8
    assert cfg.slm_config().init_seed == 11
    assert cfg.train_config(epochs=2).seed == 11


def test_invalid_values_are_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.resolve(threads=0)
    with pytest.raises(ConfigError):
        RunConfig.resolve(slm={"d_model": 10, "n_heads": 3}).slm_config()
    with pytest.raises(ConfigError):
        RunConfig.resolve(train={"epochs": 0}).train_config()
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigError):
        RunConfig.resolve(bad)
    bad.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigError):
        RunConfig.resolve(bad)
    with pytest.raises(IoFailure):
        RunConfig.resolve(tmp_path / "missing.json")


def test_split_spec_follows_model_windows():
    cfg = RunConfig.resolve()
    spec = cfg.split_spec("temporal", cfg.clm_config(["a", "b"]))
    assert (spec.mode, spec.window_size, spec.frame_step) == ("temporal", 90, 30)
    assert spec.user_weights == (23, 9, 17)


def test_written_config_round_trips(tmp_path):
    cfg = RunConfig.resolve(seed=5, preset="desk", vote_k=3)
    path = cfg.write(tmp_path / "stage")
    assert path.name == RUN_CONFIG_FILENAME
    assert RunConfig.resolve(path) == cfg


def test_bad_split_settings_fail_at_resolve(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.resolve(temporal_fractions=[0.5, 0.5, 0.5])
    with pytest.raises(ConfigError):
        RunConfig.resolve(temporal_fractions=[0.5, 0.5])
    with pytest.raises(ConfigError):
        RunConfig.resolve(user_weights=[0, 0, 0])
