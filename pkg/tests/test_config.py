import pytest

from seine.config import build_config, parse_config_file
from seine.errors import ConfigError
from seine.synthgen import SynthConfig
from seine.trainer import TrainConfig


def test_parse_config_file(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\nmax_steps = 12\n\nlearning_rate=0.5 # inline\n")
    assert parse_config_file(p) == {"max_steps": "12", "learning_rate": "0.5"}
    bad = tmp_path / "bad.cfg"
    bad.write_text("just words\n")
    with pytest.raises(ConfigError, match="key = value"):
        parse_config_file(bad)


def test_build_config_precedence(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("max_steps = 12\nbatch_size = 9\n")
    cfg = build_config(TrainConfig, p, {"batch_size": "17"})
    assert cfg.max_steps == 12
    assert cfg.batch_size == 17            # override beats file
    assert cfg.fanout == 50                # untouched default


def test_build_config_type_coercion():
    cfg = build_config(TrainConfig, None,
                       {"learning_rate": "1e-3", "use_edge_features": "false",
                        "norm_position": "none"})
    assert cfg.learning_rate == 1e-3
    assert cfg.use_edge_features is False
    assert cfg.norm_position == "none"
    cfg2 = build_config(SynthConfig, None, {"n_users": "500"})
    assert cfg2.n_users == 500


def test_build_config_rejects_unknown_and_badly_typed():
    with pytest.raises(ConfigError, match="unknown config key"):
        build_config(TrainConfig, None, {"learnign_rate": "0.1"})
    with pytest.raises(ConfigError, match="cannot parse"):
        build_config(TrainConfig, None, {"max_steps": "soon"})
    with pytest.raises(ConfigError, match="cannot parse"):
        build_config(TrainConfig, None, {"use_edge_features": "maybe"})
