import pytest

from marsseg.config import TrainConfig, flatten, from_flat, from_text, load_config, parse_text, to_text
from marsseg.errors import ConfigError
from marsseg.network import NetworkConfig


def test_text_round_trip():
    cfg = TrainConfig()
    cfg.optim.lr = 0.0025
    cfg.train.max_steps = 40
    cfg.augment.crop = (64, 96)
    text = to_text(cfg)
    assert from_text(text) == cfg
    assert to_text(from_text(text)) == text


def test_full_preset_round_trip():
    cfg = TrainConfig(network=NetworkConfig.full(9))
    assert from_text(to_text(cfg)).network == cfg.network


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigError, match="optimizer.lr"):
        from_flat({"optimizer.lr": "0.1"})


def test_bad_value_is_rejected():
    with pytest.raises(ConfigError):
        from_flat({"train.batch_size": "eight"})
    with pytest.raises(ConfigError):
        from_flat({"train.adaptive_weights": "yes"})


def test_parse_text_errors_carry_line_numbers():
    with pytest.raises(ConfigError, match=":2:"):
        parse_text("optim.lr = 0.1\nnot a pair\n", "cfg.txt")


def test_preset_rebuilds_network():
    cfg = from_flat({"network.preset": "micro", "network.num_classes": "3", "network.encoder.stage_channels": "8,16,32"})
    assert cfg.network == NetworkConfig.micro(3, (8, 16, 32))
    with pytest.raises(ConfigError):
        from_flat({"network.preset": "huge"})


def test_nested_keys_are_addressable():
    keys = flatten(TrainConfig())
    for key in ("optim.lr", "network.mini_aspp.0.branch_channels", "network.sppm.pyramid_sizes", "train.val_source"):
        assert key in keys


def test_overrides_and_relative_paths(tmp_path):
    (tmp_path / "sub").mkdir()
    path = tmp_path / "sub" / "train.cfg"
    path.write_text("# comment\noptim.lr = 0.01\ndata.root = ../data\ntrain.checkpoint = none\n")
    cfg = load_config(path, {"optim.lr": "0.02"})
    assert cfg.optim.lr == 0.02
    assert cfg.data.root == str((tmp_path / "data").resolve())
    assert cfg.train.checkpoint is None


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.cfg")
