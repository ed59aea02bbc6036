import pytest

from pdrlm.config import (ConfigError, RunConfig, config_diff, config_text,
                          parse_config)


def test_round_trip_through_text():
    cfg = RunConfig(train_path="a.txt", layer_dims=(12, 8), emb_dim=8,
                    lambda_pdr=0.25, finetune=False, seed=99)
    assert parse_config(config_text(cfg)) == cfg


def test_parse_comments_and_blanks():
    cfg = parse_config("# comment\n\nlevel = char\nseed = 5  # inline\n")
    assert cfg.level == "char"
    assert cfg.seed == 5


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("not_a_key = 3\n")


def test_bad_value_rejected_with_location():
    with pytest.raises(ConfigError, match=":1"):
        parse_config("epochs = many\n")


def test_missing_equals_rejected():
    with pytest.raises(ConfigError, match="key = value"):
        parse_config("just some words\n")


def test_bool_and_tuple_parsing():
    cfg = parse_config("tied = false\nlayer_dims = 6, 6, 4\nemb_dim = 4\n")
    assert cfg.tied is False
    assert cfg.layer_dims == (6, 6, 4)


def test_validate_rejects_mismatched_width():
    cfg = RunConfig(layer_dims=(8, 8), emb_dim=4)
    with pytest.raises(ConfigError, match="emb_dim"):
        cfg.validate()


def test_validate_rejects_bad_level():
    with pytest.raises(ConfigError, match="level"):
        RunConfig(level="subword").validate()


def test_config_diff():
    a = RunConfig()
    b = RunConfig(lambda_pdr=0.0, alpha=1.0)
    d = config_diff(a, b)
    assert set(d) == {"lambda_pdr", "alpha"}
    assert d["lambda_pdr"] == (0.001, 0.0)
