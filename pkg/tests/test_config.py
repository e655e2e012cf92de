import pytest

from hamam.config import TrainConfig, load_config, parse_config_text, parse_value
from hamam.errors import ConfigError


def test_defaults_are_published_values():
    c = TrainConfig()
    assert (c.epochs, c.batch_size, c.fold_count) == (6, 8, 5)
    assert (c.backbone_max_lr, c.head_max_lr, c.warmup_fraction) == (1e-5, 1e-4, 0.1)
    assert (c.dropout_rate, c.dropout_samples) == (0.5, 5)
    assert c.class_weights == (1.0, 1.0, 0.1)
    assert c.neutral_threshold is None and c.head_variant == "hamam"


def test_text_round_trip():
    c = TrainConfig(seed=7, neutral_threshold=0.55, class_weights=(2, 1, 0.5), grad_clip=None, entity_masking=False)
    assert TrainConfig.from_dict(parse_config_text(c.to_text())) == c


def test_hash_tracks_content():
    assert TrainConfig().hash == TrainConfig().hash
    assert TrainConfig(seed=1).hash != TrainConfig().hash


@pytest.mark.parametrize(
    "changes",
    [
        {"fold_count": 1},
        {"warmup_fraction": 0.0},
        {"warmup_fraction": 1.0},
        {"class_weights": (1, 0, 1)},
        {"dropout_rate": 1.0},
        {"head_variant": "cls"},
        {"neutral_threshold": 1.5},
        {"epochs": 0},
    ],
)
def test_invalid_values(changes):
    with pytest.raises(ConfigError):
        TrainConfig(**changes)


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="bogus"):
        parse_config_text("bogus = 1\n")
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"bogus": 1})


def test_comments_blank_lines_and_missing_keys(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("# comment\n\nepochs = 3   # trailing\nneutral_threshold = none\n", encoding="utf-8")
    c = load_config(path)
    assert c.epochs == 3 and c.neutral_threshold is None and c.batch_size == 8


def test_precedence_override_then_file_then_default(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("epochs = 3\nseed = 4\n", encoding="utf-8")
    c = load_config(path, {"seed": 9})
    assert (c.epochs, c.seed, c.batch_size) == (3, 9, 8)


def test_malformed_line_reports_number():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("epochs = 2\nno equals sign\n")


@pytest.mark.parametrize(
    "key,text,value",
    [
        ("entity_masking", "false", False),
        ("entity_masking", "yes", True),
        ("grad_clip", "none", None),
        ("class_weights", "1,1,0.1", (1.0, 1.0, 0.1)),
        ("pooling", "mean", "mean"),
        ("seed", "12", 12),
    ],
)
def test_parse_value(key, text, value):
    assert parse_value(key, text) == value


def test_parse_value_rejects_garbage():
    with pytest.raises(ConfigError):
        parse_value("epochs", "six")
