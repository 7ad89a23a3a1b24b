"""Tests for src.config module."""

from pathlib import Path

import pytest

from src.config import TrainConfig


class TestTrainConfig:
    """Tests for TrainConfig validation."""

    def test_defaults_are_valid(self):
        """Test that the default config passes validation."""
        cfg = TrainConfig()
        assert cfg.discount == 0.95
        assert cfg.burn_in == 0

    @pytest.mark.parametrize(
        "overrides,message",
        [
            ({"discount": 1.0}, "discount"),
            ({"batch_size": 0}, "batch_size must be positive"),
            ({"burn_in": 4}, "burn_in must be 0"),
            ({"env": "maze"}, "env must be one of"),
            ({"partition": "ambiguous"}, "partition must be one of"),
            ({"aggregator": "median"}, "aggregator must be one of"),
            ({"epsilon_decay_fraction": 1.5}, "epsilon_decay_fraction"),
        ],
    )
    def test_rejects_invalid(self, overrides, message):
        """Test each validation rule."""
        with pytest.raises(ValueError, match=message):
            TrainConfig(**overrides)

    def test_paper_scale(self):
        """Test that the published scale widens the network and lengthens training."""
        cfg = TrainConfig(beta=-1.0).paper_scale()
        assert (cfg.width, cfg.max_learner_steps, cfg.ensemble_size) == (128, 1_000_000, 20)
        assert cfg.beta == -1.0

    def test_dict_round_trip(self):
        """Test to_dict and from_dict."""
        cfg = TrainConfig(env="grid", gray_reward=0.5)
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg

    def test_from_dict_unknown_key(self):
        """Test that unknown dict keys are rejected."""
        with pytest.raises(ValueError, match="unknown config keys: colour"):
            TrainConfig.from_dict({"colour": "blue"})


class TestFromFile:
    """Tests for TrainConfig.from_file."""

    def test_overrides_and_defaults(self, tmp_path):
        """Test that listed keys override and the rest keep defaults."""
        path = tmp_path / "run.env"
        path.write_text("# experiential run\nPROBABILITIES=experiential\nBETA=-0.5\nDETERMINISTIC=true\nWIDTH=32\n")
        cfg = TrainConfig.from_file(path)
        assert cfg.probabilities == "experiential"
        assert cfg.beta == -0.5
        assert cfg.deterministic is True
        assert cfg.width == 32
        assert cfg.batch_size == TrainConfig().batch_size

    def test_unknown_key(self, tmp_path):
        """Test that a misspelled key fails the load."""
        path = tmp_path / "run.env"
        path.write_text("LEARNIG_RATE=0.01\n")
        with pytest.raises(ValueError, match="unknown config key: LEARNIG_RATE"):
            TrainConfig.from_file(path)

    def test_invalid_value(self, tmp_path):
        """Test that an unparsable value names its key."""
        path = tmp_path / "run.env"
        path.write_text("BATCH_SIZE=lots\n")
        with pytest.raises(ValueError, match="invalid value for BATCH_SIZE"):
            TrainConfig.from_file(path)

    def test_invalid_bool(self, tmp_path):
        """Test that booleans accept only the usual spellings."""
        path = tmp_path / "run.env"
        path.write_text("DETERMINISTIC=maybe\n")
        with pytest.raises(ValueError, match="invalid value for DETERMINISTIC"):
            TrainConfig.from_file(path)

    def test_missing_file(self, tmp_path):
        """Test that a missing config raises FileNotFoundError."""
        with pytest.raises(FileNotFoundError, match="Config file not found"):
            TrainConfig.from_file(tmp_path / "absent.env")

    def test_shipped_configs_load(self):
        """Test that every config under configs/ is valid."""
        configs = sorted((Path(__file__).parent.parent / "configs").glob("*.env"))
        assert configs
        for path in configs:
            TrainConfig.from_file(path)
