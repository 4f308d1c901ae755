"""
Tests for RunConfig and the process settings.
"""
import pytest

from src.config.run_config import DEFAULT_CONFIG, RunConfig
from src.config.settings import get_settings
from src.utils.error_handling import ConfigError, UsageError


class TestRunConfig:
    """Tests for the RunConfig model and its text format."""

    def test_defaults(self):
        config = RunConfig.create_default()
        assert config == DEFAULT_CONFIG
        assert config.target_spacing_mm == (1.5, 1.5, 1.5)
        assert (config.window_lo_hu, config.window_hi_hu) == (-1000, 400)
        assert config.crop_size == (160, 160, 160)
        assert config.segmentation_threshold_hu == -320
        assert config.close_radius == 2
        assert config.connectivity == 6
        assert config.threads == 1
        assert config.seed == 0

    def test_text_round_trip(self):
        config = RunConfig(target_spacing_mm=(1.25, 0.7, 0.7), crop_size=(96, 128, 128),
                           window_lo_hu=-1200, window_hi_hu=600, connectivity=26, threads=3, seed=11)
        assert RunConfig.from_text(config.to_text()) == config

    def test_text_layout(self):
        lines = RunConfig().to_text().splitlines()
        assert lines[0] == "target_spacing_mm = 1.5,1.5,1.5"
        assert "crop_size = 160,160,160" in lines
        assert "connectivity = 6" in lines

    def test_from_text_comments_and_broadcast(self):
        config = RunConfig.from_text(
            "# lung protocol\n"
            "\n"
            "target_spacing_mm = 2   # isotropic\n"
            "crop_size = 64, 96, 96\n"
            "threads = 4\n"
        )
        assert config.target_spacing_mm == (2.0, 2.0, 2.0)
        assert config.crop_size == (64, 96, 96)
        assert config.threads == 4
        assert config.window_lo_hu == -1000

    def test_from_dict(self):
        config = RunConfig.from_dict({"crop_size": 32, "seed": 5})
        assert config.crop_size == (32, 32, 32)
        assert config.to_dict()["seed"] == 5

    def test_is_frozen(self):
        with pytest.raises(Exception):
            DEFAULT_CONFIG.threads = 8

    @pytest.mark.parametrize("text", [
        "connectivity = 8",
        "window_lo_hu = 500",
        "target_spacing_mm = 0",
        "crop_size = 10,10",
        "threads = 0",
        "close_radius = -1",
        "colour = blue",
        "seed",
        "= 3",
    ])
    def test_invalid_text(self, text):
        with pytest.raises(ConfigError):
            RunConfig.from_text(text)

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="duplicate key 'seed'"):
            RunConfig.from_text("seed = 1\nthreads = 2\nseed = 3\n")

    def test_config_error_is_usage_error(self):
        with pytest.raises(UsageError):
            RunConfig.from_dict({"connectivity": 4})

    def test_from_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("seed = 9\n")
        assert RunConfig.from_file(path).seed == 9
        with pytest.raises(ConfigError):
            RunConfig.from_file(tmp_path / "missing.cfg")


class TestSettings:
    """Tests for the environment-driven settings."""

    def test_defaults(self, monkeypatch):
        monkeypatch.delenv("LUNGRISK_LOG_LEVEL", raising=False)
        monkeypatch.delenv("LUNGRISK_DEFAULT_THREADS", raising=False)
        settings = get_settings()
        assert settings.LOG_LEVEL == "INFO"
        assert settings.DEFAULT_THREADS == 1

    def test_env_prefix(self, monkeypatch):
        monkeypatch.setenv("LUNGRISK_LOG_LEVEL", "DEBUG")
        monkeypatch.setenv("LUNGRISK_DEFAULT_THREADS", "6")
        settings = get_settings()
        assert settings.LOG_LEVEL == "DEBUG"
        assert settings.DEFAULT_THREADS == 6
