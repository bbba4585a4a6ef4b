"""
Tests for configuration loading, run logging and the version stamp
"""

import json
import logging

import pytest

from src.core.config_manager import SEED_ENV_VAR, ConfigManager, PipelineConfig
from src.core.errors import ConfigError
from src.core.logger import RunLogger
from src.core.version_manager import VersionManager


class TestPipelineConfig:

    def test_defaults(self):
        cfg = PipelineConfig().validate()
        assert (cfg.C, cfg.w, cfg.ks, cfg.N, cfg.L, cfg.p1, cfg.p2) == (128, 15, 3, 8, 3, 0.4, 0.5)
        assert cfg.maxval == 255

    def test_dict_round_trip(self):
        cfg = PipelineConfig(ks=7, backbone_channels=(8, 8, 16, 16))
        assert PipelineConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg

    @pytest.mark.parametrize("change", [{"C": 30}, {"w": 4}, {"ks": 0}, {"p1": 1.2}, {"N": 0},
                                        {"bit_depth": 12}, {"decoder_channels": [8, 8]}])
    def test_out_of_range(self, change):
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict({**PipelineConfig().to_dict(), **change})

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="window"):
            PipelineConfig.from_dict({"window": 3})


class TestConfigManager:

    def test_file_over_defaults(self, tmp_path, monkeypatch):
        monkeypatch.delenv(SEED_ENV_VAR, raising=False)
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"ks": 5, "seed": 9}))
        cfg = ConfigManager(str(path)).to_config()
        assert cfg.ks == 5 and cfg.seed == 9 and cfg.w == 15

    def test_env_seed_overrides_file(self, tmp_path, monkeypatch):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"seed": 9}))
        monkeypatch.setenv(SEED_ENV_VAR, "42")
        assert ConfigManager(str(path)).to_config().seed == 42

    def test_bad_env_seed(self, monkeypatch):
        monkeypatch.setenv(SEED_ENV_VAR, "abc")
        with pytest.raises(ConfigError):
            ConfigManager()

    def test_overrides_ignore_none(self, monkeypatch):
        monkeypatch.delenv(SEED_ENV_VAR, raising=False)
        cfg = ConfigManager().to_config(ks=7, seed=None)
        assert cfg.ks == 7 and cfg.seed == 0

    def test_invalid_json_and_missing_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{")
        with pytest.raises(ConfigError):
            ConfigManager(str(path))
        with pytest.raises(ConfigError):
            ConfigManager(str(tmp_path / "missing.json"))

    def test_save_settings(self, tmp_path, monkeypatch):
        monkeypatch.delenv(SEED_ENV_VAR, raising=False)
        manager = ConfigManager()
        manager.set_setting("ks", 5)
        manager.save_settings(str(tmp_path / "out" / "c.json"))
        assert ConfigManager(str(tmp_path / "out" / "c.json")).get_setting("ks") == 5


class TestRunLogger:

    def test_records_without_timestamps(self):
        run_logger = RunLogger("t")
        run_logger.log_frame(1, 0.25, 10)
        run_logger.log_guidance(1, 4, 16)
        assert run_logger.records[0] == {"type": "FRAME_INFERRED", "details": "frame 1: mean alpha 0.2500, "
                                         "mask pixels 10", "frame": 1, "alpha_mean": 0.25, "mask_pixels": 10}
        assert len(run_logger.activities("GUIDANCE")) == 1

    def test_empty_guidance_warns(self, caplog):
        run_logger = RunLogger("t")
        with caplog.at_level(logging.WARNING):
            run_logger.log_guidance(3, 0, 16)
        assert "unmasked fallback" in caplog.text


class TestVersion:

    def test_reads_stamp(self, tmp_path):
        path = tmp_path / "version.json"
        path.write_text(json.dumps({"version": "2.5", "build_number": 7}))
        assert VersionManager(str(path)).get_current_version() == "2.5"

    def test_missing_stamp(self, tmp_path):
        assert VersionManager(str(tmp_path / "none.json")).get_current_version() == "0.0"
