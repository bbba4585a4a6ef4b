"""
Pipeline configuration - defaults, JSON files and environment overrides
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, Optional, Tuple

from .errors import ConfigError

logger = logging.getLogger(__name__)

SEED_ENV_VAR = "OAVM_SEED"


@dataclass
class PipelineConfig:
    """Everything that shapes one inference run"""
    C: int = 128
    w: int = 15
    ks: int = 3
    N: int = 8
    L: int = 3
    p1: float = 0.4
    p2: float = 0.5
    seed: int = 0
    backbone_channels: Tuple[int, ...] = (16, 24, 32, 64)
    decoder_channels: Tuple[int, ...] = (64, 32, 16)
    hidden_mult: int = 2
    bit_depth: int = 8
    use_oqg: bool = True
    use_ogcr: bool = True
    use_guidance: bool = True
    save_attention: bool = False
    debug_mode: bool = False
    input_manifest: Optional[str] = None
    init_mask: Optional[str] = None
    output_dir: Optional[str] = None

    def __post_init__(self):
        self.backbone_channels = tuple(int(c) for c in self.backbone_channels)
        self.decoder_channels = tuple(int(c) for c in self.decoder_channels)

    def validate(self) -> "PipelineConfig":
        """Raise ConfigError on the first out-of-range value"""
        if self.C <= 0 or self.C % 4:
            raise ConfigError(f"C must be a positive multiple of 4, got {self.C}")
        for name in ("w", "ks"):
            value = getattr(self, name)
            if value < 1 or value % 2 == 0:
                raise ConfigError(f"{name} must be odd and >= 1, got {value}")
        if self.N < 1 or self.L < 1:
            raise ConfigError(f"N and L must be >= 1, got N={self.N}, L={self.L}")
        for name in ("p1", "p2"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        if len(self.backbone_channels) != 4 or min(self.backbone_channels) < 1:
            raise ConfigError(f"backbone_channels needs 4 positive widths, got {self.backbone_channels}")
        if len(self.decoder_channels) != 3 or min(self.decoder_channels) < 1:
            raise ConfigError(f"decoder_channels needs 3 positive widths, got {self.decoder_channels}")
        if self.hidden_mult < 1:
            raise ConfigError(f"hidden_mult must be >= 1, got {self.hidden_mult}")
        if self.bit_depth not in (8, 16):
            raise ConfigError(f"bit_depth must be 8 or 16, got {self.bit_depth}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        return self

    @property
    def maxval(self) -> int:
        return 255 if self.bit_depth == 8 else 65535

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["backbone_channels"] = list(self.backbone_channels)
        data["decoder_channels"] = list(self.decoder_channels)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")
        try:
            return cls(**data).validate()
        except TypeError as e:
            raise ConfigError(f"invalid configuration: {e}")


class ConfigManager:
    """Loads configuration files over the defaults"""

    def __init__(self, config_file: Optional[str] = None):
        self.config_file = config_file
        self.settings = self._load_settings()

    def _load_settings(self) -> Dict[str, Any]:
        """Defaults, then the JSON file, then the environment"""
        settings = PipelineConfig().to_dict()

        if self.config_file:
            if not os.path.exists(self.config_file):
                raise ConfigError(f"configuration file not found: {self.config_file}")
            try:
                with open(self.config_file, "r", encoding="utf-8") as f:
                    loaded = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{self.config_file}: invalid JSON ({e.msg} at line {e.lineno})")
            if not isinstance(loaded, dict):
                raise ConfigError(f"{self.config_file}: top level must be an object")
            settings.update(loaded)
            logger.debug("Loaded configuration from %s", self.config_file)

        env_seed = os.environ.get(SEED_ENV_VAR)
        if env_seed is not None and env_seed.strip():
            try:
                settings["seed"] = int(env_seed, 0)
            except ValueError:
                raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}")
            logger.info("Seed overridden by %s=%s", SEED_ENV_VAR, settings["seed"])
        return settings

    def get_setting(self, key: str, default=None) -> Any:
        return self.settings.get(key, default)

    def set_setting(self, key: str, value: Any):
        logger.debug("Setting %s = %r", key, value)
        self.settings[key] = value

    def to_config(self, **overrides) -> PipelineConfig:
        """Effective PipelineConfig; keyword overrides set to None are ignored"""
        data = dict(self.settings)
        data.update({k: v for k, v in overrides.items() if v is not None})
        return PipelineConfig.from_dict(data)

    def save_settings(self, path: str):
        """Write the current settings as JSON"""
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.settings, f, indent=2, sort_keys=True)
            f.write("\n")
