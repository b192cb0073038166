#!/usr/bin/env python3
"""
Configuration loader for split-bench.

Loads configuration from config.yaml with defaults fallback.
"""

import copy
import logging
import sys
from pathlib import Path
from typing import Any

import yaml

from errors import ConfigError

ALL_STRATEGIES = [
    "held_out_speaker",
    "held_out_session",
    "random",
    "heuristic_duration",
    "heuristic_pitch",
    "heuristic_intensity",
    "heuristic_n_tokens",
    "heuristic_n_types",
    "heuristic_perplexity",
    "adversarial",
]

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


# Default configuration
DEFAULT_CONFIG = {
    "workspace": ".",  # Base for relative paths
    "output_dir": "out",
    "manifest": None,
    "lm_text": None,
    "seed": 1234,
    "strategies": list(ALL_STRATEGIES),
    "split": {
        "target_fraction": 0.20,
        "random_splits": None,  # None: one per speaker/session group
        "adversarial_restarts": 5,
        "adversarial_max_stall": 2000,
        "adversarial_band": [0.18, 0.22],
        "validity_band": [0.17, 0.25],
    },
    "audio": {
        "pitch_window_s": 0.040,
        "pitch_hop_s": 0.010,
        "pitch_floor_hz": 50.0,
        "pitch_ceiling_hz": 500.0,
        "voicing_threshold": 0.3,
        "intensity_floor_db": -20.0,
    },
    "regression": {
        "alpha": 0.05,
        "wer_cap": 500.0,
    },
    "hypotheses": {
        "hyp_dir": None,
        "mock_asr": None,  # ground-truth JSON written by `simulate`
    },
    "workers": 1,
    "plot": True,
    "logging": {
        "level": "INFO",
        "file": None,
    },
}


class Config:
    """Configuration manager for split-bench."""

    def __init__(self, config_path: Path | None = None, overrides: dict | None = None):
        """Initialize configuration from file or defaults, then apply overrides."""
        self._config = copy.deepcopy(DEFAULT_CONFIG)

        if config_path is None:
            config_path = Path(__file__).parent / "config.yaml"

        if config_path.exists():
            self._load_from_file(config_path)

        if overrides:
            self._merge_config(self._config, overrides)

        # Resolve paths
        self._workspace = Path(self._config["workspace"]).expanduser()

    def _load_from_file(self, config_path: Path):
        """Load configuration from YAML file."""
        try:
            with open(config_path, "r", encoding="utf-8") as f:
                user_config = yaml.safe_load(f)
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"could not load config {config_path}: {e}") from e

        if user_config is None:
            return
        if not isinstance(user_config, dict):
            raise ConfigError(f"config {config_path} must be a mapping at top level")
        self._merge_config(self._config, user_config)

    def _merge_config(self, base: dict, override: dict):
        """Recursively merge override into base config."""
        for key, value in override.items():
            if key in base and isinstance(base[key], dict) and isinstance(value, dict):
                self._merge_config(base[key], value)
            else:
                base[key] = value

    def _resolve(self, value: str | Path | None) -> Path | None:
        if value is None:
            return None
        path = Path(value).expanduser()
        return path if path.is_absolute() else self._workspace / path

    @property
    def workspace(self) -> Path:
        """Get workspace directory."""
        return self._workspace

    @property
    def output_dir(self) -> Path:
        """Get the directory all artifacts are written to."""
        return self._resolve(self._config["output_dir"])

    @property
    def manifest(self) -> Path | None:
        """Get the JSON Lines manifest path."""
        return self._resolve(self._config["manifest"])

    @property
    def lm_text(self) -> Path | None:
        """Get the external LM training text path."""
        return self._resolve(self._config["lm_text"])

    @property
    def seed(self) -> int:
        """Get the master seed."""
        return int(self._config["seed"])

    @property
    def strategies(self) -> list[str]:
        """Get enabled strategies, in canonical order."""
        enabled = set(self._config["strategies"])
        return [s for s in ALL_STRATEGIES if s in enabled]

    @property
    def target_fraction(self) -> float:
        return float(self._config["split"]["target_fraction"])

    @property
    def random_splits(self) -> int | None:
        """Get the number of random splits (None matches the group count)."""
        value = self._config["split"]["random_splits"]
        return None if value is None else int(value)

    @property
    def adversarial_restarts(self) -> int:
        return int(self._config["split"]["adversarial_restarts"])

    @property
    def adversarial_max_stall(self) -> int:
        return int(self._config["split"]["adversarial_max_stall"])

    @property
    def adversarial_band(self) -> tuple[float, float]:
        low, high = self._config["split"]["adversarial_band"]
        return float(low), float(high)

    @property
    def validity_band(self) -> tuple[float, float]:
        low, high = self._config["split"]["validity_band"]
        return float(low), float(high)

    @property
    def audio(self) -> dict[str, float]:
        """Get pitch/intensity analysis parameters."""
        return dict(self._config["audio"])

    @property
    def regression_alpha(self) -> float:
        return float(self._config["regression"]["alpha"])

    @property
    def wer_cap(self) -> float:
        """Get the per-utterance WER winsorization cap (percent)."""
        return float(self._config["regression"]["wer_cap"])

    @property
    def hyp_dir(self) -> Path | None:
        """Get the directory of per-split hypothesis files."""
        return self._resolve(self._config["hypotheses"]["hyp_dir"])

    @property
    def mock_asr(self) -> Path | None:
        """Get the ground-truth file that drives the mock recognizer."""
        return self._resolve(self._config["hypotheses"]["mock_asr"])

    @property
    def workers(self) -> int:
        return max(1, int(self._config["workers"]))

    @property
    def plot(self) -> bool:
        return bool(self._config["plot"])

    @property
    def log_level(self) -> str:
        """Get logging level."""
        return self._config["logging"]["level"]

    @property
    def log_file(self) -> Path | None:
        """Get log file path if specified."""
        log_file = self._config["logging"]["file"]
        return Path(log_file).expanduser() if log_file else None

    def validate(self):
        """Check the invariants an experiment run relies on."""
        unknown = set(self._config["strategies"]) - set(ALL_STRATEGIES)
        if unknown:
            raise ConfigError(f"unknown strategies: {', '.join(sorted(unknown))}")
        if not self.strategies:
            raise ConfigError("at least one strategy must be enabled")
        if self.manifest is None:
            raise ConfigError("no manifest configured")
        if not self.manifest.exists():
            raise ConfigError(f"manifest not found: {self.manifest}")
        if self.lm_text is None:
            raise ConfigError("no LM text configured")
        if not self.lm_text.exists():
            raise ConfigError(f"LM text not found: {self.lm_text}")
        if self.hyp_dir is None and self.mock_asr is None:
            raise ConfigError("either a hypothesis directory or a mock-ASR truth file is required")
        if self.hyp_dir is not None and not self.hyp_dir.is_dir():
            raise ConfigError(f"hypothesis directory not found: {self.hyp_dir}")
        if self.mock_asr is not None and not self.mock_asr.exists():
            raise ConfigError(f"mock-ASR truth file not found: {self.mock_asr}")
        if not 0.0 < self.target_fraction < 1.0:
            raise ConfigError("target_fraction must lie strictly between 0 and 1")
        for name, (low, high) in (
            ("adversarial_band", self.adversarial_band),
            ("validity_band", self.validity_band),
        ):
            if not 0.0 < low <= high < 1.0:
                raise ConfigError(f"{name} must satisfy 0 < low <= high < 1")
        if self.adversarial_restarts < 1:
            raise ConfigError("adversarial_restarts must be >= 1")
        if self.random_splits is not None and self.random_splits < 1:
            raise ConfigError("random_splits must be >= 1")

    def get(self, key: str, default: Any = None) -> Any:
        """Get a configuration value by key."""
        return self._config.get(key, default)


def setup_logging(level: str = "INFO", log_file: Path | None = None):
    """Configure the root logger for CLI runs."""
    handlers: list[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )


# Global config instance (lazy loaded)
_config: Config | None = None


def get_config() -> Config:
    """Get the global configuration instance."""
    global _config
    if _config is None:
        _config = Config()
    return _config


def reload_config(config_path: Path | None = None, overrides: dict | None = None) -> Config:
    """Reload configuration from file."""
    global _config
    _config = Config(config_path, overrides)
    return _config
