"""
File name: runconfig.py

Description: RunConfig loading. Values come from config/defaults.py, then an
optional INI file, then `--set section.key=value` overrides. Every value is
coerced to the type of its default and checked by building the owning
dataclass, so a bad config fails before any work starts.
"""

import configparser
import copy
import json
import os
from pathlib import Path

from dotenv import load_dotenv

from config.defaults import DEFAULTS
from errors import ConfigError

load_dotenv()

THREADS_ENV = "SPINESURF_THREADS"
CONFIG_ENV = "SPINESURF_CONFIG"
TRUE_WORDS = {"1", "true", "yes", "on"}
FALSE_WORDS = {"0", "false", "no", "off"}


def _coerce(section: str, key: str, text: str, default):
    where = f"[{section}] {key}"
    text = text.strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in TRUE_WORDS:
                return True
            if lowered in FALSE_WORDS:
                return False
            raise ValueError(f"expected a boolean, got '{text}'")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, list):
            items = json.loads(text) if text.startswith("[") else [v for v in text.replace(",", " ").split() if v]
            if default and isinstance(default[0], (int, float)) and not isinstance(default[0], bool):
                return [float(v) for v in items]
            return [str(v) for v in items]
        return text
    except (ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"Invalid value for {where}: {exc}") from exc


class RunConfig:
    """
    Sectioned run parameters.

    Access a section as a dict with `config["features"]` or a single value
    with `config.get("features", "beta")`.
    """

    def __init__(self, values: dict[str, dict] | None = None):
        self._values = copy.deepcopy(DEFAULTS) if values is None else values

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: list[str] | None = None,
             extra_files: list[str | Path] | None = None) -> "RunConfig":
        """
        Build a config from defaults, an optional INI file, further INI files
        (applied in order) and `section.key=value` overrides.

        When no path is given, SPINESURF_CONFIG (environment or .env) names the file, if set.
        """
        config = cls()
        path = path or os.getenv(CONFIG_ENV)
        if path:
            config.update_from_file(path)
        for extra in extra_files or []:
            config.update_from_file(extra)
        for item in overrides or []:
            config.set_override(item)
        config.validate()
        return config

    def update_from_file(self, path: str | Path) -> None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"Config file does not exist: {path}")
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"Cannot parse {path}: {exc}") from exc
        for section in parser.sections():
            for key, text in parser.items(section):
                self.set_value(section, key, text)

    def set_override(self, item: str) -> None:
        name, sep, text = item.partition("=")
        section, dot, key = name.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"Override must look like section.key=value, got '{item}'")
        self.set_value(section, key, text)

    def set_value(self, section: str, key: str, text: str) -> None:
        if section not in self._values:
            raise ConfigError(f"Unknown config section [{section}]")
        if key not in self._values[section]:
            raise ConfigError(f"Unknown config key '{key}' in [{section}]")
        self._values[section][key] = _coerce(section, key, text, DEFAULTS[section][key])

    def __getitem__(self, section: str) -> dict:
        return self._values[section]

    def get(self, section: str, key: str):
        return self._values[section][key]

    def sections(self) -> list[str]:
        return list(self._values)

    def to_dict(self) -> dict[str, dict]:
        return copy.deepcopy(self._values)

    # -------------------------------------------------------------- typed views

    def geometry(self):
        from geometry import ImageGeometry
        g = self["geometry"]
        return ImageGeometry(g["depth_min_m"], g["depth_max_m"], g["fov_rad"], g["n_rays"], g["n_samples"])

    def kinematics(self):
        from geometry import ScanKinematics
        g = self["geometry"]
        return ScanKinematics(g["sweep_axis"], g["sweep_pivot"], g["carriage_axis"])

    def log_gabor(self):
        from phase_symmetry import LogGaborParams
        f = self["features"]
        return LogGaborParams(f["n_scales"], f["n_orientations"], f["min_wavelength_px"], f["scale_mult"],
                              f["sigma_onf"], f["d_theta_sigma"], f["noise_t"], f["epsilon"])

    def confidence(self):
        from confidence_map import ConfidenceParams
        f = self["features"]
        return ConfidenceParams(f["alpha"], f["beta"], f["gamma"], f["solver_tol"], f["max_iters"], f["weight_floor"])

    def unet_spec(self):
        from unet import UNetSpec
        return UNetSpec.from_config(self["net"])

    def train_config(self):
        from training import TrainConfig
        return TrainConfig.from_config(self["train"])

    def scan_plan(self):
        from phantom import ScanPlan
        return ScanPlan.from_config(self["phantom"])

    def validate(self) -> None:
        """Construct every typed view once; their invariants become config errors."""
        checks = [self.geometry, self.kinematics, self.log_gabor, self.confidence, self.unet_spec,
                  self.train_config, self.scan_plan]
        for check in checks:
            try:
                check()
            except ValueError as exc:
                raise ConfigError(f"Invalid configuration: {exc}") from exc
        f = self["features"]
        if not 0.0 < f["sobel_threshold"] < 1.0:
            raise ConfigError("[features] sobel_threshold must lie in (0, 1)")
        if f["blur_kernel_px"] < 1:
            raise ConfigError("[features] blur_kernel_px must be >= 1")
        if self.get("geometry", "pixel_size_m") <= 0:
            raise ConfigError("[geometry] pixel_size_m must be positive")
        if self.get("labelgen", "sigma_px") <= 0:
            raise ConfigError("[labelgen] sigma_px must be positive")
        v = self["volume"]
        if v["mode"] not in ("max", "mean"):
            raise ConfigError("[volume] mode must be 'max' or 'mean'")
        if v["splat"] not in ("nearest", "trilinear"):
            raise ConfigError("[volume] splat must be 'nearest' or 'trilinear'")
        if not 0.0 < v["threshold"] < 1.0:
            raise ConfigError("[volume] threshold must lie in (0, 1)")
        if v["spacing_m"] <= 0:
            raise ConfigError("[volume] spacing_m must be positive")
        e = self["eval"]
        if not 0.0 < e["train_fraction"] < 1.0:
            raise ConfigError("[eval] train_fraction must lie in (0, 1)")
        if e["step_per"] not in ("epoch", "window"):
            raise ConfigError("[eval] step_per must be 'epoch' or 'window'")


def worker_count() -> int:
    """Frame-level worker threads: SPINESURF_THREADS when set, else the CPU count."""
    text = os.getenv(THREADS_ENV)
    if text:
        try:
            value = int(text)
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got '{text}'") from exc
        if value < 1:
            raise ConfigError(f"{THREADS_ENV} must be >= 1")
        return value
    return os.cpu_count() or 1
