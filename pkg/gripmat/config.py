"""Tunable defaults and their JSON overrides."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError, ManifestError
from .util import get_default_config_path, read_json

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContactSettings:
    sigma_k: float = 5.0
    floor_n: float = 1.0
    sustain: int = 3
    baseline_samples: int = 8


@dataclass(frozen=True)
class SmoothingSettings:
    enabled: bool = True
    window: int = 11
    order: int = 3
    # Compression phases shorter than this are left unsmoothed.
    min_samples: int = 22


@dataclass(frozen=True)
class CurveSettings:
    max_strain: float = 0.95
    nominal_tolerance: float = 0.10


@dataclass(frozen=True)
class ModulusSettings:
    halfwidth: float = 0.10
    strain_points: tuple[float, ...] = (0.0, 0.05, 0.40, 0.70)
    sweep_halfwidths: tuple[float, ...] = (0.02, 0.05, 0.10, 0.15, 0.20)


@dataclass(frozen=True)
class ViscoSettings:
    eps_min: float = 0.02
    cov_threshold: float = 0.1
    max_iter: int = 200
    lambda0: float = 1e-3


@dataclass(frozen=True)
class Settings:
    contact: ContactSettings = field(default_factory=ContactSettings)
    smoothing: SmoothingSettings = field(default_factory=SmoothingSettings)
    curve: CurveSettings = field(default_factory=CurveSettings)
    modulus: ModulusSettings = field(default_factory=ModulusSettings)
    visco: ViscoSettings = field(default_factory=ViscoSettings)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def _merge(section: Any, overrides: dict[str, Any], where: str) -> Any:
    if not isinstance(overrides, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name: f for f in dataclasses.fields(section)}
    unknown = sorted(set(overrides) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {', '.join(unknown)}")
    changes = {}
    for key, value in overrides.items():
        current = getattr(section, key)
        if isinstance(current, tuple):
            value = tuple(float(v) for v in value)
        elif isinstance(current, bool):
            value = bool(value)
        elif isinstance(current, int):
            value = int(value)
        elif isinstance(current, float):
            value = float(value)
        changes[key] = value
    return dataclasses.replace(section, **changes)


def settings_from_dict(data: dict[str, Any], base: Settings | None = None) -> Settings:
    """Overlay a (possibly partial) settings mapping on ``base``."""
    settings = base or Settings()
    if not isinstance(data, dict):
        raise ConfigError("settings must be a JSON object")
    unknown = sorted(set(data) - {f.name for f in dataclasses.fields(Settings)})
    if unknown:
        raise ConfigError(f"unknown settings sections: {', '.join(unknown)}")
    changes = {
        name: _merge(getattr(settings, name), overrides, name)
        for name, overrides in data.items()
    }
    return dataclasses.replace(settings, **changes)


def load_settings(path: Path | None = None) -> Settings:
    """Load settings from ``path`` or, when absent, the user config file."""
    if path is None:
        path = get_default_config_path()
        if not path.exists():
            return Settings()
        logger.debug("Using settings from %s", path)
    try:
        data = read_json(path)
    except ManifestError as e:
        raise ConfigError(str(e)) from e
    try:
        return settings_from_dict(data)
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise ConfigError(f"{path}: {e}") from e
        error_msg = f"{path}: invalid setting value: {e}"
        raise ConfigError(error_msg) from e
