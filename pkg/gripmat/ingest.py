"""Read raw traces, device profiles and sample specs; apply calibration."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .core import (
    DeviceProfile,
    ForceCycle,
    RawCycle,
    SampleSpec,
    SpeedSetting,
    SpeedUnit,
    label_phases,
)
from .errors import (
    CsvParseError,
    CycleValidationError,
    ManifestError,
    ParameterError,
    ProfileError,
)
from .util import normalize_line_endings, read_json, read_shipped, shipped_names

logger = logging.getLogger(__name__)

CSV_HEADER = ("t_s", "position_mm", "effort")


@dataclass(frozen=True)
class CycleManifest:
    """Where one cycle's trace lives and how it was recorded."""

    path: Path
    device_profile: str
    sample_spec: str | dict[str, Any]
    speed: SpeedSetting
    csv_path: Path
    cycle_index: int = 1
    contact: dict[str, Any] = field(default_factory=dict)

    @property
    def base_dir(self) -> Path:
        return self.path.parent


def load_manifest(path: Path) -> CycleManifest:
    """Parse a cycle manifest; relative paths resolve against its folder."""
    data = read_json(path)
    if not isinstance(data, dict):
        raise ManifestError("manifest must be a JSON object", path)
    try:
        speed = data["speed"]
        manifest = CycleManifest(
            path=path,
            device_profile=str(data["device_profile"]),
            sample_spec=data["sample_spec"],
            speed=SpeedSetting(float(speed["value"]), SpeedUnit(speed.get("unit", "mm_s"))),
            csv_path=path.parent / str(data["csv"]),
            cycle_index=int(data.get("cycle_index", 1)),
            contact=dict(data.get("contact", {})),
        )
    except KeyError as e:
        raise ManifestError(f"missing key {e}", path) from e
    except (TypeError, ValueError) as e:
        raise ManifestError(f"invalid value: {e}", path) from e
    if manifest.cycle_index < 1:
        raise ManifestError("cycle_index must be >= 1", path)
    return manifest


def load_device_profile(ref: str, base_dir: Path | None = None) -> DeviceProfile:
    """Load a profile from a file path, falling back to the shipped profiles."""
    candidate = Path(ref)
    if base_dir is not None and not candidate.is_absolute():
        candidate = base_dir / candidate
    if candidate.exists():
        data = read_json(candidate)
        where = candidate
    elif ref.removesuffix(".json") in shipped_names("profiles"):
        data = read_shipped("profiles", ref)
        where = Path(ref)
    else:
        raise ManifestError("device profile not found", candidate)
    try:
        return DeviceProfile.from_dict(data)
    except ProfileError as e:
        raise ManifestError(str(e), where) from e


def load_sample_spec(ref: str | dict[str, Any], base_dir: Path | None = None) -> SampleSpec:
    """Load a sample spec from a file path or an inline mapping."""
    if isinstance(ref, dict):
        data, where = ref, Path("<inline sample_spec>")
    else:
        where = Path(ref)
        if base_dir is not None and not where.is_absolute():
            where = base_dir / where
        data = read_json(where)
    try:
        return SampleSpec.from_dict(data)
    except ProfileError as e:
        raise ManifestError(str(e), where) from e


def read_cycle_csv(path: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Parse a ``t_s,position_mm,effort`` CSV into three arrays."""
    if not path.exists():
        raise ManifestError("file not found", path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise CsvParseError(f"cannot read file: {e}", path) from e

    reader = csv.reader(io.StringIO(normalize_line_endings(text)))
    rows: list[tuple[float, float, float]] = []
    lines: list[int] = []
    for row in reader:
        line = reader.line_num
        if line == 1:
            if tuple(cell.strip() for cell in row) != CSV_HEADER:
                raise CsvParseError(f"expected header {','.join(CSV_HEADER)}", path, 1)
            continue
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(CSV_HEADER):
            raise CsvParseError(f"expected 3 fields, got {len(row)}", path, line)
        try:
            rows.append(tuple(float(cell) for cell in row))  # type: ignore[arg-type]
        except ValueError as e:
            raise CsvParseError(f"malformed number: {e}", path, line) from e
        lines.append(line)

    if not rows:
        raise CsvParseError("no samples", path, reader.line_num or 1)
    values = np.asarray(rows, dtype=float)
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(values), axis=1))[0])
        raise CsvParseError("non-finite value", path, lines[bad])
    steps = np.diff(values[:, 0])
    if np.any(steps <= 0):
        bad = int(np.flatnonzero(steps <= 0)[0]) + 1
        kind = "duplicated timestamp" if steps[bad - 1] == 0 else "time goes backwards"
        raise CycleValidationError(f"{kind} at row {bad + 1}", path, lines[bad])
    return values[:, 0], values[:, 1], values[:, 2]


def load_raw_cycle(manifest: CycleManifest) -> RawCycle:
    """Load the trace and metadata a manifest points at."""
    device = load_device_profile(manifest.device_profile, manifest.base_dir)
    sample = load_sample_spec(manifest.sample_spec, manifest.base_dir)
    t, position, effort = read_cycle_csv(manifest.csv_path)
    try:
        return RawCycle(
            device=device,
            sample=sample,
            t=t,
            position=position,
            effort=effort,
            speed=manifest.speed,
            cycle_index=manifest.cycle_index,
            source=str(manifest.path),
        )
    except ParameterError as e:
        raise CycleValidationError(str(e), manifest.csv_path) from e


def out_of_range_mask(profile: DeviceProfile, effort: np.ndarray) -> np.ndarray:
    low, high = profile.effort_range
    values = np.asarray(effort, dtype=float)
    return (values < low) | (values > high)


def calibrate_force(profile: DeviceProfile, effort: Any) -> np.ndarray:
    """Convert device effort to newtons with the profile's calibration.

    Efforts outside the declared range are still converted; a warning
    records how many were extrapolated.
    """
    values = np.asarray(effort, dtype=float)
    outside = int(np.count_nonzero(out_of_range_mask(profile, values)))
    if outside:
        low, high = profile.effort_range
        logger.warning(
            "%s: %d effort sample(s) outside [%g, %g] %s, extrapolating calibration",
            profile.name,
            outside,
            low,
            high,
            profile.effort_unit.value,
        )
    return profile.calibrate(values)


def speed_to_mm_s(profile: DeviceProfile, percent: float) -> float:
    """Interpolate a percent speed command to mm/s over the profile's map."""
    if not profile.speed_map:
        raise ParameterError(f"{profile.name} has no speed map")
    if not 0 <= percent <= 100:
        raise ParameterError(f"speed percent must be in [0, 100], got {percent}")
    knots = np.asarray(profile.speed_map, dtype=float)
    first, last = knots[0, 0], knots[-1, 0]
    if percent < first or percent > last:
        logger.warning(
            "%s: speed %g%% outside [%g, %g], clamped",
            profile.name,
            percent,
            first,
            last,
        )
    return float(np.interp(percent, knots[:, 0], knots[:, 1]))


def resolve_speed_mm_s(profile: DeviceProfile, speed: SpeedSetting) -> float:
    if speed.unit is SpeedUnit.PERCENT:
        return speed_to_mm_s(profile, speed.value)
    return float(speed.value)


def to_force_cycle(raw: RawCycle) -> ForceCycle:
    """Calibrate a raw cycle into newtons and label its phases."""
    force = calibrate_force(raw.device, raw.effort)
    return ForceCycle(
        t=raw.t,
        position=raw.position,
        force=force,
        phase=label_phases(raw.position),
        label=raw.sample.label,
        cycle_index=raw.cycle_index,
        speed_mm_s=resolve_speed_mm_s(raw.device, raw.speed),
        sampling_mode=raw.device.sampling_mode,
        device_name=raw.device.name,
        out_of_range=int(np.count_nonzero(out_of_range_mask(raw.device, raw.effort))),
        source=raw.source,
    )
