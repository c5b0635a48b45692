"""Contact detection, stress/strain transformation and modulus estimation."""

from __future__ import annotations

import csv
import io
import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np
from scipy import stats
from scipy.signal import savgol_filter

from .config import Settings
from .core import (
    CURVE_PHASE_CODES,
    DeviceProfile,
    ForceCycle,
    ModulusEstimate,
    ModulusMethod,
    Phase,
    SampleSpec,
    SamplingMode,
    StressStrainCurve,
)
from .errors import (
    CsvParseError,
    GeometryError,
    InsufficientCompressionError,
    InsufficientDataError,
    InsufficientDeformationError,
    NoContactError,
    ParameterError,
)
from .util import dump_json, read_json, safe_write_file

logger = logging.getLogger(__name__)

MIN_BASELINE = 8
MIN_WINDOW_SAMPLES = 4
MIN_STRAIN_SPAN = 0.01
# Relative slack on window edges for rounding in strain_point ± halfwidth.
WINDOW_EDGE_TOL = 1e-9
CV40_STRAIN = 0.40
CURVE_HEADER = ("strain", "stress_kpa", "strain_rate_per_s", "phase")
# r2 values closer than this count as a tie in window sweeps.
R2_TIE = 1e-12


@dataclass(frozen=True)
class ContactEvent:
    index: int
    L0_mm: float
    baseline_force_mean: float
    baseline_force_std: float
    threshold_used: float


def detect_contact(
    cycle: ForceCycle,
    sigma_k: float = 5.0,
    floor: float = 1.0,
    sustain: int = 3,
    baseline_samples: int = MIN_BASELINE,
    stroke_mm: float | None = None,
) -> ContactEvent:
    """Find the first sample where force rises clear of the resting baseline.

    The baseline is the first ``baseline_samples`` samples. Contact is the
    first later index where force exceeds ``max(mean + sigma_k*std, floor)``
    for ``sustain`` consecutive samples.
    """
    if baseline_samples < MIN_BASELINE:
        raise ParameterError(f"baseline window must be at least {MIN_BASELINE} samples")
    if sustain < 1:
        raise ParameterError("sustain must be at least 1")
    force = cycle.force
    if len(force) < baseline_samples:
        raise InsufficientDataError(
            f"{len(force)} samples, need {baseline_samples} for the contact baseline",
        )
    baseline = force[:baseline_samples]
    mean = float(np.mean(baseline))
    std = float(np.std(baseline))
    threshold = max(mean + sigma_k * std, floor)

    above = (force > threshold).astype(int)
    if len(above) >= sustain:
        runs = np.convolve(above, np.ones(sustain, dtype=int), mode="valid")
        hits = np.flatnonzero(runs == sustain)
        hits = hits[hits >= baseline_samples]
    else:
        hits = np.array([], dtype=int)
    if hits.size == 0:
        raise NoContactError(
            f"force never exceeds {threshold:.4g} N for {sustain} consecutive samples",
        )
    index = int(hits[0])
    L0 = float(cycle.position[index])
    if stroke_mm is not None and L0 > stroke_mm:
        raise GeometryError(f"L0 {L0:.4g} mm exceeds the device stroke {stroke_mm:.4g} mm")
    return ContactEvent(
        index=index,
        L0_mm=L0,
        baseline_force_mean=mean,
        baseline_force_std=std,
        threshold_used=threshold,
    )


def effective_area(sample: SampleSpec, device: DeviceProfile) -> float:
    """The smaller of the jaw area and the object face in contact."""
    return min(device.jaw_area_mm2, sample.contact_face_area_mm2)


def to_stress_strain(
    cycle: ForceCycle,
    contact: ContactEvent,
    sample: SampleSpec,
    device: DeviceProfile,
    *,
    max_strain: float = 0.95,
    nominal_tolerance: float = 0.10,
) -> StressStrainCurve:
    """Transform a force cycle into a stress/strain curve starting at contact."""
    L0 = contact.L0_mm
    if not L0 > 0:
        raise GeometryError(f"L0 must be positive, got {L0}")
    area = effective_area(sample, device)
    if not area > 0:
        raise GeometryError("effective contact area must be positive")
    if not 0 <= contact.index < len(cycle):
        raise GeometryError(f"contact index {contact.index} outside the cycle")

    if abs(L0 - sample.nominal_width_mm) > nominal_tolerance * sample.nominal_width_mm:
        logger.warning(
            "%s: measured L0 %.3g mm deviates more than %.0f%% from nominal width %.3g mm",
            sample.label,
            L0,
            nominal_tolerance * 100,
            sample.nominal_width_mm,
        )

    t = cycle.t[contact.index :]
    strain = np.maximum((L0 - cycle.position[contact.index :]) / L0, 0.0)
    stress = cycle.force[contact.index :] / area * 1000.0

    keep = strain <= max_strain
    dropped = int(np.count_nonzero(~keep))
    if dropped:
        logger.warning(
            "%s: dropped %d sample(s) beyond %.2f strain",
            sample.label,
            dropped,
            max_strain,
        )
        t, strain, stress = t[keep], strain[keep], stress[keep]
    if len(strain) == 0:
        raise InsufficientDataError("no samples remain after contact")

    rate = np.gradient(strain, t) if len(strain) > 1 else np.zeros_like(strain)
    turn = int(np.argmax(strain))
    phase = np.full(len(strain), Phase.DECOMPRESSION.value, dtype=object)
    phase[: turn + 1] = Phase.COMPRESSION.value

    reordered = 0
    if cycle.sampling_mode is SamplingMode.FORCE_THRESHOLD:
        order = np.argsort(strain[: turn + 1], kind="stable")
        reordered = int(np.count_nonzero(order != np.arange(turn + 1)))
        if reordered:
            logger.warning(
                "%s: sorted %d thresholded compression sample(s) by strain",
                sample.label,
                reordered,
            )
            strain[: turn + 1] = strain[: turn + 1][order]
            stress[: turn + 1] = stress[: turn + 1][order]
            rate[: turn + 1] = rate[: turn + 1][order]

    return StressStrainCurve(
        strain=strain,
        stress_kpa=stress,
        strain_rate=rate,
        phase=phase,
        L0_mm=L0,
        area_mm2=area,
        label=sample.label,
        cycle_index=cycle.cycle_index,
        speed_mm_s=cycle.speed_mm_s,
        sampling_mode=cycle.sampling_mode,
        reordered=reordered,
        extrapolated=cycle.out_of_range,
        source=cycle.source,
    )


def savgol_smooth(series: Any, window: int = 11, order: int = 3) -> np.ndarray:
    """Savitzky-Golay smoothing; edges use polynomial fits of the end windows."""
    values = np.asarray(series, dtype=float)
    if window < 1 or window % 2 == 0:
        raise ParameterError(f"window must be a positive odd count, got {window}")
    if order < 0 or window <= order:
        raise ParameterError(f"order must be in [0, window), got {order}")
    if len(values) < window:
        raise ParameterError(f"series of {len(values)} samples is shorter than window {window}")
    return savgol_filter(values, window, order, mode="interp")


def smooth_curve(
    curve: StressStrainCurve,
    window: int = 11,
    order: int = 3,
    min_samples: int = 22,
) -> StressStrainCurve:
    """Smooth stress per phase; compression strain is made non-decreasing."""
    n_compression = int(np.count_nonzero(curve.compression_mask))
    if n_compression < min_samples:
        logger.warning(
            "%s: %d compression samples (< %d), smoothing skipped",
            curve.label or "curve",
            n_compression,
            min_samples,
        )
        return curve

    stress = curve.stress_kpa.copy()
    strain = curve.strain.copy()
    for mask in (curve.compression_mask, curve.decompression_mask):
        idx = np.flatnonzero(mask)
        if len(idx) >= window:
            stress[idx] = savgol_smooth(stress[idx], window, order)
    idx = np.flatnonzero(curve.compression_mask)
    strain[idx] = np.maximum.accumulate(strain[idx])
    return replace(curve, stress_kpa=stress, strain=strain)


def fit_line(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares slope, intercept and coefficient of determination."""
    result = stats.linregress(x, y)
    if np.ptp(y) == 0:
        return float(result.slope), float(result.intercept), 1.0
    return float(result.slope), float(result.intercept), float(result.rvalue**2)


def local_modulus(
    curve: StressStrainCurve,
    strain_point: float,
    halfwidth: float = 0.10,
) -> ModulusEstimate:
    """Slope of the best-fit line in a strain window around ``strain_point``."""
    if halfwidth <= 0:
        raise ParameterError("halfwidth must be positive")
    strain, stress = curve.compression()
    mask = np.abs(strain - strain_point) <= halfwidth * (1 + WINDOW_EDGE_TOL)
    count = int(np.count_nonzero(mask))
    if count < MIN_WINDOW_SAMPLES or np.ptp(strain[mask]) == 0:
        raise InsufficientDataError(
            f"{count} compression samples within ±{halfwidth:g} of strain {strain_point:g}, "
            f"need {MIN_WINDOW_SAMPLES}",
        )
    slope, intercept, r2 = fit_line(strain[mask], stress[mask])
    return ModulusEstimate(
        method=ModulusMethod.LOCAL,
        E_kpa=slope,
        r2=r2,
        window_halfwidth=halfwidth,
        strain_point=strain_point,
        intercept_kpa=intercept,
        n_samples=count,
        label=curve.label,
        cycle_index=curve.cycle_index,
        speed_mm_s=curve.speed_mm_s,
        source=curve.source,
    )


@dataclass(frozen=True)
class SweepEntry:
    halfwidth: float
    feasible: bool
    r2: float | None = None
    E_kpa: float | None = None
    reason: str = ""


@dataclass(frozen=True)
class WindowSweep:
    strain_point: float
    entries: tuple[SweepEntry, ...]
    best: SweepEntry

    def to_dict(self) -> dict[str, Any]:
        return {
            "strain_point": self.strain_point,
            "best_halfwidth": self.best.halfwidth,
            "entries": [
                {
                    "halfwidth": e.halfwidth,
                    "feasible": e.feasible,
                    "r2": e.r2,
                    "E_kpa": e.E_kpa,
                    "reason": e.reason,
                }
                for e in self.entries
            ],
        }


def window_sweep(
    curve: StressStrainCurve,
    strain_point: float,
    halfwidths: Sequence[float],
) -> WindowSweep:
    """Fit every window size and pick the highest r2 (smaller window on ties)."""
    strain, _ = curve.compression()
    max_strain = float(strain.max()) if len(strain) else 0.0
    entries = []
    for halfwidth in sorted(halfwidths):
        if strain_point + halfwidth > max_strain * (1 + WINDOW_EDGE_TOL):
            entries.append(
                SweepEntry(halfwidth, feasible=False, reason="window exceeds the compressed range"),
            )
            continue
        try:
            estimate = local_modulus(curve, strain_point, halfwidth)
        except InsufficientDataError as e:
            entries.append(SweepEntry(halfwidth, feasible=False, reason=str(e)))
            continue
        entries.append(SweepEntry(halfwidth, True, estimate.r2, estimate.E_kpa))

    feasible = [e for e in entries if e.feasible]
    if not feasible:
        raise InsufficientDataError(f"no feasible window around strain {strain_point:g}")
    best = feasible[0]
    for entry in feasible[1:]:
        if entry.r2 > best.r2 + R2_TIE:  # type: ignore[operator]
            best = entry
    return WindowSweep(strain_point, tuple(entries), best)


def linear_modulus(curve: StressStrainCurve) -> ModulusEstimate:
    """Single least-squares line over the whole compression phase."""
    strain, stress = curve.compression()
    if len(strain) < MIN_WINDOW_SAMPLES:
        raise InsufficientDataError(
            f"{len(strain)} compression samples, need {MIN_WINDOW_SAMPLES}",
        )
    span = float(np.ptp(strain))
    if span < MIN_STRAIN_SPAN:
        raise InsufficientDeformationError(
            f"compression spans {span:.4g} strain, need {MIN_STRAIN_SPAN}",
        )
    slope, intercept, r2 = fit_line(strain, stress)
    return ModulusEstimate(
        method=ModulusMethod.LINEAR,
        E_kpa=slope,
        r2=r2,
        intercept_kpa=intercept,
        n_samples=len(strain),
        label=curve.label,
        cycle_index=curve.cycle_index,
        speed_mm_s=curve.speed_mm_s,
        source=curve.source,
    )


def cv40(curve: StressStrainCurve) -> float:
    """Compression stress (kPa) at 40% strain, linearly interpolated."""
    strain, stress = curve.compression()
    if len(strain) == 0 or strain.max() < CV40_STRAIN:
        reached = float(strain.max()) if len(strain) else 0.0
        raise InsufficientCompressionError(
            f"compression reaches {reached:.3g} strain, need {CV40_STRAIN}",
        )
    return float(np.interp(CV40_STRAIN, strain, stress))


@dataclass(frozen=True)
class AggregateReport:
    keys: tuple[tuple[str, Any], ...]
    quantity: str
    mean: float
    std: float
    error_ratio: float
    count: int

    def to_dict(self) -> dict[str, Any]:
        return {
            **dict(self.keys),
            "quantity": self.quantity,
            "mean": self.mean,
            "std": self.std,
            "error_ratio": self.error_ratio,
            "count": self.count,
        }


def _group_value(value: Any) -> Any:
    if isinstance(value, float) and math.isnan(value):
        return None
    if hasattr(value, "value") and isinstance(value.value, str):
        return value.value
    return value


def aggregate_records(
    records: Iterable[Any],
    quantity: str,
    group_by: Sequence[str],
) -> list[AggregateReport]:
    """Mean, population std and std/mean of ``quantity`` per group.

    Records may be mappings or objects; groups keep first-seen order.
    """
    groups: dict[tuple[Any, ...], list[float]] = {}
    for record in records:
        get = record.get if isinstance(record, dict) else lambda k, r=record: getattr(r, k)
        key = tuple(_group_value(get(name)) for name in group_by)
        groups.setdefault(key, []).append(float(get(quantity)))

    reports = []
    for key, values in groups.items():
        array = np.asarray(values)
        mean = float(np.mean(array))
        std = float(np.std(array))
        if std == 0:
            ratio = 0.0
        elif mean == 0:
            ratio = math.inf
        else:
            ratio = std / abs(mean)
        reports.append(
            AggregateReport(
                keys=tuple(zip(group_by, key)),
                quantity=quantity,
                mean=mean,
                std=std,
                error_ratio=ratio,
                count=len(values),
            ),
        )
    return reports


def aggregate_estimates(
    estimates: Sequence[ModulusEstimate],
    group_by: Sequence[str] = ("cycle_index", "speed_mm_s"),
) -> list[AggregateReport]:
    """Aggregate modulus estimates per group (e.g. cycle and speed)."""
    if not estimates:
        raise ParameterError("no estimates to aggregate")
    return aggregate_records(estimates, "E_kpa", group_by)


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    df: float


def welch_t_test(group_a: Sequence[float], group_b: Sequence[float]) -> TTestResult:
    """Two-sided Welch's unequal-variance t-test."""
    a = np.asarray(group_a, dtype=float)
    b = np.asarray(group_b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ParameterError("each group needs at least 2 values")
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    if va + vb == 0:
        df = float(len(a) + len(b) - 2)
        if a.mean() == b.mean():
            return TTestResult(0.0, 1.0, df)
        return TTestResult(math.copysign(math.inf, a.mean() - b.mean()), 0.0, df)
    df = (va + vb) ** 2 / (va**2 / (len(a) - 1) + vb**2 / (len(b) - 1))
    result = stats.ttest_ind(a, b, equal_var=False)
    return TTestResult(float(result.statistic), float(result.pvalue), float(df))


def process_cycle(
    cycle: ForceCycle,
    sample: SampleSpec,
    device: DeviceProfile,
    settings: Settings,
    contact_overrides: dict[str, Any] | None = None,
) -> StressStrainCurve:
    """Detect contact and transform one force cycle with the given settings."""
    contact_settings = replace(settings.contact, **(contact_overrides or {}))
    contact = detect_contact(
        cycle,
        sigma_k=contact_settings.sigma_k,
        floor=contact_settings.floor_n,
        sustain=contact_settings.sustain,
        baseline_samples=contact_settings.baseline_samples,
        stroke_mm=device.stroke_mm,
    )
    return to_stress_strain(
        cycle,
        contact,
        sample,
        device,
        max_strain=settings.curve.max_strain,
        nominal_tolerance=settings.curve.nominal_tolerance,
    )


def curve_csv_text(curve: StressStrainCurve) -> str:
    """Render the processed-curve CSV (phase codes c/d)."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CURVE_HEADER)
    for strain, stress, rate, phase in zip(
        curve.strain.tolist(),
        curve.stress_kpa.tolist(),
        curve.strain_rate.tolist(),
        curve.phase.tolist(),
    ):
        writer.writerow([repr(strain), repr(stress), repr(rate), CURVE_PHASE_CODES[phase]])
    return buffer.getvalue()


def curve_metadata_path(csv_path: Path) -> Path:
    return csv_path.with_name(csv_path.name.removesuffix(".csv") + ".json")


def write_curve(curve: StressStrainCurve, csv_path: Path) -> Path:
    """Write the curve CSV plus a JSON sidecar holding its provenance."""
    safe_write_file(csv_path, curve_csv_text(curve))
    safe_write_file(curve_metadata_path(csv_path), dump_json(curve.metadata()))
    return csv_path


def read_curve(csv_path: Path) -> StressStrainCurve:
    """Read a processed-curve CSV and, when present, its JSON sidecar."""
    if not csv_path.exists():
        raise CsvParseError("file not found", csv_path)
    codes = {code: phase for phase, code in CURVE_PHASE_CODES.items()}
    columns: list[list[float]] = [[], [], []]
    phases: list[str] = []
    with csv_path.open(encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        for row in reader:
            line = reader.line_num
            if line == 1:
                if tuple(row) != CURVE_HEADER:
                    raise CsvParseError(f"expected header {','.join(CURVE_HEADER)}", csv_path, 1)
                continue
            if not row:
                continue
            if len(row) != 4 or row[3] not in codes:
                raise CsvParseError("malformed curve row", csv_path, line)
            try:
                for column, cell in zip(columns, row[:3]):
                    column.append(float(cell))
            except ValueError as e:
                raise CsvParseError(f"malformed number: {e}", csv_path, line) from e
            phases.append(codes[row[3]])

    meta: dict[str, Any] = {"L0_mm": 1.0, "area_mm2": 1.0, "label": csv_path.stem}
    meta_path = curve_metadata_path(csv_path)
    if meta_path.exists():
        data = read_json(meta_path)
        speed = data.get("speed_mm_s")
        meta = {
            "L0_mm": float(data.get("L0_mm", 1.0)),
            "area_mm2": float(data.get("area_mm2", 1.0)),
            "label": str(data.get("label", csv_path.stem)),
            "cycle_index": int(data.get("cycle_index", 1)),
            "speed_mm_s": math.nan if speed is None else float(speed),
            "sampling_mode": SamplingMode(data.get("sampling_mode", "continuous")),
            "reordered": int(data.get("reordered", 0)),
            "extrapolated": int(data.get("extrapolated", 0)),
            "source": str(data.get("source", "")),
        }
    try:
        return StressStrainCurve(
            strain=columns[0],
            stress_kpa=columns[1],
            strain_rate=columns[2],
            phase=np.asarray(phases, dtype=object),
            **meta,
        )
    except ParameterError as e:
        raise CsvParseError(str(e), csv_path) from e
