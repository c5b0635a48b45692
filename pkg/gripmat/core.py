"""Domain types, constitutive models and the synthetic cycle generator.

Stress and strain live in SI-like units inside the models: stress in Pa,
strain dimensionless, strain rate in 1/s. Curves carry stress in kPa because
that is the unit moduli are reported in.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import CalibrationError, GenerationError, ParameterError, ProfileError

logger = logging.getLogger(__name__)

# Dense sampling used to assert monotone calibration and to invert it.
CALIBRATION_GRID = 20001


class EffortUnit(str, Enum):
    AMPERE = "ampere"
    NEWTON = "newton"


class SamplingMode(str, Enum):
    CONTINUOUS = "continuous"
    FORCE_THRESHOLD = "force_threshold"


class SpeedUnit(str, Enum):
    PERCENT = "percent"
    MM_S = "mm_s"


class Phase(str, Enum):
    PRE_CONTACT = "pre_contact"
    COMPRESSION = "compression"
    DECOMPRESSION = "decompression"


class ModelKind(str, Enum):
    KELVIN_VOIGT = "kelvin_voigt"
    HUNT_CROSSLEY = "hunt_crossley"


class ModulusMethod(str, Enum):
    LOCAL = "local"
    LINEAR = "linear"


def frozen_array(values: Any, dtype: Any = float) -> np.ndarray:
    """Copy values into a read-only numpy array."""
    array = np.array(values, dtype=dtype)
    array.setflags(write=False)
    return array


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ProfileError(message)


@dataclass(frozen=True)
class DeviceProfile:
    """A measurement device: jaw geometry, effort unit and calibration.

    ``calibration`` holds polynomial coefficients c0..cN (ascending powers)
    mapping device effort to force in newtons. ``speed_map`` holds
    (percent, mm/s) knots; it is empty for devices commanded in mm/s.
    """

    name: str
    jaw_area_mm2: float
    stroke_mm: float
    effort_unit: EffortUnit
    sampling_mode: SamplingMode
    effort_range: tuple[float, float]
    calibration: tuple[float, ...] = (0.0, 1.0)
    speed_map: tuple[tuple[float, float], ...] = ()

    def __post_init__(self) -> None:
        _require(self.jaw_area_mm2 > 0, f"{self.name}: jaw_area must be positive")
        _require(self.stroke_mm > 0, f"{self.name}: stroke must be positive")
        _require(len(self.calibration) >= 1, f"{self.name}: empty calibration")
        low, high = self.effort_range
        _require(low < high, f"{self.name}: effort_range must be increasing")
        if self.speed_map:
            knots = np.asarray(self.speed_map, dtype=float)
            _require(
                knots.ndim == 2 and knots.shape[1] == 2,
                f"{self.name}: speed_map entries must be [percent, mm_s] pairs",
            )
            _require(
                bool(np.all(np.diff(knots[:, 0]) > 0))
                and bool(np.all(np.diff(knots[:, 1]) > 0)),
                f"{self.name}: speed_map must be strictly increasing in both coordinates",
            )
        grid = np.linspace(low, high, CALIBRATION_GRID)
        _require(
            bool(np.all(np.diff(self.calibrate(grid)) > 0)),
            f"{self.name}: calibration is not strictly increasing on [{low}, {high}]",
        )

    @property
    def is_identity(self) -> bool:
        coeffs = np.trim_zeros(np.asarray(self.calibration, dtype=float), "b")
        return len(coeffs) == 2 and coeffs[0] == 0.0 and coeffs[1] == 1.0

    def calibrate(self, effort: Any) -> np.ndarray:
        """Evaluate the calibration polynomial elementwise."""
        values = np.asarray(effort, dtype=float)
        if self.is_identity:
            return values.copy()
        return P.polyval(values, np.asarray(self.calibration, dtype=float))

    def effort_for_force(self, force: Any) -> np.ndarray:
        """Invert the calibration.

        Forces beyond the calibrated range are inverted on the extrapolated
        polynomial, the same way ``calibrate`` extrapolates efforts outside
        ``effort_range``.
        """
        values = np.asarray(force, dtype=float)
        if self.is_identity:
            return values.copy()
        grid = np.linspace(*self.effort_range, CALIBRATION_GRID)
        forces = self.calibrate(grid)
        flat = values.ravel()
        effort = np.interp(flat, forces, grid)
        outside = (flat < forces[0]) | (flat > forces[-1])
        for value in np.unique(flat[outside]):
            effort[flat == value] = self._extrapolated_effort(float(value))
        return effort.reshape(values.shape)

    def _extrapolated_effort(self, force: float) -> float:
        low, high = self.effort_range
        below = force < float(self.calibrate(low))
        shifted = np.asarray(self.calibration, dtype=float).copy()
        shifted[0] -= force
        roots = P.polyroots(np.trim_zeros(shifted, "b"))
        real = roots[np.abs(roots.imag) < 1e-9].real
        end = low if below else high
        candidates = real[real < low] if below else real[real > high]
        if candidates.size:
            root = float(candidates[np.argmin(np.abs(candidates - end))])
            span = np.linspace(min(root, end), max(root, end), CALIBRATION_GRID)
            if np.all(np.diff(self.calibrate(span)) > 0):
                return root
        error_msg = f"{self.name}: no effort gives {force:.6g} N under the calibration"
        raise CalibrationError(error_msg)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> DeviceProfile:
        calibration = data.get("calibration", {"kind": "poly", "coeffs": [0.0, 1.0]})
        if calibration.get("kind", "poly") != "poly":
            raise ProfileError(f"unsupported calibration kind: {calibration.get('kind')}")
        try:
            return cls(
                name=str(data["name"]),
                jaw_area_mm2=float(data["jaw_area_mm2"]),
                stroke_mm=float(data["stroke_mm"]),
                effort_unit=EffortUnit(data["effort_unit"]),
                sampling_mode=SamplingMode(data.get("sampling_mode", "continuous")),
                effort_range=tuple(float(v) for v in data["effort_range"]),
                calibration=tuple(float(c) for c in calibration["coeffs"]),
                speed_map=tuple(
                    (float(pct), float(mms)) for pct, mms in data.get("speed_map", [])
                ),
            )
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, ProfileError):
                raise
            error_msg = f"invalid device profile: {e}"
            raise ProfileError(error_msg) from e

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "jaw_area_mm2": self.jaw_area_mm2,
            "stroke_mm": self.stroke_mm,
            "effort_unit": self.effort_unit.value,
            "sampling_mode": self.sampling_mode.value,
            "effort_range": list(self.effort_range),
            "calibration": {"kind": "poly", "coeffs": list(self.calibration)},
            "speed_map": [list(knot) for knot in self.speed_map],
        }


@dataclass(frozen=True)
class SampleSpec:
    """A compressed object: its size and optional manufacturer references."""

    label: str
    dimensions_mm: tuple[float, float, float]
    contact_face_area_mm2: float
    nominal_width_mm: float
    reference_density: float | None = None
    reference_cv40_kpa: float | None = None

    def __post_init__(self) -> None:
        dims = self.dimensions_mm
        _require(len(dims) == 3, f"{self.label}: three dimensions required")
        _require(all(d > 0 for d in dims), f"{self.label}: dimensions must be positive")
        _require(self.contact_face_area_mm2 > 0, f"{self.label}: contact face area must be positive")
        _require(self.nominal_width_mm > 0, f"{self.label}: nominal width must be positive")
        largest_face = max(dims[0] * dims[1], dims[0] * dims[2], dims[1] * dims[2])
        _require(
            self.contact_face_area_mm2 <= largest_face * (1 + 1e-9),
            f"{self.label}: contact face area exceeds the largest face ({largest_face} mm²)",
        )

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SampleSpec:
        try:
            dims = tuple(float(d) for d in data["dimensions_mm"])
            return cls(
                label=str(data["label"]),
                dimensions_mm=dims,  # type: ignore[arg-type]
                contact_face_area_mm2=float(
                    data.get("contact_face_area_mm2", dims[0] * dims[1]),
                ),
                nominal_width_mm=float(data.get("nominal_width_mm", dims[2])),
                reference_density=data.get("reference_density"),
                reference_cv40_kpa=data.get("reference_cv40_kpa"),
            )
        except (KeyError, TypeError, ValueError, IndexError) as e:
            if isinstance(e, ProfileError):
                raise
            error_msg = f"invalid sample spec: {e}"
            raise ProfileError(error_msg) from e

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "label": self.label,
            "dimensions_mm": list(self.dimensions_mm),
            "contact_face_area_mm2": self.contact_face_area_mm2,
            "nominal_width_mm": self.nominal_width_mm,
        }
        if self.reference_density is not None:
            data["reference_density"] = self.reference_density
        if self.reference_cv40_kpa is not None:
            data["reference_cv40_kpa"] = self.reference_cv40_kpa
        return data


@dataclass(frozen=True)
class SpeedSetting:
    value: float
    unit: SpeedUnit

    def to_dict(self) -> dict[str, Any]:
        return {"value": self.value, "unit": self.unit.value}


@dataclass(frozen=True)
class RawCycle:
    """Time-stamped jaw position and device effort for one cycle."""

    device: DeviceProfile
    sample: SampleSpec
    t: np.ndarray
    position: np.ndarray
    effort: np.ndarray
    speed: SpeedSetting
    cycle_index: int = 1
    source: str = ""

    def __post_init__(self) -> None:
        for name in ("t", "position", "effort"):
            object.__setattr__(self, name, frozen_array(getattr(self, name)))
        if not len(self.t) == len(self.position) == len(self.effort):
            raise ParameterError("t, position and effort must have equal length")
        if len(self.t) == 0:
            raise ParameterError("a raw cycle needs at least one sample")
        if np.any(np.diff(self.t) <= 0):
            raise ParameterError("t must be strictly increasing")
        if self.cycle_index < 1:
            raise ParameterError("cycle_index must be >= 1")

    def __len__(self) -> int:
        return len(self.t)


def label_phases(position: np.ndarray, contact_index: int | None = None) -> np.ndarray:
    """Label samples: compression up to the closest jaw gap, decompression after."""
    turn = int(np.argmin(position)) if len(position) else 0
    phase = np.full(len(position), Phase.DECOMPRESSION.value, dtype=object)
    phase[: turn + 1] = Phase.COMPRESSION.value
    if contact_index is not None:
        phase[:contact_index] = Phase.PRE_CONTACT.value
    return frozen_array(phase, dtype=object)


@dataclass(frozen=True)
class ForceCycle:
    """A raw cycle after calibration: force in newtons plus phase labels."""

    t: np.ndarray
    position: np.ndarray
    force: np.ndarray
    phase: np.ndarray
    label: str = ""
    cycle_index: int = 1
    speed_mm_s: float = math.nan
    sampling_mode: SamplingMode = SamplingMode.CONTINUOUS
    device_name: str = ""
    out_of_range: int = 0
    source: str = ""

    def __post_init__(self) -> None:
        for name in ("t", "position", "force"):
            object.__setattr__(self, name, frozen_array(getattr(self, name)))
        object.__setattr__(self, "phase", frozen_array(self.phase, dtype=object))
        if not len(self.t) == len(self.position) == len(self.force) == len(self.phase):
            raise ParameterError("force cycle arrays must have equal length")
        order = [p.value for p in Phase]
        ranks = [order.index(p) for p in self.phase]
        if any(b < a for a, b in zip(ranks, ranks[1:])):
            raise ParameterError("phase labels must be contiguous and ordered")

    def __len__(self) -> int:
        return len(self.t)

    def shifted(self, delta_mm: float) -> ForceCycle:
        """Same cycle with every jaw position offset by ``delta_mm``."""
        return replace(self, position=self.position + delta_mm)


CURVE_PHASE_CODES = {Phase.COMPRESSION.value: "c", Phase.DECOMPRESSION.value: "d"}


@dataclass(frozen=True)
class StressStrainCurve:
    """Per-sample strain, stress (kPa) and strain rate anchored at contact."""

    strain: np.ndarray
    stress_kpa: np.ndarray
    strain_rate: np.ndarray
    phase: np.ndarray
    L0_mm: float
    area_mm2: float
    label: str = ""
    cycle_index: int = 1
    speed_mm_s: float = math.nan
    sampling_mode: SamplingMode = SamplingMode.CONTINUOUS
    reordered: int = 0
    extrapolated: int = 0
    source: str = ""

    def __post_init__(self) -> None:
        for name in ("strain", "stress_kpa", "strain_rate"):
            object.__setattr__(self, name, frozen_array(getattr(self, name)))
        object.__setattr__(self, "phase", frozen_array(self.phase, dtype=object))
        n = len(self.strain)
        if not n == len(self.stress_kpa) == len(self.strain_rate) == len(self.phase):
            raise ParameterError("curve arrays must have equal length")
        if n and np.any(self.strain >= 1.0):
            raise ParameterError("strain must stay below 1")

    def __len__(self) -> int:
        return len(self.strain)

    @property
    def compression_mask(self) -> np.ndarray:
        return self.phase == Phase.COMPRESSION.value

    @property
    def decompression_mask(self) -> np.ndarray:
        return self.phase == Phase.DECOMPRESSION.value

    @property
    def stress_pa(self) -> np.ndarray:
        return self.stress_kpa * 1000.0

    def compression(self) -> tuple[np.ndarray, np.ndarray]:
        """Compression-phase (strain, stress_kpa) sorted by strain."""
        mask = self.compression_mask
        strain, stress = self.strain[mask], self.stress_kpa[mask]
        order = np.argsort(strain, kind="stable")
        return strain[order], stress[order]

    def scaled(self, factor: float) -> StressStrainCurve:
        """Same curve with every stress multiplied by ``factor``."""
        return replace(self, stress_kpa=self.stress_kpa * factor)

    def metadata(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "cycle_index": self.cycle_index,
            "speed_mm_s": None if math.isnan(self.speed_mm_s) else self.speed_mm_s,
            "sampling_mode": self.sampling_mode.value,
            "L0_mm": self.L0_mm,
            "area_mm2": self.area_mm2,
            "reordered": self.reordered,
            "extrapolated": self.extrapolated,
            "source": self.source,
        }

    @classmethod
    def from_arrays(
        cls,
        strain: Any,
        stress_kpa: Any,
        strain_rate: Any = None,
        phase: Any = None,
        **meta: Any,
    ) -> StressStrainCurve:
        """Build a curve; missing rates are zero, missing phases are compression."""
        strain = np.asarray(strain, dtype=float)
        if strain_rate is None:
            strain_rate = np.zeros_like(strain)
        if phase is None:
            phase = [Phase.COMPRESSION.value] * len(strain)
        meta.setdefault("L0_mm", 1.0)
        meta.setdefault("area_mm2", 1.0)
        return cls(strain, stress_kpa, strain_rate, np.asarray(phase, dtype=object), **meta)


@dataclass(frozen=True)
class ModulusEstimate:
    """A Young's modulus estimate with its window and goodness of fit."""

    method: ModulusMethod
    E_kpa: float
    r2: float
    window_halfwidth: float | None = None
    strain_point: float | None = None
    intercept_kpa: float = 0.0
    n_samples: int = 0
    label: str = ""
    cycle_index: int = 1
    speed_mm_s: float = math.nan
    source: str = ""

    def __post_init__(self) -> None:
        if not math.isfinite(self.E_kpa):
            raise ParameterError("modulus must be finite")
        if self.r2 > 1.0 + 1e-12:
            raise ParameterError("r2 cannot exceed 1")

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.method.value,
            "strain_point": self.strain_point,
            "window": self.window_halfwidth,
            "E_kpa": self.E_kpa,
            "r2": self.r2,
            "n_samples": self.n_samples,
            "provenance": {
                "source": self.source,
                "label": self.label,
                "cycle_index": self.cycle_index,
                "speed_mm_s": None if math.isnan(self.speed_mm_s) else self.speed_mm_s,
            },
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ModulusEstimate:
        prov = data.get("provenance", {})
        speed = prov.get("speed_mm_s")
        return cls(
            method=ModulusMethod(data["method"]),
            E_kpa=float(data["E_kpa"]),
            r2=float(data["r2"]),
            window_halfwidth=data.get("window"),
            strain_point=data.get("strain_point"),
            n_samples=int(data.get("n_samples", 0)),
            label=prov.get("label", ""),
            cycle_index=int(prov.get("cycle_index", 1)),
            speed_mm_s=math.nan if speed is None else float(speed),
            source=prov.get("source", ""),
        )


@dataclass(frozen=True)
class ModelParams:
    """Parameters of a constitutive model in stress/strain space."""

    model: ModelKind
    K: float
    eta: float
    n: float = 1.0


@dataclass(frozen=True)
class ViscoelasticFit:
    """Fitted Kelvin-Voigt or Hunt-Crossley parameters."""

    model: ModelKind
    K_pa: float
    eta_pa_s: float
    n: float
    r2: float
    residual_rms: float
    identifiable: bool
    excluded_samples: int = 0
    iterations: int = 0
    n_samples: int = 0
    label: str = ""
    cycle_index: int = 1
    speed_mm_s: float = math.nan
    source: str = ""
    objective_trace: tuple[float, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self) -> None:
        if not self.K_pa > 0:
            raise ParameterError(f"K must be positive, got {self.K_pa}")
        if not self.eta_pa_s >= 0:
            raise ParameterError(f"eta must be non-negative, got {self.eta_pa_s}")
        if not self.n > 0:
            raise ParameterError(f"n must be positive, got {self.n}")

    @property
    def params(self) -> ModelParams:
        return ModelParams(self.model, self.K_pa, self.eta_pa_s, self.n)

    def to_dict(self) -> dict[str, Any]:
        return {
            "model": self.model.value,
            "K_pa": self.K_pa,
            "eta_pa_s": self.eta_pa_s,
            "n": self.n,
            "r2": self.r2,
            "residual": self.residual_rms,
            "identifiable": self.identifiable,
            "excluded_samples": self.excluded_samples,
            "iterations": self.iterations,
            "n_samples": self.n_samples,
            "label": self.label,
            "cycle_index": self.cycle_index,
            "speed_mm_s": None if math.isnan(self.speed_mm_s) else self.speed_mm_s,
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ViscoelasticFit:
        speed = data.get("speed_mm_s")
        return cls(
            model=ModelKind(data["model"]),
            K_pa=float(data["K_pa"]),
            eta_pa_s=float(data["eta_pa_s"]),
            n=float(data.get("n", 1.0)),
            r2=float(data.get("r2", math.nan)),
            residual_rms=float(data.get("residual", math.nan)),
            identifiable=bool(data.get("identifiable", True)),
            excluded_samples=int(data.get("excluded_samples", 0)),
            iterations=int(data.get("iterations", 0)),
            n_samples=int(data.get("n_samples", 0)),
            label=str(data.get("label", "")),
            cycle_index=int(data.get("cycle_index", 1)),
            speed_mm_s=math.nan if speed is None else float(speed),
            source=str(data.get("source", "")),
        )


@dataclass(frozen=True)
class EnergyLossSeries:
    """Loop energy against mean strain rate, with its least-squares slope."""

    speeds_mm_s: np.ndarray
    mean_strain_rates: np.ndarray
    loop_energies_pa: np.ndarray
    eta_loss: float
    intercept: float
    r2: float
    label: str = ""

    def __post_init__(self) -> None:
        for name in ("speeds_mm_s", "mean_strain_rates", "loop_energies_pa"):
            object.__setattr__(self, name, frozen_array(getattr(self, name)))
        if not len(self.speeds_mm_s) == len(self.mean_strain_rates) == len(self.loop_energies_pa):
            raise ParameterError("energy series arrays must have equal length")

    def to_dict(self) -> dict[str, Any]:
        return {
            "model": "energy_loss",
            "label": self.label,
            "eta_pa_s": self.eta_loss,
            "intercept_pa": self.intercept,
            "r2": self.r2,
            "speeds_mm_s": [None if math.isnan(s) else s for s in self.speeds_mm_s.tolist()],
            "mean_strain_rates": self.mean_strain_rates.tolist(),
            "loop_energies_pa": self.loop_energies_pa.tolist(),
        }


def eval_model(params: ModelParams, strain: Any, strain_rate: Any) -> Any:
    """Stress in Pa predicted by a Kelvin-Voigt or Hunt-Crossley model.

    KV: ``K*e + eta*e_dot``. HC: ``K*e**n + eta*e**n*e_dot``. Works on
    scalars and arrays; negative HC stress is returned as computed.
    """
    eps = np.asarray(strain, dtype=float)
    rate = np.asarray(strain_rate, dtype=float)
    if np.any(eps < 0):
        raise ParameterError("strain must be non-negative")
    if params.model is ModelKind.KELVIN_VOIGT:
        stress = params.K * eps + params.eta * rate
    else:
        if not (params.K > 0 and params.n > 0):
            raise ParameterError("Hunt-Crossley requires K > 0 and n > 0")
        stress = eps**params.n * (params.K + params.eta * rate)
    if np.ndim(stress) == 0:
        return float(stress)
    return stress


@dataclass(frozen=True)
class SyntheticCycle:
    """A generated compression/decompression cycle in stress/strain space."""

    params: ModelParams
    t: np.ndarray
    strain: np.ndarray
    strain_rate: np.ndarray
    stress_pa: np.ndarray
    phase: np.ndarray

    def __post_init__(self) -> None:
        for name in ("t", "strain", "strain_rate", "stress_pa"):
            object.__setattr__(self, name, frozen_array(getattr(self, name)))
        object.__setattr__(self, "phase", frozen_array(self.phase, dtype=object))

    def __len__(self) -> int:
        return len(self.t)

    def to_curve(
        self,
        L0_mm: float = 50.0,
        area_mm2: float = 1000.0,
        label: str = "synthetic",
        **meta: Any,
    ) -> StressStrainCurve:
        """The cycle as a curve, using the generator's exact strain rates."""
        return StressStrainCurve(
            strain=self.strain,
            stress_kpa=self.stress_pa / 1000.0,
            strain_rate=self.strain_rate,
            phase=self.phase,
            L0_mm=L0_mm,
            area_mm2=area_mm2,
            label=label,
            **meta,
        )


def synthesize_cycle(
    params: ModelParams,
    strain_max: float,
    strain_rate: float,
    samples_per_phase: int,
    noise_rel: float = 0.0,
    seed: int = 0,
    *,
    compression_only: bool = False,
) -> SyntheticCycle:
    """Generate a triangular 0 -> strain_max -> 0 cycle at constant rate.

    Stress follows :func:`eval_model` with multiplicative Gaussian noise of
    relative sigma ``noise_rel``. The peak sample closes the compression
    phase; the decompression phase ends back at zero strain.
    """
    if not 0 < strain_max < 1:
        raise ParameterError(f"strain_max must be in (0, 1), got {strain_max}")
    if not params.K > 0:
        raise ParameterError(f"K must be positive, got {params.K}")
    if not strain_rate > 0:
        raise ParameterError(f"strain_rate must be positive, got {strain_rate}")
    if samples_per_phase < 4:
        raise ParameterError("samples_per_phase must be at least 4")
    if noise_rel < 0:
        raise ParameterError("noise_rel must be non-negative")

    n = samples_per_phase
    up = strain_max * np.arange(n) / (n - 1)
    t_up = up / strain_rate
    parts_strain = [up]
    parts_t = [t_up]
    parts_rate = [np.full(n, strain_rate)]
    parts_phase = [[Phase.COMPRESSION.value] * n]
    if not compression_only:
        down = strain_max * (1.0 - np.arange(1, n + 1) / n)
        parts_strain.append(down)
        parts_t.append(t_up[-1] + (strain_max - down) / strain_rate)
        parts_rate.append(np.full(n, -strain_rate))
        parts_phase.append([Phase.DECOMPRESSION.value] * n)

    strain = np.concatenate(parts_strain)
    rate = np.concatenate(parts_rate)
    factor = 1.0 + params.eta * rate / params.K
    bad = np.flatnonzero(factor < 0)
    if bad.size:
        first = int(bad[0])
        raise GenerationError(
            f"damping factor 1 + eta*rate/K is negative at sample {first} "
            f"(strain {strain[first]:.6g}, rate {rate[first]:.6g})",
            sample_index=first,
        )

    stress = eval_model(params, strain, rate)
    if noise_rel > 0:
        rng = np.random.default_rng(seed)
        stress = stress * (1.0 + noise_rel * rng.standard_normal(stress.shape))
    return SyntheticCycle(
        params=params,
        t=np.concatenate(parts_t),
        strain=strain,
        strain_rate=rate,
        stress_pa=stress,
        phase=np.concatenate(parts_phase),
    )


def synthetic_raw_cycle(
    cycle: SyntheticCycle,
    device: DeviceProfile,
    sample: SampleSpec,
    L0_mm: float,
    *,
    approach_samples: int = 20,
    approach_mm: float = 5.0,
    cycle_index: int = 1,
) -> RawCycle:
    """Map a synthetic cycle back to jaw position and device effort.

    An approach segment of zero force precedes contact so that contact
    detection has a baseline to work from.
    """
    if L0_mm <= 0:
        raise ParameterError("L0 must be positive")
    area_mm2 = min(device.jaw_area_mm2, sample.contact_face_area_mm2)
    dt = float(cycle.t[1] - cycle.t[0])
    steps = np.arange(approach_samples, 0, -1)
    approach_t = -steps * dt
    approach_pos = L0_mm + approach_mm * steps / approach_samples

    t = np.concatenate([approach_t, cycle.t])
    t = t - t[0]
    position = np.concatenate([approach_pos, L0_mm * (1.0 - cycle.strain)])
    force = np.concatenate([np.zeros(approach_samples), cycle.stress_pa * area_mm2 * 1e-6])
    speed = float(abs(cycle.strain_rate[0]) * L0_mm)
    try:
        effort = device.effort_for_force(force)
    except CalibrationError as e:
        raise GenerationError(str(e)) from e
    low, high = device.effort_range
    beyond = int(np.count_nonzero((effort < low) | (effort > high)))
    if beyond:
        logger.warning(
            "%s: %d sample(s) need effort outside [%g, %g] %s, calibration extrapolated",
            device.name,
            beyond,
            low,
            high,
            device.effort_unit.value,
        )
    return RawCycle(
        device=device,
        sample=sample,
        t=t,
        position=position,
        effort=effort,
        speed=SpeedSetting(speed, SpeedUnit.MM_S),
        cycle_index=cycle_index,
    )
