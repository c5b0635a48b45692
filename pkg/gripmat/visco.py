"""Viscoelasticity from hysteresis energy, Kelvin-Voigt and Hunt-Crossley fits.

All fitting happens in stress/strain space with stress in Pa, so K is in
N/m² and eta in Pa·s whatever device recorded the curve.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy import stats
from scipy.integrate import trapezoid
from scipy.optimize import lsq_linear

from .core import (
    EnergyLossSeries,
    ModelKind,
    SamplingMode,
    StressStrainCurve,
    ViscoelasticFit,
)
from .errors import (
    ConvergenceError,
    FitDomainError,
    HysteresisAnomalyError,
    InsufficientDataError,
    ParameterError,
    PhaseError,
    RankDeficiencyError,
    UnsupportedModeError,
)
from .pipeline import fit_line

logger = logging.getLogger(__name__)

EPS_MIN = 0.02
COV_THRESHOLD = 0.1
MIN_KV_SAMPLES = 6
MIN_HC_SAMPLES = 8
N_BOUNDS = (1e-6, 10.0)
# Decompression may sit at most this fraction of the compression work above it.
ANOMALY_TOLERANCE = 0.01


def _phase_path(curve: StressStrainCurve, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(curve.strain[mask], kind="stable")
    return curve.strain[mask][order], curve.stress_pa[mask][order]


def hysteresis_area(curve: StressStrainCurve) -> float:
    """Energy density (Pa = J/m³) enclosed between compression and decompression.

    The decompression path starts at the turning point, so the loop is
    closed at maximum strain.
    """
    c_mask = curve.compression_mask
    d_idx = np.flatnonzero(curve.decompression_mask)
    if np.count_nonzero(c_mask) < 2:
        raise PhaseError("hysteresis needs a compression phase")
    if d_idx.size == 0:
        raise PhaseError("hysteresis needs a decompression phase")
    turn = np.flatnonzero(c_mask)[-1]
    d_mask = np.zeros(len(curve), dtype=bool)
    d_mask[d_idx] = True
    d_mask[turn] = True

    c_strain, c_stress = _phase_path(curve, c_mask)
    d_strain, d_stress = _phase_path(curve, d_mask)
    low = max(c_strain[0], d_strain[0])
    high = min(c_strain[-1], d_strain[-1])
    if not high > low:
        raise PhaseError("compression and decompression share no strain interval")

    grid = np.unique(np.concatenate([c_strain, d_strain, [low, high]]))
    grid = grid[(grid >= low) & (grid <= high)]
    upper = np.interp(grid, c_strain, c_stress)
    lower = np.interp(grid, d_strain, d_stress)
    area = float(trapezoid(upper - lower, grid))
    work = float(trapezoid(upper, grid))
    if area < -ANOMALY_TOLERANCE * abs(work):
        raise HysteresisAnomalyError(
            f"decompression lies above compression (loop area {area:.4g} Pa)",
        )
    return area


def mean_strain_rate(curve: StressStrainCurve) -> float:
    """Mean absolute strain rate over the loaded samples."""
    rates = np.abs(curve.strain_rate[curve.compression_mask | curve.decompression_mask])
    return float(np.mean(rates)) if rates.size else 0.0


@dataclass(frozen=True)
class LoopEnergy:
    mean_strain_rate: float
    energy_pa: float
    speed_mm_s: float = math.nan
    label: str = ""
    cycle_index: int = 1


def loop_energy(curve: StressStrainCurve) -> LoopEnergy:
    if curve.sampling_mode is SamplingMode.FORCE_THRESHOLD:
        raise UnsupportedModeError(
            "force-threshold sampling has no usable strain rate for loop energy",
        )
    return LoopEnergy(
        mean_strain_rate=mean_strain_rate(curve),
        energy_pa=hysteresis_area(curve),
        speed_mm_s=curve.speed_mm_s,
        label=curve.label,
        cycle_index=curve.cycle_index,
    )


def eta_from_speeds(loops: Sequence[LoopEnergy | tuple[float, float]]) -> EnergyLossSeries:
    """Slope of loop energy against mean strain rate (Pa·s)."""
    records = [
        loop if isinstance(loop, LoopEnergy) else LoopEnergy(float(loop[0]), float(loop[1]))
        for loop in loops
    ]
    rates = np.array([r.mean_strain_rate for r in records])
    energies = np.array([r.energy_pa for r in records])
    if len(records) < 2 or np.ptp(rates) == 0:
        raise RankDeficiencyError("energy-loss regression needs at least two distinct strain rates")
    slope, intercept, r2 = fit_line(rates, energies)
    labels = {r.label for r in records}
    return EnergyLossSeries(
        speeds_mm_s=[r.speed_mm_s for r in records],
        mean_strain_rates=rates,
        loop_energies_pa=energies,
        eta_loss=slope,
        intercept=intercept,
        r2=r2,
        label=labels.pop() if len(labels) == 1 else "",
    )


def rate_variation(strain_rate: np.ndarray) -> float:
    """Coefficient of variation of the strain rate (population std)."""
    std = float(np.std(strain_rate))
    if std == 0:
        return 0.0
    mean = abs(float(np.mean(strain_rate)))
    return math.inf if mean == 0 else std / mean


def _loaded(curve: StressStrainCurve, eps_min: float) -> np.ndarray:
    return (curve.compression_mask | curve.decompression_mask) & (curve.strain > eps_min)


def _r2(residual: np.ndarray, observed: np.ndarray) -> float:
    total = float(np.sum((observed - observed.mean()) ** 2))
    ss_res = float(residual @ residual)
    if total == 0:
        return 1.0 if ss_res == 0 else 0.0
    return 1.0 - ss_res / total


def fit_kelvin_voigt(
    curve: StressStrainCurve,
    eps_min: float = EPS_MIN,
    cov_threshold: float = COV_THRESHOLD,
) -> ViscoelasticFit:
    """Regress stress on (strain, strain rate) without intercept: sigma = K e + eta e_dot."""
    if curve.sampling_mode is SamplingMode.FORCE_THRESHOLD:
        raise UnsupportedModeError(
            "force-threshold sampling has no usable strain rate for Kelvin-Voigt",
        )
    mask = _loaded(curve, eps_min)
    count = int(np.count_nonzero(mask))
    if count < MIN_KV_SAMPLES:
        raise InsufficientDataError(
            f"{count} samples above strain {eps_min:g}, need {MIN_KV_SAMPLES}",
        )
    strain = curve.strain[mask]
    rate = curve.strain_rate[mask]
    stress = curve.stress_pa[mask]
    design = np.column_stack([strain, rate])

    rank = int(np.linalg.matrix_rank(design))
    if rank < 2:
        solution = lsq_linear(design[:, :1], stress, bounds=(0.0, np.inf), method="bvls")
        K, eta = float(solution.x[0]), 0.0
    else:
        solution = lsq_linear(design, stress, bounds=(0.0, np.inf), method="bvls")
        K, eta = (float(v) for v in solution.x)
    if not K > 0:
        raise FitDomainError("Kelvin-Voigt fit gives non-positive stiffness")

    variation = rate_variation(rate)
    identifiable = rank == 2 and variation >= cov_threshold
    if not identifiable:
        logger.warning(
            "%s: damping not identifiable (rank %d, strain-rate CoV %.3g)",
            curve.label or "curve",
            rank,
            variation,
        )
    residual = stress - design @ np.array([K, eta])
    return ViscoelasticFit(
        model=ModelKind.KELVIN_VOIGT,
        K_pa=K,
        eta_pa_s=eta,
        n=1.0,
        r2=_r2(residual, stress),
        residual_rms=float(np.sqrt(np.mean(residual**2))),
        identifiable=identifiable,
        n_samples=count,
        label=curve.label,
        cycle_index=curve.cycle_index,
        speed_mm_s=curve.speed_mm_s,
        source=curve.source,
    )


@dataclass
class _LogProblem:
    """Residuals of log(sigma) = log K + n log e + log(1 + eta e_dot / K)."""

    log_strain: np.ndarray
    log_stress: np.ndarray
    rate: np.ndarray

    def evaluate(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        log_k, n, eta = theta
        damping = 1.0 + eta * self.rate * math.exp(-log_k)
        valid = damping > 0
        model = log_k + n * self.log_strain[valid] + np.log(damping[valid])
        return self.log_stress[valid] - model, valid, damping

    def jacobian(self, theta: np.ndarray, valid: np.ndarray, damping: np.ndarray) -> np.ndarray:
        log_k = theta[0]
        g = damping[valid]
        return np.column_stack(
            [1.0 / g, self.log_strain[valid], self.rate[valid] * math.exp(-log_k) / g],
        )


def _project(theta: np.ndarray) -> np.ndarray:
    return np.array([theta[0], np.clip(theta[1], *N_BOUNDS), max(theta[2], 0.0)])


def fit_hunt_crossley(
    curve: StressStrainCurve,
    eps_min: float = EPS_MIN,
    cov_threshold: float = COV_THRESHOLD,
    max_iter: int = 200,
    lambda0: float = 1e-3,
) -> ViscoelasticFit:
    """Fit sigma = K e^n + eta e^n e_dot on its logarithmic form.

    Levenberg-Marquardt over (log K, n, eta) with eta >= 0 and n in (0, 10],
    started from the log-log line with eta = 0. Samples whose damping factor
    1 + eta e_dot / K is not positive drop out of that iterate's residual, so
    iterates are compared on the mean squared residual of the samples they
    keep. Force-threshold traces carry no usable strain rate: eta stays at 0
    and the fit is marked not identifiable.
    """
    loaded = _loaded(curve, eps_min)
    non_positive = int(np.count_nonzero(loaded & (curve.stress_kpa <= 0)))
    mask = loaded & (curve.stress_kpa > 0)
    count = int(np.count_nonzero(mask))
    if count < MIN_HC_SAMPLES:
        raise InsufficientDataError(
            f"{count} positive samples above strain {eps_min:g}, need {MIN_HC_SAMPLES}",
        )
    if non_positive:
        logger.warning(
            "%s: %d sample(s) with non-positive stress excluded",
            curve.label or "curve",
            non_positive,
        )
    rate_free = curve.sampling_mode is not SamplingMode.FORCE_THRESHOLD
    if not rate_free:
        logger.warning(
            "%s: force-threshold sampling, damping fixed at 0",
            curve.label or "curve",
        )
    free = slice(None) if rate_free else slice(0, 2)

    problem = _LogProblem(
        log_strain=np.log(curve.strain[mask]),
        log_stress=np.log(curve.stress_pa[mask]),
        rate=curve.strain_rate[mask],
    )
    slope, intercept, _ = fit_line(problem.log_strain, problem.log_stress)
    theta = _project(np.array([intercept, slope, 0.0]))
    residual, valid, damping = problem.evaluate(theta)
    objective = float(residual @ residual) / valid.sum()
    trace = [objective]
    lam = lambda0
    converged = objective == 0.0
    iterations = 0

    while not converged and iterations < max_iter:
        iterations += 1
        jac = problem.jacobian(theta, valid, damping)[:, free]
        normal = jac.T @ jac
        scale = np.diag(normal).copy()
        scale[scale <= 0] = 1e-12 * max(float(scale.max()), 1.0)
        step = np.zeros(3)
        try:
            step[free] = np.linalg.solve(normal + lam * np.diag(scale), jac.T @ residual)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        candidate = _project(theta + step)
        new_residual, new_valid, new_damping = problem.evaluate(candidate)
        kept = int(new_valid.sum())
        new_objective = float(new_residual @ new_residual) / kept if kept else math.inf
        if new_objective <= objective:
            decrease = (objective - new_objective) / objective if objective > 0 else 0.0
            moved = float(np.linalg.norm(candidate - theta))
            theta, residual, valid, damping = candidate, new_residual, new_valid, new_damping
            objective = new_objective
            trace.append(objective)
            lam *= 0.1
            converged = objective == 0.0 or decrease < 1e-10 or moved < 1e-12
        else:
            lam *= 10.0
            # No damped step can lower the objective any more.
            converged = lam > 1e16

    dropped = count - int(valid.sum())
    if dropped:
        logger.warning(
            "%s: %d sample(s) excluded where 1 + eta*rate/K <= 0",
            curve.label or "curve",
            dropped,
        )
    variation = rate_variation(problem.rate[valid])
    identifiable = rate_free and variation >= cov_threshold
    if rate_free and not identifiable:
        logger.warning(
            "%s: damping not identifiable (strain-rate CoV %.3g)",
            curve.label or "curve",
            variation,
        )
    fit = ViscoelasticFit(
        model=ModelKind.HUNT_CROSSLEY,
        K_pa=math.exp(theta[0]),
        eta_pa_s=float(theta[2]),
        n=float(theta[1]),
        r2=_r2(residual, problem.log_stress[valid]),
        residual_rms=math.sqrt(objective),
        identifiable=identifiable,
        excluded_samples=non_positive + dropped,
        iterations=iterations,
        n_samples=int(valid.sum()),
        label=curve.label,
        cycle_index=curve.cycle_index,
        speed_mm_s=curve.speed_mm_s,
        source=curve.source,
        objective_trace=tuple(trace),
    )
    if not converged:
        raise ConvergenceError(
            f"Hunt-Crossley fit did not converge in {max_iter} iterations",
            best=fit,
        )
    return fit


def fit_model(curve: StressStrainCurve, model: ModelKind, **options: Any) -> ViscoelasticFit:
    if model is ModelKind.KELVIN_VOIGT:
        options.pop("max_iter", None)
        options.pop("lambda0", None)
        return fit_kelvin_voigt(curve, **options)
    return fit_hunt_crossley(curve, **options)


@dataclass(frozen=True)
class DeviceAgreement:
    """How well two devices agree on K and eta over the same samples."""

    labels: tuple[str, ...]
    r2_K: float
    r2_eta: float
    spearman_K: float
    spearman_eta: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "labels": list(self.labels),
            "r2_K": self.r2_K,
            "r2_eta": self.r2_eta,
            "spearman_K": self.spearman_K,
            "spearman_eta": self.spearman_eta,
        }


def _mean_by_label(fits: Sequence[ViscoelasticFit]) -> dict[str, tuple[float, float]]:
    grouped: dict[str, list[ViscoelasticFit]] = {}
    for fit in fits:
        grouped.setdefault(fit.label, []).append(fit)
    return {
        label: (
            float(np.mean([f.K_pa for f in group])),
            float(np.mean([f.eta_pa_s for f in group])),
        )
        for label, group in grouped.items()
    }


def compare_devices(
    fits_a: Sequence[ViscoelasticFit],
    fits_b: Sequence[ViscoelasticFit],
) -> DeviceAgreement:
    """Correlate per-sample mean K and eta between two devices.

    Fits are averaged per sample label first (over cycles and speeds).
    """
    means_a, means_b = _mean_by_label(fits_a), _mean_by_label(fits_b)
    labels = tuple(label for label in means_a if label in means_b)
    if len(labels) < 3:
        raise ParameterError("device comparison needs at least 3 shared samples")
    a = np.array([means_a[label] for label in labels])
    b = np.array([means_b[label] for label in labels])

    def r2(x: np.ndarray, y: np.ndarray) -> float:
        if np.ptp(x) == 0 or np.ptp(y) == 0:
            return math.nan
        return float(stats.pearsonr(x, y)[0] ** 2)

    def rho(x: np.ndarray, y: np.ndarray) -> float:
        if np.ptp(x) == 0 or np.ptp(y) == 0:
            return math.nan
        return float(stats.spearmanr(x, y)[0])

    return DeviceAgreement(
        labels=labels,
        r2_K=r2(a[:, 0], b[:, 0]),
        r2_eta=r2(a[:, 1], b[:, 1]),
        spearman_K=rho(a[:, 0], b[:, 0]),
        spearman_eta=rho(a[:, 1], b[:, 1]),
    )
