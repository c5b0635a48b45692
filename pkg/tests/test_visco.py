"""Tests for the visco module."""

import logging
import math

import numpy as np
import pytest

from gripmat.core import (
    ModelKind,
    ModelParams,
    SamplingMode,
    StressStrainCurve,
    ViscoelasticFit,
    synthesize_cycle,
)
from gripmat.errors import (
    ConvergenceError,
    HysteresisAnomalyError,
    InsufficientDataError,
    ParameterError,
    PhaseError,
    RankDeficiencyError,
    UnsupportedModeError,
)
from gripmat.visco import (
    LoopEnergy,
    compare_devices,
    eta_from_speeds,
    fit_hunt_crossley,
    fit_kelvin_voigt,
    fit_model,
    hysteresis_area,
    loop_energy,
    mean_strain_rate,
    rate_variation,
)

KV = ModelKind.KELVIN_VOIGT
HC = ModelKind.HUNT_CROSSLEY


def kv_curve(K=5000.0, eta=1000.0, strain_max=0.5, rate=0.1, samples=1000, **meta):
    cycle = synthesize_cycle(ModelParams(KV, K, eta), strain_max, rate, samples)
    return cycle.to_curve(**meta)


def hc_curve(K, eta, n, samples=500, noise=0.0, seed=0, rate=0.1, strain_max=0.6):
    cycle = synthesize_cycle(ModelParams(HC, K, eta, n), strain_max, rate, samples, noise, seed)
    return cycle.to_curve()


def make_fit(label, K, eta, n=1.0):
    return ViscoelasticFit(HC, K, eta, n, 0.9, 0.1, identifiable=True, label=label)


class TestHysteresis:
    """Test loop area and energy-loss damping."""

    def test_identical_paths(self):
        """Test that coinciding paths enclose no area."""
        curve = kv_curve(eta=0.0)
        assert hysteresis_area(curve) == pytest.approx(0.0, abs=1e-9)

    def test_kv_loop_area(self):
        """Test the analytic KV loop area 2*eta*rate*strain_max."""
        assert hysteresis_area(kv_curve()) == pytest.approx(100.0, rel=5e-3)

    def test_doubling_rate_doubles_area(self):
        """Test that KV loop area is proportional to rate."""
        slow = hysteresis_area(kv_curve(rate=0.1))
        fast = hysteresis_area(kv_curve(rate=0.2))
        assert fast == pytest.approx(2 * slow, rel=5e-3)

    def test_missing_decompression(self):
        """Test that a compression-only curve has no loop."""
        cycle = synthesize_cycle(ModelParams(KV, 5000.0, 0.0), 0.5, 0.1, 50, compression_only=True)
        with pytest.raises(PhaseError):
            hysteresis_area(cycle.to_curve())

    def test_decompression_above_compression(self):
        """Test the unphysical-loop check."""
        strain = np.concatenate([np.linspace(0, 0.5, 50), np.linspace(0.49, 0, 50)])
        stress = np.concatenate([np.linspace(0, 1, 50), 3 * np.linspace(0.49, 0, 50)])
        phase = ["compression"] * 50 + ["decompression"] * 50
        curve = StressStrainCurve.from_arrays(strain, stress, phase=phase)
        with pytest.raises(HysteresisAnomalyError):
            hysteresis_area(curve)

    def test_mean_strain_rate(self):
        """Test the mean absolute rate over a triangular cycle."""
        assert mean_strain_rate(kv_curve(rate=0.2)) == pytest.approx(0.2)

    def test_eta_from_speeds(self):
        """Test energy-loss damping over four rates."""
        loops = [loop_energy(kv_curve(eta=1000.0, rate=r)) for r in (0.05, 0.1, 0.2, 0.4)]
        series = eta_from_speeds(loops)
        assert series.eta_loss == pytest.approx(1000.0, rel=0.01)
        assert series.r2 > 0.999

    def test_loop_area_linear_in_rate(self):
        """Test that KV loop area over four rates is a line through the origin."""
        loops = [loop_energy(kv_curve(eta=1000.0, rate=r)) for r in (0.05, 0.1, 0.2, 0.4)]
        series = eta_from_speeds(loops)
        assert series.r2 > 0.999
        assert abs(series.intercept) < 0.01 * series.loop_energies_pa.max()

    def test_loop_energy_force_threshold(self):
        """Test that thresholded traces give no loop energy."""
        curve = kv_curve(sampling_mode=SamplingMode.FORCE_THRESHOLD)
        with pytest.raises(UnsupportedModeError):
            loop_energy(curve)

    def test_zero_damping_gives_zero_slope(self):
        """Test that an elastic material dissipates nothing."""
        series = eta_from_speeds([(0.1, 0.0), (0.2, 0.0), (0.4, 0.0)])
        assert series.eta_loss == 0.0

    def test_equal_rates_rank_deficient(self):
        """Test that one rate cannot give a slope."""
        with pytest.raises(RankDeficiencyError):
            eta_from_speeds([(0.1, 5.0), (0.1, 6.0)])

    def test_loop_energy_keeps_provenance(self):
        """Test that loop records carry the curve metadata."""
        loop = loop_energy(kv_curve(label="die", speed_mm_s=5.0, cycle_index=2))
        assert loop == LoopEnergy(loop.mean_strain_rate, loop.energy_pa, 5.0, "die", 2)


class TestKelvinVoigt:
    """Test the Kelvin-Voigt regression."""

    def test_exact_recovery(self):
        """Test noiseless recovery to machine precision."""
        fit = fit_kelvin_voigt(kv_curve(K=5000.0, eta=2000.0, samples=300))
        assert fit.K_pa == pytest.approx(5000.0, rel=1e-9)
        assert fit.eta_pa_s == pytest.approx(2000.0, rel=1e-9)
        assert fit.identifiable
        assert fit.r2 == pytest.approx(1.0)

    def test_zero_damping(self):
        """Test that an elastic material fits eta = 0."""
        fit = fit_kelvin_voigt(kv_curve(K=5000.0, eta=0.0, samples=300))
        assert fit.eta_pa_s == pytest.approx(0.0, abs=1e-9)

    def test_compression_only_not_identifiable(self, caplog):
        """Test that a constant rate cannot separate damping."""
        cycle = synthesize_cycle(ModelParams(KV, 5000.0, 500.0), 0.5, 0.1, 100, compression_only=True)
        with caplog.at_level(logging.WARNING, logger="gripmat"):
            fit = fit_kelvin_voigt(cycle.to_curve())
        assert not fit.identifiable
        assert "not identifiable" in caplog.text

    def test_force_threshold_unsupported(self):
        """Test that thresholded traces are refused."""
        curve = kv_curve(sampling_mode=SamplingMode.FORCE_THRESHOLD)
        with pytest.raises(UnsupportedModeError):
            fit_kelvin_voigt(curve)

    def test_too_few_samples(self):
        """Test the minimum sample count above eps_min."""
        curve = StressStrainCurve.from_arrays([0.0, 0.1, 0.2, 0.3], [0.0, 1.0, 2.0, 3.0])
        with pytest.raises(InsufficientDataError):
            fit_kelvin_voigt(curve)

    def test_stress_scaling(self):
        """Test that scaling stress scales both parameters."""
        curve = kv_curve(K=5000.0, eta=2000.0, samples=300)
        fit = fit_kelvin_voigt(curve.scaled(3.0))
        assert fit.K_pa == pytest.approx(15000.0, rel=1e-9)
        assert fit.eta_pa_s == pytest.approx(6000.0, rel=1e-9)


class TestHuntCrossley:
    """Test the logarithmic Hunt-Crossley fit."""

    def test_power_law_without_rate(self):
        """Test that a pure power law is recovered from the log-log start."""
        strain = np.linspace(0.0, 0.6, 200)
        curve = StressStrainCurve.from_arrays(strain, 1.0 * strain**1.5)
        fit = fit_hunt_crossley(curve)
        assert fit.K_pa == pytest.approx(1000.0, rel=1e-9)
        assert fit.n == pytest.approx(1.5, abs=1e-9)
        assert fit.eta_pa_s == pytest.approx(0.0, abs=1e-9)
        assert not fit.identifiable

    def test_noisy_recovery(self):
        """Test recovery from a noisy synthetic cycle."""
        fit = fit_hunt_crossley(hc_curve(2e4, 500.0, 1.5, samples=8000, noise=0.01, seed=4))
        assert fit.K_pa == pytest.approx(2e4, rel=0.05)
        assert fit.n == pytest.approx(1.5, abs=0.1)
        assert fit.eta_pa_s == pytest.approx(500.0, rel=0.15)
        assert fit.identifiable

    def test_noiseless_recovery_is_tight(self):
        """Test close recovery without noise."""
        fit = fit_hunt_crossley(hc_curve(5e3, 1e3, 0.5))
        assert fit.K_pa == pytest.approx(5e3, rel=1e-4)
        assert fit.n == pytest.approx(0.5, abs=1e-4)
        assert fit.eta_pa_s == pytest.approx(1e3, rel=1e-3)

    def test_objective_never_increases(self):
        """Test that accepted steps never raise the objective."""
        fit = fit_hunt_crossley(hc_curve(2e4, 2e3, 2.0, noise=0.01))
        trace = np.array(fit.objective_trace)
        assert len(trace) >= 2
        assert np.all(np.diff(trace) <= 0)

    def test_elastic_data_agrees_with_kv(self):
        """Test that HC with n = 1 matches KV on purely elastic data."""
        curve = kv_curve(K=8000.0, eta=0.0, samples=300)
        kv = fit_kelvin_voigt(curve)
        hc = fit_hunt_crossley(curve)
        assert hc.n == pytest.approx(1.0, abs=1e-6)
        assert hc.K_pa == pytest.approx(kv.K_pa, rel=1e-6)

    def test_non_positive_stress_excluded(self, caplog):
        """Test that non-positive samples are dropped and counted."""
        strain = np.linspace(0.0, 0.6, 100)
        stress = 10.0 * strain**2
        stress[50:53] = 0.0
        with caplog.at_level(logging.WARNING, logger="gripmat"):
            fit = fit_hunt_crossley(StressStrainCurve.from_arrays(strain, stress))
        assert fit.excluded_samples == 3
        assert fit.n == pytest.approx(2.0, abs=1e-6)
        assert "non-positive" in caplog.text

    def test_stress_scaling(self):
        """Test that scaling stress scales K and eta and keeps n."""
        curve = hc_curve(5e3, 1e3, 0.5)
        base = fit_hunt_crossley(curve)
        scaled = fit_hunt_crossley(curve.scaled(3.0))
        assert scaled.K_pa == pytest.approx(3.0 * base.K_pa, rel=1e-6)
        assert scaled.eta_pa_s == pytest.approx(3.0 * base.eta_pa_s, rel=1e-6)
        assert scaled.n == pytest.approx(base.n, abs=1e-9)

    def test_force_threshold_fixes_damping(self, caplog):
        """Test that thresholded traces fit the power law alone."""
        cycle = synthesize_cycle(ModelParams(HC, 2e4, 3000.0, 1.5), 0.6, 0.1, 500)
        curve = cycle.to_curve(sampling_mode=SamplingMode.FORCE_THRESHOLD)
        with caplog.at_level(logging.WARNING, logger="gripmat"):
            fit = fit_hunt_crossley(curve)
        assert fit.eta_pa_s == 0.0
        assert not fit.identifiable
        assert fit.n == pytest.approx(1.5, abs=0.05)
        assert "damping fixed at 0" in caplog.text

    def test_samples_past_damping_limit_excluded(self, caplog):
        """Test that samples with 1 + eta*rate/K <= 0 at the optimum are dropped and counted."""
        K, eta = 1e4, 1e4
        strain = np.linspace(0.05, 0.6, 200)
        steps = np.linspace(0.1, 0.5, 10)
        rate = np.resize(np.concatenate([steps, -steps]), 200)
        stress = K * strain * (1.0 + eta * rate / K)
        # Two fast samples recorded without damping; the true model has no value there.
        strain = np.append(strain, [0.3, 0.31])
        rate = np.append(rate, [-1.5, -1.5])
        stress = np.append(stress, K * strain[-2:])
        curve = StressStrainCurve.from_arrays(strain, stress / 1000.0, strain_rate=rate)
        with caplog.at_level(logging.WARNING, logger="gripmat"):
            fit = fit_hunt_crossley(curve)
        assert fit.excluded_samples == 2
        assert fit.n_samples == 200
        assert fit.K_pa == pytest.approx(K, rel=1e-4)
        assert fit.eta_pa_s == pytest.approx(eta, rel=1e-4)
        assert fit.n == pytest.approx(1.0, abs=1e-4)
        assert "excluded where" in caplog.text

    def test_iteration_cap(self):
        """Test that hitting the iteration cap reports the best iterate."""
        with pytest.raises(ConvergenceError) as excinfo:
            fit_hunt_crossley(hc_curve(2e4, 2e3, 2.0, noise=0.01), max_iter=1)
        best = excinfo.value.best
        assert best is not None
        assert best.iterations == 1

    def test_too_few_samples(self):
        """Test the minimum positive sample count."""
        curve = StressStrainCurve.from_arrays([0.0, 0.1, 0.2], [0.0, 1.0, 2.0])
        with pytest.raises(InsufficientDataError):
            fit_hunt_crossley(curve)

    def test_fit_model_dispatch(self):
        """Test model selection by kind."""
        curve = kv_curve(samples=300)
        assert fit_model(curve, KV, max_iter=5).model is KV
        assert fit_model(hc_curve(5e3, 1e3, 0.5), HC).model is HC


class TestRateVariation:
    """Test the strain-rate coefficient of variation."""

    def test_constant(self):
        """Test a constant rate."""
        assert rate_variation(np.full(10, 0.1)) == 0.0

    def test_symmetric_triangle(self):
        """Test rates that average to zero."""
        assert math.isinf(rate_variation(np.array([0.1, -0.1])))


class TestCompareDevices:
    """Test cross-device agreement."""

    def test_proportional_devices_agree(self):
        """Test perfect rank and linear agreement under a scale factor."""
        a = [make_fit(s, k, e) for s, k, e in (("a", 1e4, 100.0), ("b", 2e4, 300.0), ("c", 4e4, 200.0))]
        b = [make_fit(f.label, 2 * f.K_pa, 3 * f.eta_pa_s) for f in a]
        agreement = compare_devices(a, b)
        assert agreement.r2_K == pytest.approx(1.0)
        assert agreement.r2_eta == pytest.approx(1.0)
        assert agreement.spearman_K == pytest.approx(1.0)
        assert agreement.labels == ("a", "b", "c")

    def test_averages_repeated_labels(self):
        """Test that repeated fits of one sample are averaged."""
        a = [make_fit("a", 1e4, 1.0), make_fit("a", 3e4, 1.0), make_fit("b", 5e4, 2.0), make_fit("c", 9e4, 3.0)]
        b = [make_fit("a", 2e4, 1.0), make_fit("b", 5e4, 2.0), make_fit("c", 9e4, 3.0)]
        assert compare_devices(a, b).r2_K == pytest.approx(1.0)

    def test_needs_three_shared_samples(self):
        """Test the minimum overlap."""
        a = [make_fit("a", 1e4, 1.0), make_fit("b", 2e4, 1.0)]
        with pytest.raises(ParameterError):
            compare_devices(a, a)
