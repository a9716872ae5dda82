import numpy as np
import pytest

import cbfda.experiment as experiment
from cbfda.errors import ConfigurationError, EnsembleError, FitError
from cbfda.fields import Grid
from cbfda.interpolant import InterpolantSpec
from cbfda.noise import NoiseCoefficient, QWienerSpec, member_rng
from cbfda.dynamics import AssimilationConfig, StepperConfig
from cbfda.experiment import (
    fit_exponential_rate,
    fit_polynomial_rate,
    moment_tracker,
    run_ensemble,
    run_truth_ensemble,
    split_half_consistency,
    weighted_contraction_diagnostic,
    write_ensemble_csv,
)
from cbfda.operators import ModelParams

from conftest import make_field

GRID = Grid(2, 32)
SPEC = QWienerSpec(GRID)
INTERP = InterpolantSpec("spectral", 0.25)


def params(**kw):
    base = dict(mu=0.1, alpha=0.0, beta=0.1, varpi=2.0, dim=2)
    base.update(kw)
    return ModelParams(**base)


def assim_config(sigma=2.0, s1=31, s2=32, rms=0.15):
    return AssimilationConfig(sigma, INTERP, make_field(GRID, s1, rms=rms),
                              make_field(GRID, s2, rms=rms))


class TestRunEnsemble:
    def test_degenerate_identical_members(self, monkeypatch):
        # forcing every member onto one stream collapses the spread to zero
        monkeypatch.setattr(experiment, "member_rng", lambda s, m: member_rng(s, 0))
        noise = NoiseCoefficient("additive", 0.05, SPEC)
        st = StepperConfig(dt=2e-3, t_end=0.05, record_stride=5)
        ens = run_ensemble(params(), noise, assim_config(), st, 2, 11)
        assert np.all(ens.stderr == 0.0)

    def test_deterministic(self):
        noise = NoiseCoefficient("additive", 0.05, SPEC)
        st = StepperConfig(dt=2e-3, t_end=0.05, record_stride=5)
        a = run_ensemble(params(), noise, assim_config(), st, 3, 12)
        b = run_ensemble(params(), noise, assim_config(), st, 3, 12)
        assert np.array_equal(a.mean_err_l2sq, b.mean_err_l2sq)
        assert np.array_equal(a.member_err_l2sq, b.member_err_l2sq)

    def test_null_control_keeps_error(self):
        noise = NoiseCoefficient("additive", 0.02, SPEC)
        st = StepperConfig(dt=2e-3, t_end=1.0, record_stride=25)
        ens = run_ensemble(params(), noise, assim_config(sigma=0.0), st, 2, 13)
        assert np.all(ens.mean_err_l2sq >= 0.1 * ens.mean_err_l2sq[0])

    def test_stderr_clt_scaling(self):
        noise = NoiseCoefficient("multiplicative", 0.6, SPEC)
        st = StepperConfig(dt=2e-3, t_end=0.4, record_stride=20)
        small = run_ensemble(params(), noise, assim_config(sigma=1.0), st, 8, 14)
        big = run_ensemble(params(), noise, assim_config(sigma=1.0), st, 16, 14)
        sel = small.mean_err_l2sq > 1e-12
        ratio = np.median(small.stderr[sel] / np.maximum(big.stderr[sel], 1e-300))
        assert np.sqrt(2.0) * 0.8 <= ratio <= np.sqrt(2.0) * 1.25

    def test_split_half_consistency(self):
        noise = NoiseCoefficient("multiplicative", 0.4, SPEC)
        st = StepperConfig(dt=2e-3, t_end=0.2, record_stride=10)
        ens = run_ensemble(params(), noise, assim_config(sigma=1.0), st, 12, 15)
        assert split_half_consistency(ens) <= 3.0

    def test_additive_error_decay_identical_across_members(self):
        # linear error dynamics (convection off, varpi = 1): additive noise
        # cancels in the error equation, so every member's error series is
        # the same deterministic curve regardless of its noise realization
        lin = params(varpi=1.0, alpha=0.1)
        noise = NoiseCoefficient("additive", 0.1, SPEC)
        st = StepperConfig(dt=2e-3, t_end=0.3, record_stride=15,
                           include_convection=False)
        ens = run_ensemble(lin, noise, assim_config(sigma=1.5), st, 4, 25)
        spread = np.max(np.abs(ens.member_err_l2sq - ens.member_err_l2sq[0]), axis=0)
        assert np.all(spread <= 1e-6 * ens.member_err_l2sq[0][0])

    def test_exclusion_policy(self):
        # blow-up configuration: every member excluded -> ensemble rejected
        bad = params(mu=0.01, beta=1e8, varpi=5.0)
        st = StepperConfig(dt=2e-3, t_end=0.1)
        cfg = AssimilationConfig(0.0, INTERP, make_field(GRID, 41, rms=0.5),
                                 make_field(GRID, 42, rms=0.5))
        with pytest.raises(EnsembleError):
            run_ensemble(bad, None, cfg, st, 4, 16)

    def test_needs_two_members(self):
        with pytest.raises(ConfigurationError):
            run_ensemble(params(), None, assim_config(), StepperConfig(dt=1e-3, t_end=0.01), 1, 0)


class TestFits:
    def test_exact_exponential(self):
        t = np.linspace(0, 5, 200)
        fit = fit_exponential_rate(t, np.exp(-3.0 * t))
        assert fit.rate == pytest.approx(3.0, abs=1e-8)
        assert fit.r_squared > 0.999999

    def test_floor_excludes_flat_tail(self):
        t = np.linspace(0, 10, 400)
        v = np.exp(-5.0 * t)
        v[v < 1e-16] = 1e-16
        fit = fit_exponential_rate(t, v)
        assert fit.rate == pytest.approx(5.0, rel=1e-6)

    def test_noisy_exponential(self):
        rng = np.random.default_rng(3)
        t = np.linspace(0, 5, 300)
        v = np.exp(-2.0 * t) * (1.0 + 0.05 * rng.standard_normal(t.size))
        fit = fit_exponential_rate(t, v, window=(0.0, 5.0))
        assert fit.rate == pytest.approx(2.0, rel=0.05)

    def test_exact_polynomial(self):
        t = np.linspace(0.5, 20, 300)
        fit = fit_polynomial_rate(t, t**-2.0)
        assert fit.rate == pytest.approx(2.0, abs=1e-8)

    def test_model_selection_signal(self):
        t = np.linspace(0.5, 8, 200)
        v = np.exp(-t)
        poly = fit_polynomial_rate(t, v)
        expo = fit_exponential_rate(t, v)
        assert poly.r_squared < expo.r_squared

    def test_polynomial_window_must_be_positive(self):
        t = np.linspace(0.0, 5, 100)
        with pytest.raises(FitError):
            fit_polynomial_rate(t, np.exp(-t), window=(0.0, 5.0))

    def test_too_few_samples(self):
        with pytest.raises(FitError):
            fit_exponential_rate(np.arange(5.0), np.exp(-np.arange(5.0)))

    def test_synthetic_rate_recovery_tight(self):
        t = np.linspace(0, 3, 64)
        for rate in (0.5, 1.7, 4.0):
            fit = fit_exponential_rate(t, 2.5 * np.exp(-rate * t))
            assert fit.rate == pytest.approx(rate, rel=1e-6)


class TestMoments:
    def test_pure_dissipation_monotone(self):
        st = StepperConfig(dt=2e-3, t_end=0.5, record_stride=10)
        ens = run_truth_ensemble(make_field(GRID, 51, rms=0.2), params(), None, st, 2, 17)
        report = moment_tracker(ens, (1, 2))
        for p in (1, 2):
            s = report.series[p]
            assert np.all(np.diff(s) <= 1e-12)
        assert report.verdict == "bounded"

    def test_noise_sustained_plateau(self):
        noise = NoiseCoefficient("additive", 0.05, SPEC)
        st = StepperConfig(dt=2e-3, t_end=2.0, record_stride=25)
        ens = run_truth_ensemble(make_field(GRID, 52, rms=0.02), params(alpha=0.1), noise, st, 4, 18)
        report = moment_tracker(ens, (1, 2))
        assert report.verdict == "bounded"

    def test_p_order_bounds(self):
        st = StepperConfig(dt=2e-3, t_end=0.02)
        ens = run_truth_ensemble(make_field(GRID, 53), params(), None, st, 2, 19)
        with pytest.raises(ConfigurationError):
            moment_tracker(ens, (0.5,))
        with pytest.raises(ConfigurationError):
            moment_tracker(ens, (5,))


class TestWeightedDiagnostic:
    def test_initial_value_exact(self):
        noise = NoiseCoefficient("additive", 0.02, SPEC)
        st = StepperConfig(dt=2e-3, t_end=0.2, record_stride=10)
        ens = run_ensemble(params(), noise, assim_config(sigma=1.0), st, 4, 20)
        diag = weighted_contraction_diagnostic(ens, params(), 1.0, delta=0.0)
        assert diag.mean[0] == pytest.approx(float(ens.mean_err_l2sq[0]), rel=1e-14)

    def test_sigma_zero_weight_below_one(self):
        # sigma = 0, delta = 0, L = 0, alpha = 0: the weight is
        # exp(-(2/mu) int ||zeta||_V^2) < 1, so the diagnostic holds whenever
        # the raw error does not grow
        noise = NoiseCoefficient("additive", 0.02, SPEC)
        st = StepperConfig(dt=2e-3, t_end=0.3, record_stride=10)
        ens = run_ensemble(params(), noise, assim_config(sigma=0.0), st, 3, 21)
        diag = weighted_contraction_diagnostic(ens, params(), 0.0, delta=0.0)
        assert np.all(diag.mean <= diag.mean[0] * (1.6))

    def test_missing_records(self):
        ens = run_truth_ensemble(make_field(GRID, 54), params(), None,
                                 StepperConfig(dt=1e-3, t_end=0.01), 2, 22)
        with pytest.raises(ConfigurationError, match="diagnostic unavailable"):
            weighted_contraction_diagnostic(ens, params(), 1.0, delta=0.0)


class TestEnsembleCsv:
    def test_columns_and_determinism(self, tmp_path):
        noise = NoiseCoefficient("additive", 0.05, SPEC)
        st = StepperConfig(dt=2e-3, t_end=0.04, record_stride=5)
        ens = run_ensemble(params(), noise, assim_config(), st, 2, 23)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_ensemble_csv(ens, p1, ["config: {}"])
        write_ensemble_csv(ens, p2, ["config: {}"])
        assert p1.read_bytes() == p2.read_bytes()
        header = [l for l in p1.read_text().splitlines() if not l.startswith("#")][0]
        assert header.split(",")[:3] == ["t", "mean_err_l2sq", "stderr"]
