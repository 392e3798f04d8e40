import math

import numpy as np
import pytest

from bandlab.band_policy import CostParams
from bandlab.experiments import (
    HISTOGRAM_COLUMNS,
    SWEEP_COLUMNS,
    SweepSpec,
    band_scaling,
    drift_integral_check,
    estimate_value,
    fit_loglog,
    golden_section_max,
    ks_against_density,
    occupancy_histogram,
    occupancy_study,
    policy_for,
    scaling_study,
)
from bandlab.simulation import BandSchedule, ContinuousRebalance, SimConfig, simulate

GRID = (1e-2, 1e-3, 1e-4, 1e-5)


class TestSweepSpec:
    def test_sorted_decreasing(self):
        assert SweepSpec((1e-5, 1e-4, 1e-3, 1e-2)).epsilons == GRID

    @pytest.mark.parametrize("kw", [dict(epsilons=(1e-2, 1e-3, 1e-4)), dict(epsilons=(1e-2, 1e-4, 1e-3, 1e-5)),
                                    dict(epsilons=(1e-2, 1e-2, 1e-3, 1e-4)), dict(q=2.5), dict(mode="magic"),
                                    dict(search_bracket=(1.2, 2.0))])
    def test_invalid(self, kw):
        base = dict(epsilons=GRID)
        base.update(kw)
        with pytest.raises(ValueError):
            SweepSpec(**base)

    def test_coupling(self):
        spec = SweepSpec(GRID, q=0.75, c=2.0)
        assert spec.lam(1e-4) == pytest.approx(2e-3)
        assert SweepSpec(GRID).lam(1e-4) == 0.0


class TestFit:
    def test_exact_power_law(self):
        eps = np.array(GRID)
        slope, icpt = fit_loglog(eps, 3.0 * eps**0.5)
        assert slope == pytest.approx(0.5, abs=1e-12)
        assert icpt == pytest.approx(math.log(3.0), abs=1e-12)

    def test_needs_four_points(self):
        with pytest.raises(ValueError):
            fit_loglog([1, 2, 3], [1, 2, 3])

    def test_golden_section(self):
        x, fx, evals = golden_section_max(lambda v: -(v - 0.3) ** 2, -1.0, 1.0, 1e-6)
        assert x == pytest.approx(0.3, abs=1e-6)
        assert len(evals) < 40


class TestPolicyChoice:
    def test_modes(self, standard):
        assert policy_for(standard, 1e-4, 0.0, "asymptotic").label.startswith("fixed")
        assert policy_for(standard, 1e-4, 1e-3, "asymptotic").label.startswith("balanced")
        assert policy_for(standard, 1e-4, 1e-2, "numeric").label.startswith("numeric")
        with pytest.raises(ValueError):
            policy_for(standard, 1e-4, 1e-2, "asymptotic")


class TestEstimate:
    def test_tight_bands_reach_merton(self, standard):
        est = estimate_value(standard, CostParams(), ContinuousRebalance(),
                             SimConfig(dt=0.01, T=1.0, n_paths=50_000, seed=3))
        assert abs(est.mean - standard.value(1.0, 0.0)) < 3 * est.stderr


class TestScalingStudy:
    @pytest.fixture(scope="class")
    @classmethod
    def report(cls):
        from bandlab.frictionless import MertonSolution

        sol = MertonSolution.from_values(0.1, 0.02, 0.2, -3.0, 1.0)
        return scaling_study(sol, SweepSpec(GRID, n_paths=4000, seed=5, n_boot=50))

    def test_points(self, report):
        assert [p.epsilon for p in report.points] == list(GRID)
        for p in report.points:
            assert p.stderr > 0 and p.gap_stderr > 0
        assert report.points[0].gap > report.points[-1].gap

    def test_crn_reduces_variance(self, report, standard):
        cfg = SweepSpec(GRID, n_paths=4000, seed=5).sim_config(1.0)
        ind = simulate(standard, CostParams(), ContinuousRebalance(), SimConfig(**{**cfg.__dict__, "seed": 99}))
        res = simulate(standard, CostParams(1e-3), BandSchedule.fixed_cost(standard, 1e-3), cfg)
        ctrl = simulate(standard, CostParams(), ContinuousRebalance(), cfg)
        assert np.var(ctrl.utility - res.utility) < 0.01 * np.var(ind.utility - res.utility)

    def test_csv(self, report, tmp_path):
        path = tmp_path / "sweep.csv"
        report.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0].split(",") == SWEEP_COLUMNS
        assert len(lines) == 5

    def test_reproducible(self, report, standard):
        again = scaling_study(standard, SweepSpec(GRID, n_paths=4000, seed=5, n_boot=50))
        assert [p.gap for p in again.points] == [p.gap for p in report.points]
        assert again.fits["gap"].ci == report.fits["gap"].ci

    def test_search_mode_rejected(self, standard):
        with pytest.raises(ValueError):
            scaling_study(standard, SweepSpec(GRID, mode="search"))


class TestBandScaling:
    def test_small_run(self, standard):
        spec = SweepSpec(GRID, n_paths=4000, seed=2, search_tol=0.2)
        rep = band_scaling(standard, spec)
        assert set(rep.fits) >= {"gamma", "gamma_minus_eta"}
        for p in rep.points:
            info = rep.notes["search"][p.epsilon]
            assert p.gamma == pytest.approx(info["scale"] * info["asymptotic_gamma"])


    def test_bracket_failure(self, standard, monkeypatch):
        import bandlab.experiments as ex

        monkeypatch.setattr(ex, "golden_section_max", lambda fn, lo, hi, tol: (hi, 0.0, {hi: 0.0}))
        with pytest.raises(RuntimeError, match="bracket"):
            band_scaling(standard, SweepSpec(GRID, n_paths=10))


class TestOccupancy:
    def test_triangular_density(self, standard):
        eps = 1e-5
        rep = occupancy_study(standard, CostParams(eps), BandSchedule.fixed_cost(standard, eps),
                              SimConfig(dt=1e-3, T=1.0, n_paths=200, seed=1, start="equilibrium"))
        assert rep.n_samples == 200_000
        assert rep.ks < 0.05
        centre = rep.empirical[len(rep.empirical) // 2]
        assert centre > rep.empirical[0] and centre > rep.empirical[-1]

    def test_plateau_density(self, standard):
        # the trade excursion gamma - eta is half the band, so a finer grid is needed
        eps = 1e-7
        pol = BandSchedule.fixed_cost(standard, eps).scaled(1.0, 0.5)
        rep = occupancy_study(standard, CostParams(eps), pol,
                              SimConfig(dt=2.5e-4, T=1.0, n_paths=400, seed=1, start="equilibrium"))
        assert rep.eta_ratio == pytest.approx(0.5)
        assert rep.ks < 0.05
        inner = rep.analytic[(rep.bins[:-1] >= -0.5) & (rep.bins[1:] <= 0.5)]
        assert np.ptp(inner) < 1e-12

    def test_uniform_negative_control(self):
        u = np.random.default_rng(0).uniform(-1, 1, 100_000)
        assert ks_against_density(u) > 0.1

    def test_histogram_csv(self, tmp_path, standard):
        rep = occupancy_study(standard, CostParams(1e-4), BandSchedule.fixed_cost(standard, 1e-4),
                              SimConfig(dt=1e-3, T=1.0, n_paths=20, seed=1, start="equilibrium"), n_bins=10)
        path = tmp_path / "h.csv"
        rep.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0].split(",") == HISTOGRAM_COLUMNS
        assert len(lines) == 11

    def test_too_few_samples(self, standard):
        with pytest.raises(ValueError):
            occupancy_study(standard, CostParams(1e-4), BandSchedule.fixed_cost(standard, 1e-4),
                            SimConfig(dt=1e-2, T=1.0, n_paths=5, seed=1))

    def test_histogram_integrates_to_one(self):
        bins, emp, ana = occupancy_histogram(np.random.default_rng(1).triangular(-1, 0, 1, 10_000))
        assert np.sum(emp * np.diff(bins)) == pytest.approx(1.0)
        assert np.sum(ana * np.diff(bins)) == pytest.approx(1.0)


class TestDriftCheck:
    def test_frictionless_limit(self, standard):
        chk = drift_integral_check(standard, 0.0, SimConfig(dt=1e-3, T=1.0, n_paths=10, seed=0))
        assert chk.gap == 0.0 and chk.integral == 0.0
        assert math.isnan(chk.ratio)

    def test_integral_positive(self, standard):
        chk = drift_integral_check(standard, 1e-3, SimConfig(dt=1e-3, T=1.0, n_paths=2000, seed=0,
                                                             start="equilibrium"))
        assert chk.integral > 0 and chk.integral_stderr > 0
        assert chk.integral == pytest.approx(1.02e-3 / math.sqrt(10) * 1, rel=0.2)
