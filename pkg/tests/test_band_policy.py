import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from bandlab.band_policy import (
    FOC_TOL,
    BandPolicy,
    CostCoefficients,
    CostParams,
    asymptotic_bands,
    cost_rate,
    density_cdf,
    density_combined,
    density_quantile,
    drift_shift_fixed,
    foc_residual,
    grid_search_bands,
    hit_rate,
    optimal_band_fixed,
    optimize_bands,
    second_moment,
    solve_omega,
)

UNIT = CostCoefficients.from_CR(-1.0, -1.0)

bands = st.tuples(st.floats(1e-3, 10.0), st.floats(0.0, 0.99)).map(lambda g: (g[0], g[0] * g[1]))


class TestTypes:
    def test_cost_params(self):
        assert CostParams().is_frictionless
        with pytest.raises(ValueError):
            CostParams(-1e-4, 0.0)
        with pytest.raises(ValueError):
            CostParams(1e-4, 1.0)

    def test_band_policy_invariants(self):
        with pytest.raises(ValueError):
            BandPolicy(0.1, 0.1, 0.2, 0.0)
        with pytest.raises(ValueError):
            BandPolicy(0.0, 0.1)
        pol = BandPolicy.symmetric(0.1, 0.1)
        assert pol.is_degenerate

    def test_coefficients_sign_checks(self):
        with pytest.raises(ValueError):
            CostCoefficients.from_CR(1.0, -1.0).check()

    def test_coefficients_from_merton(self, standard):
        c = CostCoefficients.from_merton(standard, 1.0)
        assert c.C == pytest.approx(0.04 * standard.value_zz(1.0, 0.0) / 12)
        assert c.R == pytest.approx(-standard.value_z(1.0, 0.0) * 0.05**2)


class TestDensity:
    def test_peak(self):
        assert density_combined(0.0, 1.0, 0.0) == pytest.approx(1.0)

    def test_vanishes_at_boundary(self):
        assert density_combined(1.0, 1.0, 0.5) == pytest.approx(0.0, abs=1e-15)
        assert density_combined(-1.0, 1.0, 0.5) == pytest.approx(0.0, abs=1e-15)

    def test_outside_band(self):
        with pytest.raises(ValueError):
            density_combined(1.5, 1.0, 0.0)

    def test_degenerate_band(self):
        with pytest.raises(ValueError):
            density_combined(0.0, 1.0, 1.0)

    @settings(max_examples=60, deadline=None)
    @given(bands)
    def test_mass_and_second_moment(self, band):
        g, e = band
        pts = [-e, e] if e > 0 else [0.0]
        mass = integrate.quad(density_combined, -g, g, args=(g, e), points=pts, epsabs=1e-14)[0]
        m2 = integrate.quad(lambda x: x * x * density_combined(x, g, e), -g, g, points=pts, epsabs=1e-14)[0]
        assert mass == pytest.approx(1.0, abs=1e-10)
        assert m2 == pytest.approx(second_moment(g, e), abs=1e-8 * max(1.0, g**2))

    @settings(max_examples=60, deadline=None)
    @given(bands, st.floats(0.0, 1.0))
    def test_quantile_inverts_cdf(self, band, u):
        g, e = band
        assert density_cdf(density_quantile(u, g, e), g, e) == pytest.approx(u, abs=1e-12)

    def test_cdf_symmetry(self):
        x = np.linspace(-0.3, 0.3, 11)
        assert np.allclose(density_cdf(x, 0.3, 0.1) + density_cdf(-x, 0.3, 0.1), 1.0, atol=1e-15)


class TestSecondMoment:
    def test_fixed_only(self):
        assert second_moment(1.0, 0.0) == pytest.approx(1 / 6)

    def test_near_degenerate(self):
        assert second_moment(1.0, 1 - 1e-9) == pytest.approx(1 / 3, rel=1e-8)

    def test_quadrature(self):
        m2 = integrate.quad(lambda x: x * x * density_combined(x, 2.0, 1.0), -2, 2, points=[-1, 1])[0]
        assert second_moment(2.0, 1.0) == pytest.approx(5 / 6)
        assert m2 == pytest.approx(5 / 6, abs=1e-12)


class TestHitRate:
    def test_oracles(self):
        assert hit_rate(1.0, 1.0, 0.0) == pytest.approx(0.5)
        assert hit_rate(0.05, 0.2, 0.1) == pytest.approx(0.0025 / 0.06, rel=1e-12)

    def test_degenerate(self):
        with pytest.raises(ValueError):
            hit_rate(1.0, 1.0, 1.0)


class TestCostRate:
    def test_direct_arithmetic(self):
        m = n = 0.1
        F = cost_rate(m, n, UNIT, CostParams(1e-4, 1e-3))
        assert F == pytest.approx(-0.5 * (m**2 + n**2) - (n * 1e-3 + 1e-4) / (m * n), rel=1e-13)
        assert F == pytest.approx(-0.03, rel=1e-13)

    def test_fixed_only_stationary_point(self):
        m = (1e-4) ** 0.25
        f_m, f_n = foc_residual(m, m, UNIT, CostParams(1e-4, 0.0))
        assert abs(f_m) < 1e-15 and abs(f_n) < 1e-15

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.01, 1.0), st.floats(0.01, 1.0), st.floats(1e-6, 1e-2), st.floats(0.0, 0.1))
    def test_gradient_matches_finite_differences(self, m, frac, eps, lam):
        n = m * frac
        costs = CostParams(eps, lam)
        h = 1e-6 * m
        f_m, f_n = foc_residual(m, n, UNIT, costs)
        fd_m = (cost_rate(m + h, n, UNIT, costs) - cost_rate(m - h, n, UNIT, costs)) / (2 * h)
        hn = 1e-6 * n
        fd_n = (cost_rate(m, n + hn, UNIT, costs) - cost_rate(m, n - hn, UNIT, costs)) / (2 * hn)
        scale = abs(cost_rate(m, n, UNIT, costs))
        assert f_m == pytest.approx(fd_m, rel=1e-5, abs=1e-6 * scale / m)
        assert f_n == pytest.approx(fd_n, rel=1e-5, abs=1e-6 * scale / n)

    def test_zero_n_only_without_fixed_cost(self):
        with pytest.raises(ValueError):
            cost_rate(0.1, 0.0, UNIT, CostParams(1e-4, 0.0))
        assert cost_rate(0.1, 0.0, UNIT, CostParams(0.0, 1e-3)) == pytest.approx(-0.005 - 0.01)


class TestOptimizeBands:
    def test_fixed_only(self):
        pol = optimize_bands(UNIT, CostParams(1e-4, 0.0))
        assert pol.gamma == pytest.approx(0.1, abs=1e-12)
        assert pol.eta == pytest.approx(0.0, abs=1e-12)

    def test_proportional_only(self):
        pol = optimize_bands(UNIT, CostParams(0.0, 1e-3))
        assert pol.gamma == pytest.approx(0.05, rel=1e-12)
        assert pol.eta == pytest.approx(0.05, rel=1e-12)

    def test_balanced_matches_asymptotic(self):
        eps = 1e-4
        pol = optimize_bands(UNIT, CostParams(eps, eps**0.75))
        ref = asymptotic_bands(eps, UNIT)
        assert pol.gamma == pytest.approx(ref.gamma, rel=1e-2)
        assert pol.eta == pytest.approx(ref.eta, rel=1e-2)

    def test_frictionless_rejected(self):
        with pytest.raises(ValueError):
            optimize_bands(UNIT, CostParams())

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-10, -0.01), st.floats(-10, -0.01), st.floats(1e-8, 1e-2), st.floats(0.0, 0.05))
    def test_foc_and_grid(self, C, R, eps, lam):
        coeffs = CostCoefficients.from_CR(C, R)
        costs = CostParams(eps, lam)
        pol = optimize_bands(coeffs, costs)
        f_m, f_n = foc_residual(pol.m_sum, pol.n_diff, coeffs, costs)
        assert abs(f_m) <= FOC_TOL * abs(C) * pol.m_sum
        assert abs(f_n) <= FOC_TOL * abs(C) * pol.n_diff
        F = cost_rate(pol.m_sum, pol.n_diff, coeffs, costs)
        _, _, F_grid = grid_search_bands(coeffs, costs, pol.m_sum / 30, pol.m_sum * 30, 60)
        assert F >= F_grid - 1e-12 * abs(F)

    def test_limit_recovery_small_lambda(self, standard):
        eps = 1e-4
        coeffs = CostCoefficients.from_merton(standard, 1.0)
        pol = optimize_bands(coeffs, CostParams(eps, 1e-14))
        assert pol.eta < 1e-6
        assert pol.gamma == pytest.approx(optimal_band_fixed(eps, standard), rel=1e-6)

    def test_balance_trend(self):
        # n/m shrinks with eps for q < 3/4 and settles for q = 3/4
        eps = np.logspace(-8, -4, 5)
        for q, trend in ((0.5, "down"), (0.75, "flat")):
            r = []
            for e in eps:
                pol = optimize_bands(UNIT, CostParams(e, e**q))
                r.append(pol.n_diff / pol.m_sum)
            r = np.array(r)
            if trend == "down":
                assert np.all(np.diff(r) > 0)  # eps grows along the array
            else:
                assert np.ptp(r) / r.mean() < 1e-2


class TestOmega:
    def test_exact_one(self):
        assert solve_omega(1.0, math.sqrt(2.0)) == pytest.approx(1.0, abs=1e-12)
        assert solve_omega(-2.0, -2.0 * math.sqrt(2.0)) == pytest.approx(1.0, abs=1e-12)

    def test_equal_coefficients(self):
        w = solve_omega(-1.0, -1.0)
        assert 0.92 < w < 0.93
        assert w**8 * (w + 1) == pytest.approx(1.0, rel=1e-14)

    def test_zero_coefficients(self):
        with pytest.raises(ValueError):
            solve_omega(0.0, 1.0)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-100, -1e-3), st.floats(-100, -1e-3), st.floats(1e-10, 1e-2))
    def test_m_n_identity(self, C, R, eps):
        sol = asymptotic_bands(eps, CostCoefficients.from_CR(C, R))
        assert sol.m_sum == pytest.approx(sol.n_diff * math.sqrt(sol.omega + 1), rel=1e-12)


class TestFixedCostClosedForm:
    def test_matches_optimizer(self, standard):
        eps = 1e-4
        g = optimal_band_fixed(eps, standard)
        pol = optimize_bands(CostCoefficients.from_merton(standard, 1.0), CostParams(eps, 0.0))
        assert g == pytest.approx(pol.gamma, rel=1e-10)
        assert g == pytest.approx(0.065804, rel=1e-5)

    def test_scaling_in_wealth(self, standard):
        g = optimal_band_fixed(1e-4, standard, np.array([1.0, 16.0]))
        assert g[1] / g[0] == pytest.approx(8.0, rel=1e-12)

    def test_drift_shift_is_optimal_value(self, standard):
        eps = 1e-4
        coeffs = CostCoefficients.from_merton(standard, 1.0)
        pol = optimize_bands(coeffs, CostParams(eps, 0.0))
        F = cost_rate(pol.m_sum, pol.n_diff, coeffs, CostParams(eps, 0.0))
        assert drift_shift_fixed(eps, standard) == pytest.approx(F, rel=1e-10)

    def test_zero_noise_rejected(self):
        from bandlab.frictionless import MertonSolution

        with pytest.raises(ValueError):
            optimal_band_fixed(1e-4, MertonSolution.from_values(0.02, 0.02, 0.2, -3.0, 1.0))
