import numpy as np
import pytest

from bandlab.band_policy import ConvergenceError, optimal_band_fixed
from bandlab.expansion import (
    QuarticCoeffs,
    boundary_residuals,
    closed_form_band,
    expansion_consistency,
    f4_derivative,
    f4_eval,
    solve_free_boundary,
)
from bandlab.frictionless import MertonSolution


class TestQuartic:
    def test_origin(self):
        assert f4_eval(0.0, QuarticCoeffs(K=0.7, B=-1.0, c1=0.0, a2=2.0)) == 0.0

    def test_unit_instance(self):
        q = QuarticCoeffs(K=1 / 3, B=-1.0, c1=0.0, a2=1.0)
        assert f4_eval(1.0, q) == pytest.approx(-1 / 6, rel=1e-15)
        assert f4_derivative(1.0, q) == pytest.approx(0.0, abs=1e-15)

    def test_derivative_matches_fd(self):
        q = QuarticCoeffs(K=0.4, B=-2.0, c1=0.1, a2=0.3)
        x, h = np.linspace(-1, 1, 9), 1e-6
        fd = (f4_eval(x + h, q) - f4_eval(x - h, q)) / (2 * h)
        assert np.allclose(f4_derivative(x, q), fd, rtol=1e-7, atol=1e-8)

    def test_a2_positive(self):
        with pytest.raises(ValueError):
            QuarticCoeffs(K=0.0, B=-1.0, c1=0.0, a2=0.0)


class TestSolver:
    def test_unit_instance(self):
        fb = solve_free_boundary(-1.0, 1.0, 1 / 6)
        assert fb.gamma == pytest.approx(1.0, abs=1e-8)
        assert fb.beta == pytest.approx(1.0, abs=1e-8)
        assert max(fb.eta, fb.theta, abs(fb.c1)) <= 1e-8
        assert fb.K == pytest.approx(1 / 3, abs=1e-8)
        x = [fb.gamma, fb.beta, fb.eta, fb.theta, fb.c1, fb.K]
        assert np.abs(boundary_residuals(x, -1.0, 1.0, 1 / 6)).max() < 1e-10

    def test_closed_form(self):
        assert closed_form_band(-1.0, 1.0, 1 / 6) == pytest.approx(1.0)
        fb = solve_free_boundary(-0.3, 0.02, 0.9)
        assert fb.gamma == pytest.approx(closed_form_band(-0.3, 0.02, 0.9), rel=1e-10)
        assert fb.K == pytest.approx(0.3 * fb.gamma**2 / 3, rel=1e-10)

    @pytest.mark.parametrize("args", [(-1.0, 1.0, 0.0), (1.0, 1.0, 1 / 6), (-1.0, 0.0, 1 / 6)])
    def test_invalid_inputs(self, args):
        with pytest.raises(ValueError):
            solve_free_boundary(*args)

    def test_random_starts_reach_symmetric_solution(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            x0 = np.concatenate([rng.uniform(0.3, 2.0, 2), rng.uniform(0.0, 0.5, 2), rng.normal(0, 0.3, 2)])
            fb = solve_free_boundary(-1.0, 1.0, 1 / 6, x0=x0)
            assert fb.gamma == pytest.approx(1.0, abs=1e-8)
            assert fb.eta <= 1e-8 and fb.theta <= 1e-8

    def test_start_at_solution(self):
        fb = solve_free_boundary(-1.0, 1.0, 1 / 6, x0=[1.0, 1.0, 0.0, 0.0, 0.0, 1 / 3])
        assert not fb.used_homotopy and fb.iterations == 1

    def test_nonconvergence_raises(self, monkeypatch):
        import bandlab.expansion as ex

        monkeypatch.setattr(ex, "_damped_newton", lambda x, *a, **k: (x, 1.0, 1))
        with pytest.raises(ConvergenceError):
            solve_free_boundary(-1.0, 1.0, 1 / 6)


class TestConsistency:
    def test_random_market_points(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            mu = rng.uniform(0.04, 0.15)
            r = rng.uniform(0.0, 0.03)
            sigma = rng.uniform(0.15, 0.4)
            p = rng.uniform(-6.0, -0.5)
            sol = MertonSolution.from_values(mu, r, sigma, p, 2.0)
            if abs(1 - sol.merton_fraction) < 1e-3:
                continue
            z, t = rng.uniform(0.5, 3.0), rng.uniform(0.0, 1.5)
            rep = expansion_consistency(sol, z, t, 1e-4)
            assert rep.relative_gap <= 1e-10
            assert rep.band_from_heuristic == optimal_band_fixed(1e-4, sol, z, t)

    def test_zero_noise(self):
        sol = MertonSolution.from_values(0.02, 0.02, 0.2, -3.0, 1.0)
        with pytest.raises(ValueError):
            expansion_consistency(sol, 1.0)
