"""Fast invariant suite behind ``bandlab check``.

Each check returns ``(passed, detail)``; the suite never raises on a failing
check, only records it.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate

from .band_policy import (
    FOC_TOL,
    CostCoefficients,
    CostParams,
    asymptotic_bands,
    density_combined,
    foc_residual,
    optimize_bands,
    optimal_band_fixed,
    second_moment,
    solve_omega,
)
from .expansion import expansion_consistency, solve_free_boundary
from .frictionless import MertonSolution, pde_residual
from .simulation import BandSchedule, SimConfig, simulate


def _standard():
    return MertonSolution.from_values(0.1, 0.02, 0.2, -3.0, 1.0)


def check_merton():
    sol = _standard()
    worst = max(abs(pde_residual(sol, sol.params, z, t)) for z in np.linspace(0.5, 2.0, 8)
                for t in np.linspace(0.0, 0.9, 8))
    ok = worst <= 1e-6 and math.isclose(sol.value(1.0, 0.0), -0.29564, rel_tol=1e-4)
    return ok, f"max residual {worst:.2e}"


def check_density():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(20):
        g = rng.uniform(0.01, 1.0)
        e = rng.uniform(0.0, 0.9) * g
        mass = integrate.quad(density_combined, -g, g, args=(g, e), points=[-e, e], epsabs=1e-13)[0]
        m2 = integrate.quad(lambda x: x * x * density_combined(x, g, e), -g, g, points=[-e, e], epsabs=1e-13)[0]
        worst = max(worst, abs(mass - 1), abs(m2 - second_moment(g, e)))
    return worst <= 1e-10, f"max error {worst:.2e}"


def check_optimizer():
    coeffs = CostCoefficients.from_CR(-1.0, -1.0)
    pol = optimize_bands(coeffs, CostParams(1e-4, 0.0))
    f_m, f_n = foc_residual(pol.m_sum, pol.n_diff, coeffs, CostParams(1e-4, 0.0))
    ok = abs(pol.gamma - 0.1) < 1e-10 and pol.eta < 1e-10 and max(abs(f_m), abs(f_n)) <= FOC_TOL
    bal = CostParams(1e-4, 1e-3)
    pol = optimize_bands(coeffs, bal)
    ref = asymptotic_bands(1e-4, coeffs)
    ok &= math.isclose(pol.gamma, ref.gamma, rel_tol=1e-8)
    return ok, f"balanced gamma {pol.gamma:.6f}"


def check_omega():
    w = solve_omega(1.0, math.sqrt(2.0))
    return abs(w - 1.0) <= 1e-12, f"omega {w!r}"


def check_free_boundary():
    fb = solve_free_boundary(-1.0, 1.0, 1.0 / 6.0)
    ok = (abs(fb.gamma - 1) <= 1e-8 and abs(fb.beta - 1) <= 1e-8 and max(fb.eta, fb.theta, abs(fb.c1)) <= 1e-8
          and abs(fb.K - 1 / 3) <= 1e-8)
    rep = expansion_consistency(_standard(), 1.3, 0.2, 1e-4)
    ok &= rep.relative_gap <= 1e-10
    return ok, f"gamma {fb.gamma:.12f}, consistency {rep.relative_gap:.1e}"


def check_simulation():
    sol = _standard()
    eps = 1e-3
    pol = BandSchedule.fixed_cost(sol, eps)
    cfg = SimConfig(dt=1e-2, T=1.0, n_paths=300, seed=5, block_size=64, start="equilibrium")
    a = simulate(sol, CostParams(eps), pol, cfg, n_workers=1)
    b = simulate(sol, CostParams(eps), pol, cfg, n_workers=3)
    same = np.array_equal(a.utility, b.utility) and np.array_equal(a.n_trades, b.n_trades)
    g = optimal_band_fixed(eps, sol, 1.0)
    return same and not a.bankrupt.any(), f"thread-independent={same}, gamma(1)={g:.4f}"


CHECKS = {
    "merton": check_merton,
    "density": check_density,
    "optimizer": check_optimizer,
    "omega": check_omega,
    "free_boundary": check_free_boundary,
    "simulation": check_simulation,
}


def run_checks() -> dict:
    out = {}
    for name, fn in CHECKS.items():
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed invariant
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out[name] = {"passed": bool(ok), "detail": detail}
    return out
