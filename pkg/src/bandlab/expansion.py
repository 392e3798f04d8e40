"""Free-boundary system for the first nontrivial correction of the fixed-cost expansion.

In rescaled displacement units the O(eps) correction has the quartic profile

    f4(xi) = -(2 / a2) * (D + c1 xi + K/2 xi^2 + B/12 xi^4),    B = sigma^2 f0_zz / 2,

and the band is pinned by value matching across a trade,
``f4(gamma) - f4(eta) = -f0_z`` and ``f4(-beta) - f4(-theta) = -f0_z``,
plus smooth pasting ``f4'(xi) = 0`` at ``gamma, -beta, eta, -theta``.
With D fixed to 0 this is six equations in (gamma, beta, eta, theta, c1, K).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .band_policy import ConvergenceError, optimal_band_fixed
from .frictionless import MertonSolution

RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class QuarticCoeffs:
    K: float
    B: float
    c1: float
    a2: float
    D: float = 0.0

    def __post_init__(self):
        if not self.a2 > 0:
            raise ValueError("a2 must be positive")


@dataclass(frozen=True)
class FreeBoundarySolution:
    gamma: float
    beta: float
    eta: float
    theta: float
    c1: float
    K: float
    residual: float
    iterations: int
    used_homotopy: bool = False


def f4_eval(xi, coeffs: QuarticCoeffs):
    xi = np.asarray(xi, dtype=float)
    c = coeffs
    out = -(2.0 / c.a2) * (c.D + c.c1 * xi + 0.5 * c.K * xi**2 + c.B / 12.0 * xi**4)
    return float(out) if out.ndim == 0 else out


def f4_derivative(xi, coeffs: QuarticCoeffs):
    xi = np.asarray(xi, dtype=float)
    c = coeffs
    out = -(2.0 / c.a2) * (c.c1 + c.K * xi + c.B / 3.0 * xi**3)
    return float(out) if out.ndim == 0 else out


def boundary_residuals(x, B: float, a2: float, fz0: float) -> np.ndarray:
    """The six conditions at ``x = (gamma, beta, eta, theta, c1, K)``, scaled by ``fz0``."""
    gamma, beta, eta, theta, c1, K = x
    q = QuarticCoeffs(K=K, B=B, c1=c1, a2=a2)
    res = np.array([
        f4_eval(gamma, q) - f4_eval(eta, q) + fz0,
        f4_eval(-beta, q) - f4_eval(-theta, q) + fz0,
        f4_derivative(gamma, q),
        f4_derivative(-beta, q),
        f4_derivative(eta, q),
        f4_derivative(-theta, q),
    ])
    return res / fz0


def _jacobian(x, B, a2, fz0):
    gamma, beta, eta, theta, c1, K = x
    s = -2.0 / a2

    def d_xi(xi):  # d f4 / d xi
        return s * (c1 + K * xi + B / 3.0 * xi**3)

    def dd_xi(xi):  # d^2 f4 / d xi^2
        return s * (K + B * xi**2)

    J = np.zeros((6, 6))
    # value matching, top: f4(gamma) - f4(eta)
    J[0] = [d_xi(gamma), 0, -d_xi(eta), 0, s * (gamma - eta), s * 0.5 * (gamma**2 - eta**2)]
    # value matching, bottom: f4(-beta) - f4(-theta)
    J[1] = [0, -d_xi(-beta), 0, d_xi(-theta), s * (-beta + theta), s * 0.5 * (beta**2 - theta**2)]
    J[2] = [dd_xi(gamma), 0, 0, 0, s, s * gamma]
    J[3] = [0, -dd_xi(-beta), 0, 0, s, -s * beta]
    J[4] = [0, 0, dd_xi(eta), 0, s, s * eta]
    J[5] = [0, 0, 0, -dd_xi(-theta), s, -s * theta]
    return J / fz0


def _project(x):
    x = x.copy()
    x[0] = max(x[0], 1e-8)
    x[1] = max(x[1], 1e-8)
    x[2] = min(max(x[2], 0.0), 0.9 * x[0])
    x[3] = min(max(x[3], 0.0), 0.9 * x[1])
    return x


def _fit_linear(x, B, a2, fz0):
    """Least-squares (c1, K) for a fixed geometry; both enter the residuals linearly."""
    x = x.copy()
    x[4:] = 0.0
    r0 = boundary_residuals(x, B, a2, fz0)
    J = _jacobian(x, B, a2, fz0)[:, 4:]
    x[4:] = np.linalg.lstsq(J, -r0, rcond=None)[0]
    return x


def _damped_newton(x, B, a2, fz0, max_iter=100):
    r = boundary_residuals(x, B, a2, fz0)
    norm = np.abs(r).max()
    for it in range(1, max_iter + 1):
        if norm <= 1e-14:
            return x, norm, it
        J = _jacobian(x, B, a2, fz0)
        try:
            step = np.linalg.lstsq(J, -r, rcond=None)[0]
        except np.linalg.LinAlgError:
            return x, norm, it
        # trust region on the geometry keeps iterates away from eta ~ gamma
        cap = 0.5 * max(x[0], x[1])
        big = np.abs(step[:4]).max()
        if big > cap:
            step *= cap / big
        t = 1.0
        while t > 1e-10:
            trial = _project(x + t * step)
            rt = boundary_residuals(trial, B, a2, fz0)
            nt = np.abs(rt).max()
            if nt < (1 - 1e-4 * t) * norm or nt <= 1e-14:
                break
            t *= 0.5
        else:
            return x, norm, it
        x, r, norm = trial, rt, nt
    return x, norm, max_iter


def closed_form_band(B: float, a2: float, fz0: float) -> float:
    """Symmetric solution gamma = (-6 a2 fz0 / B)^(1/4)."""
    return (-6.0 * a2 * fz0 / B) ** 0.25


def _validate(B, a2, fz0):
    if not B < 0:
        raise ValueError("B must be negative (concave frictionless value)")
    if not a2 > 0:
        raise ValueError("a2 must be positive")
    if not fz0 > 0:
        raise ValueError("fz0 must be positive; the band degenerates to zero width")


def solve_free_boundary(B: float, a2: float, fz0: float, x0=None, max_iter=100) -> FreeBoundarySolution:
    """Solve the six boundary conditions for (gamma, beta, eta, theta, c1, K).

    Damped Newton with an analytic Jacobian; iterates are kept in the admissible
    set (positive half-widths, destinations in ``[0, half-width)``). When Newton
    stalls from ``x0`` the start is pulled toward the symmetric closed form
    and Newton is restarted (homotopy in the initial guess). The linear
    unknowns ``c1, K`` of every start are refit to its geometry.
    """
    _validate(B, a2, fz0)
    g_ref = closed_form_band(B, a2, fz0)
    anchor = np.array([g_ref, g_ref, 0.0, 0.0, 0.0, -B * g_ref**2 / 3.0])
    if x0 is None:
        x0 = np.array([1.5 * g_ref, 0.7 * g_ref, 0.2 * g_ref, 0.1 * g_ref, 0.0, 0.0])
    start = _project(np.asarray(x0, dtype=float))

    used_homotopy = False
    total = 0
    for s in (0.0, 0.5, 0.75, 0.9, 0.99, 1.0):
        guess = _fit_linear(_project((1 - s) * start + s * anchor), B, a2, fz0)
        x, norm, its = _damped_newton(guess, B, a2, fz0, max_iter)
        total += its
        if norm <= RESIDUAL_TOL and x[2] < x[0] and x[3] < x[1]:
            break
        used_homotopy = True
    else:
        raise ConvergenceError(f"free-boundary Newton did not converge (residual {norm:.3e})")
    gamma, beta, eta, theta, c1, K = (float(v) for v in x)
    return FreeBoundarySolution(gamma, beta, eta, theta, c1, K, float(norm), total, used_homotopy)


@dataclass(frozen=True)
class ExpansionReport:
    z: float
    t: float
    epsilon: float
    B: float
    a2: float
    fz0: float
    solution: FreeBoundarySolution
    band_from_expansion: float
    band_from_heuristic: float

    @property
    def relative_gap(self) -> float:
        return abs(self.band_from_expansion - self.band_from_heuristic) / self.band_from_heuristic


def expansion_consistency(sol: MertonSolution, z: float, t: float = 0.0, epsilon: float = 1e-4) -> ExpansionReport:
    """Compare the free-boundary band (undoing the eps^(1/4) rescaling) with the heuristic band."""
    a = sol.noise_coefficient(z, t)
    if a == 0:
        raise ValueError("noise coefficient a = 0 at this point")
    B = 0.5 * sol.params.sigma**2 * sol.value_zz(z, t)
    a2 = a**2
    fz0 = sol.value_z(z, t)
    fb = solve_free_boundary(B, a2, fz0)
    return ExpansionReport(
        z=z,
        t=t,
        epsilon=epsilon,
        B=B,
        a2=a2,
        fz0=fz0,
        solution=fb,
        band_from_expansion=fb.gamma * epsilon**0.25,
        band_from_heuristic=optimal_band_fixed(epsilon, sol, z, t),
    )
