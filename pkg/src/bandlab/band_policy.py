"""Band-policy analytics for impulse rebalancing under fixed and proportional costs.

A symmetric band policy keeps the displacement ``xi = X - m(Z, t)`` inside
``(-gamma, gamma)``; on hitting ``+-gamma`` the portfolio is moved to
``+-eta``. In the quasi-steady state the displacement density is flat on
``|xi| <= eta`` and decays linearly to zero at ``|xi| = gamma``.

With ``m = gamma + eta`` and ``n = gamma - eta`` the leading-order drift of
the frictionless value along such a policy is

    F(m, n) = C/2 (m^2 + n^2) + R (n * lam + eps) / (m n),
    C = sigma^2 f0_zz / 12,   R = -f0_z a^2,

which the optimizers below maximize.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .frictionless import MertonSolution

FOC_TOL = 1e-10


class ConvergenceError(RuntimeError):
    """A numerical solver failed to reach its tolerance."""


@dataclass(frozen=True)
class CostParams:
    """Fixed cost ``epsilon`` (dollars per trade) and proportional cost ``lam``."""

    epsilon: float = 0.0
    lam: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon >= 0):
            raise ValueError("epsilon must be finite and >= 0")
        if not (math.isfinite(self.lam) and 0 <= self.lam < 1):
            raise ValueError("lambda must satisfy 0 <= lambda < 1")

    @property
    def is_frictionless(self) -> bool:
        return self.epsilon == 0 and self.lam == 0


@dataclass(frozen=True)
class BandPolicy:
    """Hold region ``(-beta, gamma)`` with destinations ``eta`` (from the top) and ``-theta``.

    ``eta == gamma`` is admitted only as the proportional-only limit, where the
    band degenerates into a reflecting barrier; such a policy cannot be simulated.
    """

    gamma: float
    beta: float
    eta: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        vals = (self.gamma, self.beta, self.eta, self.theta)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("band parameters must be finite")
        if self.gamma <= 0 or self.beta <= 0:
            raise ValueError("gamma and beta must be positive")
        if not (0 <= self.eta <= self.gamma and 0 <= self.theta <= self.beta):
            raise ValueError("need 0 <= eta <= gamma and 0 <= theta <= beta")

    @classmethod
    def symmetric(cls, gamma: float, eta: float = 0.0) -> "BandPolicy":
        return cls(gamma, gamma, eta, eta)

    @property
    def is_symmetric(self) -> bool:
        return self.gamma == self.beta and self.eta == self.theta

    @property
    def is_degenerate(self) -> bool:
        return self.eta >= self.gamma or self.theta >= self.beta

    @property
    def m_sum(self) -> float:
        return self.gamma + self.eta

    @property
    def n_diff(self) -> float:
        return self.gamma - self.eta

    def bands(self, z, t):
        return self.gamma, self.beta, self.eta, self.theta


@dataclass(frozen=True)
class CostCoefficients:
    C: float
    R: float
    a: float
    fz: float
    fzz: float

    @classmethod
    def from_merton(cls, sol: MertonSolution, z: float, t: float = 0.0) -> "CostCoefficients":
        fz = sol.value_z(z, t)
        fzz = sol.value_zz(z, t)
        a = sol.noise_coefficient(z, t)
        return cls(
            C=sol.params.sigma**2 * fzz / 12.0,
            R=-fz * a**2,
            a=a,
            fz=fz,
            fzz=fzz,
        )

    @classmethod
    def from_CR(cls, C: float, R: float) -> "CostCoefficients":
        """Coefficients known only through ``C`` and ``R`` (a, fz, fzz left as nan)."""
        return cls(C=C, R=R, a=math.nan, fz=math.nan, fzz=math.nan)

    def check(self):
        if not (self.C < 0 and self.R < 0):
            raise ValueError(f"need C < 0 and R < 0, got C={self.C}, R={self.R}")


@dataclass(frozen=True)
class BalanceSolution:
    omega: float
    m_sum: float
    n_diff: float

    @property
    def gamma(self) -> float:
        return 0.5 * (self.m_sum + self.n_diff)

    @property
    def eta(self) -> float:
        return 0.5 * (self.m_sum - self.n_diff)

    def policy(self) -> BandPolicy:
        return BandPolicy.symmetric(self.gamma, self.eta)


# ---------------------------------------------------------------------------
# equilibrium density


def _check_band(gamma, eta):
    gamma = np.asarray(gamma, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if np.any(gamma <= 0) or np.any(eta < 0) or np.any(eta >= gamma):
        raise ValueError("need 0 <= eta < gamma")
    return gamma, eta


def density_combined(xi, gamma: float, eta: float = 0.0):
    """Quasi-steady density of the displacement under a symmetric band.

    u(xi) = 1/(gamma + eta) - ((|xi| - eta) / (gamma^2 - eta^2))_+ on [-gamma, gamma].
    """
    gamma, eta = _check_band(gamma, eta)
    xi = np.asarray(xi, dtype=float)
    if np.any(np.abs(xi) > gamma * (1 + 1e-14)):
        raise ValueError("|xi| must not exceed gamma")
    u = 1.0 / (gamma + eta) - np.maximum(np.abs(xi) - eta, 0.0) / (gamma**2 - eta**2)
    u = np.maximum(u, 0.0)
    return float(u) if u.ndim == 0 else u


def density_cdf(xi, gamma: float, eta: float = 0.0):
    """Cumulative distribution of :func:`density_combined`; clipped outside the band."""
    gamma, eta = _check_band(gamma, eta)
    x = np.clip(np.asarray(xi, dtype=float), -gamma, gamma)
    ax = np.abs(x)
    h = 1.0 / (gamma + eta)
    # mass in [0, |x|]
    flat = h * np.minimum(ax, eta)
    d = np.maximum(ax - eta, 0.0)
    sloped = h * d - 0.5 * d**2 / (gamma**2 - eta**2)
    half = flat + sloped
    out = 0.5 + np.sign(x) * half
    return float(out) if out.ndim == 0 else out


def density_quantile(u, gamma, eta=0.0):
    """Inverse of :func:`density_cdf`; vectorized over ``u`` (and band arrays)."""
    gamma, eta = _check_band(gamma, eta)
    u = np.asarray(u, dtype=float)
    if np.any((u < 0) | (u > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    s = np.sign(u - 0.5)
    q = np.abs(u - 0.5)  # mass between 0 and |xi|
    h = 1.0 / (gamma + eta)
    plateau = h * eta
    on_flat = q <= plateau
    # sloped part: h d - d^2 / (2 (g^2 - e^2)) = q - plateau, smaller root
    w = gamma**2 - eta**2
    rem = np.maximum(q - plateau, 0.0)
    disc = np.maximum(h**2 - 2.0 * rem / w, 0.0)
    d = 2.0 * rem / (h + np.sqrt(disc))  # stable form of w (h - sqrt(disc))
    ax = np.where(on_flat, q / h, eta + d)
    out = s * np.minimum(ax, gamma)
    return float(out) if out.ndim == 0 else out


def second_moment(gamma: float, eta: float = 0.0) -> float:
    """E[xi^2] = (gamma^2 + eta^2) / 6 under the quasi-steady density."""
    _check_band(gamma, eta)
    return (gamma**2 + eta**2) / 6.0


def hit_rate(a: float, gamma: float, eta: float = 0.0) -> float:
    """Expected hits of one boundary per unit time, a^2 / (2 (gamma^2 - eta^2))."""
    if a == 0:
        raise ValueError("noise coefficient a = 0: the displacement does not diffuse")
    if eta >= gamma:
        raise ValueError("degenerate band eta >= gamma: hit rate diverges")
    _check_band(gamma, eta)
    return a**2 / (2.0 * (gamma**2 - eta**2))


# ---------------------------------------------------------------------------
# leading-order cost functional


def _check_mn(m_sum, n_diff, costs: CostParams):
    if m_sum <= 0:
        raise ValueError("m_sum must be positive")
    if n_diff < 0 or (n_diff == 0 and costs.epsilon > 0):
        raise ValueError("n_diff must be positive")


def cost_rate(m_sum: float, n_diff: float, coeffs: CostCoefficients, costs: CostParams) -> float:
    """F(m, n): expected drift of the frictionless value per unit time."""
    _check_mn(m_sum, n_diff, costs)
    if n_diff == 0:
        return 0.5 * coeffs.C * m_sum**2 + coeffs.R * costs.lam / m_sum
    trade = coeffs.R * (n_diff * costs.lam + costs.epsilon) / (m_sum * n_diff)
    return 0.5 * coeffs.C * (m_sum**2 + n_diff**2) + trade


def foc_residual(m_sum: float, n_diff: float, coeffs: CostCoefficients, costs: CostParams):
    """Gradient (F_m, F_n) of :func:`cost_rate`."""
    _check_mn(m_sum, n_diff, costs)
    C, R = coeffs.C, coeffs.R
    lam, eps = costs.lam, costs.epsilon
    m, n = m_sum, n_diff
    if n == 0:
        return C * m - R * lam / m**2, 0.0
    f_m = C * m - R * lam / m**2 - R * eps / (m**2 * n)
    f_n = C * n - R * eps / (m * n**2)
    return f_m, f_n


def _hessian(m, n, C, R, lam, eps):
    f_mm = C + 2 * R * lam / m**3 + 2 * R * eps / (m**3 * n)
    f_mn = R * eps / (m**2 * n**2)
    f_nn = C + 2 * R * eps / (m * n**3)
    return np.array([[f_mm, f_mn], [f_mn, f_nn]])


def _relative_foc(m, n, coeffs, costs):
    f_m, f_n = foc_residual(m, n, coeffs, costs)
    return max(abs(f_m) / (abs(coeffs.C) * m), abs(f_n) / (abs(coeffs.C) * n) if n > 0 else 0.0)


def _newton_mn(m, n, coeffs, costs, max_iter=200):
    """Damped Newton ascent on F in log-coordinates; returns (m, n, converged)."""
    C, R, lam, eps = coeffs.C, coeffs.R, costs.lam, costs.epsilon
    u = np.log([m, n])
    F = cost_rate(m, n, coeffs, costs)
    for _ in range(max_iter):
        m, n = np.exp(u)
        f_m, f_n = foc_residual(m, n, coeffs, costs)
        x = np.array([m, n])
        g = x * np.array([f_m, f_n])
        H = np.outer(x, x) * _hessian(m, n, C, R, lam, eps) + np.diag(g)
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = g.copy()
        if not np.all(np.isfinite(step)) or step @ g <= 0:
            # not an ascent direction; fall back to scaled gradient
            step = g / max(np.abs(g).max(), 1e-300) * 0.1
        step_norm = np.abs(step).max()
        if step_norm > 1.0:
            step /= step_norm
        t = 1.0
        while t > 1e-12:
            trial = u + t * step
            mt, nt = np.exp(trial)
            Ft = cost_rate(mt, nt, coeffs, costs)
            if Ft >= F - 1e-15 * abs(F):
                break
            t *= 0.5
        else:
            break
        u, F = trial, Ft
        if _relative_foc(*np.exp(u), coeffs, costs) < 1e-14 or t * np.abs(step).max() < 1e-16:
            break
    m, n = (float(v) for v in np.exp(u))
    return m, n, _relative_foc(m, n, coeffs, costs) <= FOC_TOL


def _grid_best(coeffs, costs, lo, hi, num=200):
    ms = np.geomspace(lo, hi, num)
    M, N = np.meshgrid(ms, ms, indexing="ij")
    C, R = coeffs.C, coeffs.R
    F = 0.5 * C * (M**2 + N**2) + R * (N * costs.lam + costs.epsilon) / (M * N)
    i, j = np.unravel_index(np.argmax(F), F.shape)
    return ms[i], ms[j], F[i, j]


def optimize_bands(coeffs: CostCoefficients, costs: CostParams) -> BandPolicy:
    """Maximize F over (m, n) and return the symmetric optimal band.

    Safeguarded Newton from the fixed-cost closed form, falling back to a
    log-grid search for a starting point when Newton does not certify.
    """
    coeffs.check()
    if costs.is_frictionless:
        raise ValueError("at least one of epsilon, lambda must be positive")
    C, R = coeffs.C, coeffs.R
    if costs.epsilon == 0:
        # proportional-only: the band collapses to a reflecting barrier (n -> 0)
        m = (R * costs.lam / C) ** (1.0 / 3.0)
        return BandPolicy.symmetric(0.5 * m, 0.5 * m)

    fixed_scale = (R * costs.epsilon / C) ** 0.25
    start = fixed_scale
    m, n, ok = _newton_mn(start, start, coeffs, costs)
    if not ok:
        scale = fixed_scale + (R * costs.lam / C) ** (1.0 / 3.0)
        for lo, hi in ((scale * 1e-3, scale * 10), (scale * 1e-6, scale * 1e3)):
            gm, gn, _ = _grid_best(coeffs, costs, lo, hi)
            m, n, ok = _newton_mn(gm, gn, coeffs, costs)
            if ok:
                break
    if not ok:
        raise ConvergenceError("could not locate a stationary point of F")
    if m < n:
        # the unique maximizer satisfies m >= n; anything else is a spurious iterate
        raise ConvergenceError("optimizer returned n_diff > m_sum")
    return BandPolicy.symmetric(float(0.5 * (m + n)), float(0.5 * (m - n)))


def grid_search_bands(coeffs: CostCoefficients, costs: CostParams, lo=1e-4, hi=1.0, num=200):
    """Brute-force maximization of F on a ``num x num`` log grid; returns (m, n, F)."""
    return _grid_best(coeffs, costs, lo, hi, num)


# ---------------------------------------------------------------------------
# balance between fixed and proportional cost


def solve_omega(C: float, R: float) -> float:
    """Positive root of C^2 w^8 (w + 1) = R^2, bisected to the last bit."""
    if C == 0:
        raise ValueError("C must be nonzero")
    if R == 0:
        raise ValueError("R must be nonzero")
    target = (R / C) ** 2

    def h(w):
        return w**8 * (w + 1.0) - target

    lo, hi = 0.0, 1.0
    while h(hi) < 0:
        lo, hi = hi, hi * 2.0
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if h(mid) < 0:
            lo = mid
        else:
            hi = mid
    return lo if abs(h(lo)) <= abs(h(hi)) else hi


def asymptotic_bands(epsilon: float, coeffs: CostCoefficients) -> BalanceSolution:
    """Optimal band on the balance curve lambda = epsilon^(3/4)."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    coeffs.check()
    C, R = coeffs.C, coeffs.R
    omega = solve_omega(C, R)
    e4 = epsilon**0.25
    return BalanceSolution(omega=omega, m_sum=R / (C * omega**3) * e4, n_diff=omega * e4)


def _fixed_pieces(sol: MertonSolution, z, t):
    a = np.asarray(sol.noise_coefficient(z, t))
    if np.any(a == 0):
        raise ValueError("noise coefficient a = 0: the band is undefined")
    fz = np.asarray(sol.value_z(z, t))
    fzz = np.asarray(sol.value_zz(z, t))
    return a, fz, fzz


def optimal_band_fixed(epsilon: float, sol: MertonSolution, z=1.0, t=0.0):
    """gamma = (-12 a^2 f0_z / (sigma^2 f0_zz))^(1/4) epsilon^(1/4); vectorized in z, t."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    a, fz, fzz = _fixed_pieces(sol, z, t)
    g = (-12.0 * a**2 * fz / (sol.params.sigma**2 * fzz)) ** 0.25 * epsilon**0.25
    return float(g) if np.ndim(g) == 0 else g


def drift_shift_fixed(epsilon: float, sol: MertonSolution, z=1.0, t=0.0):
    """Optimal leading-order drift -2 sqrt(C R epsilon) of f0 under fixed cost only."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    a, fz, fzz = _fixed_pieces(sol, z, t)
    C = sol.params.sigma**2 * fzz / 12.0
    R = -fz * a**2
    out = -2.0 * np.sqrt(C * R * epsilon)
    return float(out) if np.ndim(out) == 0 else out
