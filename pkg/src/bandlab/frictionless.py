"""Frictionless Merton model for power (CRRA) utility.

The value function of the zero-cost problem is

    f0(z, t) = exp(rho * (T - t)) * z**p / p,
    rho = p * (r + (mu - r)**2 / (2 * sigma**2 * (1 - p))),

and the optimal dollar holding in stock is linear in wealth,

    m(z, t) = -(mu - r) f0_z / (sigma**2 f0_zz) = (mu - r) z / (sigma**2 (1 - p)).

Every function here accepts scalars or numpy arrays for ``z`` and ``t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

ArrayLike = float | np.ndarray


@dataclass(frozen=True)
class MarketParams:
    """Constant-coefficient market: stock drift ``mu``, rate ``r``, volatility ``sigma``."""

    mu: float
    r: float
    sigma: float

    def __post_init__(self):
        for name in ("mu", "r", "sigma"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")

    @property
    def excess_return(self) -> float:
        return self.mu - self.r


@dataclass(frozen=True)
class CrraUtility:
    """Power utility U(z) = z**p / p with p < 1, p != 0."""

    p: float

    def __post_init__(self):
        if not math.isfinite(self.p) or self.p >= 1 or self.p == 0:
            raise ValueError("utility exponent must satisfy p < 1 and p != 0")

    def __call__(self, z: ArrayLike) -> ArrayLike:
        return np.power(z, self.p) / self.p

    @property
    def relative_risk_aversion(self) -> float:
        return 1.0 - self.p


def _check_wealth(z):
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise ValueError("wealth z must be positive")
    return z


@dataclass(frozen=True)
class MertonSolution:
    """Closed-form frictionless value function with its derivatives.

    ``rho`` may be passed explicitly; it is then checked against the value
    implied by the market and the utility.
    """

    params: MarketParams
    utility: CrraUtility
    horizon: float
    rho: float | None = None

    def __post_init__(self):
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError("horizon must be a positive finite number")
        p = self.utility.p
        mp = self.params
        expected = p * (mp.r + mp.excess_return**2 / (2 * mp.sigma**2 * (1 - p)))
        if self.rho is None:
            object.__setattr__(self, "rho", expected)
        elif not math.isclose(self.rho, expected, rel_tol=1e-12, abs_tol=1e-15):
            raise ValueError(f"rho={self.rho} inconsistent with market (expected {expected})")

    @classmethod
    def from_values(cls, mu: float, r: float, sigma: float, p: float, horizon: float = 1.0):
        return cls(MarketParams(mu, r, sigma), CrraUtility(p), horizon)

    def _tau(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t > self.horizon):
            raise ValueError("time t must not exceed the horizon T")
        return self.horizon - t

    def _scalar(self, out):
        return float(out) if np.ndim(out) == 0 else out

    # value function and derivatives

    def value(self, z: ArrayLike, t: ArrayLike) -> ArrayLike:
        z = _check_wealth(z)
        tau = self._tau(t)
        p = self.utility.p
        return self._scalar(np.exp(self.rho * tau) * np.power(z, p) / p)

    def value_z(self, z: ArrayLike, t: ArrayLike) -> ArrayLike:
        z = _check_wealth(z)
        tau = self._tau(t)
        return self._scalar(np.exp(self.rho * tau) * np.power(z, self.utility.p - 1))

    def value_zz(self, z: ArrayLike, t: ArrayLike) -> ArrayLike:
        z = _check_wealth(z)
        tau = self._tau(t)
        p = self.utility.p
        return self._scalar((p - 1) * np.exp(self.rho * tau) * np.power(z, p - 2))

    def value_t(self, z: ArrayLike, t: ArrayLike) -> ArrayLike:
        return self._scalar(-self.rho * np.asarray(self.value(z, t)))

    # optimal holding

    @property
    def merton_fraction(self) -> float:
        """Fraction of wealth held in stock, (mu - r) / (sigma^2 (1 - p))."""
        mp = self.params
        return mp.excess_return / (mp.sigma**2 * (1 - self.utility.p))

    def merton_ratio(self, z: ArrayLike, t: ArrayLike = 0.0) -> ArrayLike:
        """Dollar amount in stock m(z, t); independent of t for CRRA."""
        z = _check_wealth(z)
        self._tau(t)
        return self._scalar(self.merton_fraction * z)

    def merton_ratio_z(self, z: ArrayLike = 1.0, t: ArrayLike = 0.0) -> float:
        """dm/dz, constant for CRRA."""
        _check_wealth(z)
        return self.merton_fraction

    def noise_coefficient(self, z: ArrayLike, t: ArrayLike = 0.0) -> ArrayLike:
        """a(z, t) = sigma (1 - m_z) m(z, t); zero when m_z == 1 or mu == r."""
        m = np.asarray(self.merton_ratio(z, t))
        return self._scalar(self.params.sigma * (1 - self.merton_fraction) * m)


def merton_value(sol: MertonSolution, z: ArrayLike, t: ArrayLike) -> ArrayLike:
    return sol.value(z, t)


def merton_ratio(sol: MertonSolution, z: ArrayLike, t: ArrayLike = 0.0) -> ArrayLike:
    return sol.merton_ratio(z, t)


def noise_coefficient(sol: MertonSolution, z: ArrayLike, t: ArrayLike = 0.0) -> ArrayLike:
    return sol.noise_coefficient(z, t)


def pde_residual(
    f: Callable[[float, float], float] | MertonSolution,
    params: MarketParams,
    z: float,
    t: float,
    h_z: float = 1e-4,
    h_t: float = 1e-4,
) -> float:
    """Central-difference residual of the frictionless HJB equation.

    Evaluates ``f_t - (mu - r)^2 f_z^2 / (2 sigma^2 f_zz) + r z f_z`` for an
    arbitrary candidate ``f(z, t)``. A ``MertonSolution`` is accepted in place
    of ``f`` and its closed-form value is used.
    """
    if isinstance(f, MertonSolution):
        f = f.value
    if not (h_z > 0 and h_t > 0) or not (math.isfinite(h_z) and math.isfinite(h_t)):
        raise ValueError("step sizes must be positive and finite")
    if z <= 0 or z - h_z <= 0:
        raise ValueError("z must be positive and larger than h_z")

    f0 = f(z, t)
    fp, fm = f(z + h_z, t), f(z - h_z, t)
    f_z = (fp - fm) / (2 * h_z)
    f_zz = (fp - 2 * f0 + fm) / h_z**2
    f_t = (f(z, t + h_t) - f(z, t - h_t)) / (2 * h_t)
    if not f_zz < 0:
        raise ValueError("finite-difference f_zz is not negative; candidate is not concave")
    excess = params.mu - params.r
    return float(f_t - 0.5 * excess**2 * f_z**2 / (params.sigma**2 * f_zz) + params.r * z * f_z)
