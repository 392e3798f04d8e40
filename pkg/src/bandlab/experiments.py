"""Monte Carlo studies of the transaction-cost scaling laws.

Value gaps are measured by common-random-number (CRN) differencing: every
policy in a sweep is run on the same per-path noise as a frictionless control
that rebalances to the Merton holding at each grid time, and the gap is the
mean of the per-path utility differences.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .band_policy import CostParams, density_cdf, drift_shift_fixed
from .frictionless import MertonSolution
from .simulation import BandSchedule, ContinuousRebalance, SimConfig, csv_target, simulate

SWEEP_COLUMNS = ["epsilon", "lambda", "gamma", "eta", "value", "stderr", "gap", "trades_per_year"]
HISTOGRAM_COLUMNS = ["bin_left", "bin_right", "empirical", "analytic"]
MODES = ("asymptotic", "numeric", "search")


@dataclass(frozen=True)
class SweepSpec:
    """Geometric grid of fixed costs with lambda = c * epsilon**q (q=None: lambda = 0)."""

    epsilons: tuple[float, ...]
    q: float | None = None
    c: float = 1.0
    n_paths: int = 100_000
    seed: int = 2024
    mode: str = "asymptotic"
    dt: float = 1e-3
    z0: float = 1.0
    start: str = "equilibrium"
    search_bracket: tuple[float, float] = (0.5, 2.0)
    search_tol: float = 0.04
    search_2d: bool = False
    n_boot: int = 200

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        if len(eps) < 4:
            raise ValueError("a sweep needs at least 4 epsilon points")
        if any(e <= 0 for e in eps):
            raise ValueError("epsilon values must be positive")
        ordered = tuple(sorted(eps, reverse=True))
        if len(set(ordered)) != len(ordered) or eps not in (ordered, ordered[::-1]):
            raise ValueError("epsilon grid must be strictly monotone")
        object.__setattr__(self, "epsilons", ordered)
        if self.q is not None and not 0 <= self.q <= 2:
            raise ValueError("coupling exponent q must lie in [0, 2]")
        if self.c < 0:
            raise ValueError("coupling constant c must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        lo, hi = self.search_bracket
        if not 0 < lo < 1 < hi:
            raise ValueError("search bracket must straddle 1")

    def lam(self, epsilon: float) -> float:
        if self.q is None or self.c == 0:
            return 0.0
        return self.c * epsilon**self.q

    def sim_config(self, horizon: float, n_paths: int | None = None) -> SimConfig:
        return SimConfig(dt=self.dt, T=horizon, n_paths=n_paths or self.n_paths, seed=self.seed,
                         z0=self.z0, start=self.start)


@dataclass
class PointEstimate:
    epsilon: float
    lam: float
    gamma: float
    eta: float
    value: float
    stderr: float
    gap: float
    gap_stderr: float
    analytic_gap: float
    trades_per_year: float
    bankrupt: int = 0

    @property
    def significant(self) -> bool:
        return self.gap > 3 * self.gap_stderr


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    ci: tuple[float, float]


@dataclass
class ExperimentReport:
    spec: SweepSpec
    points: list[PointEstimate]
    fits: dict[str, SlopeFit]
    control_value: float
    control_stderr: float
    merton_value: float
    notes: dict = field(default_factory=dict)

    @property
    def slope(self) -> float:
        return self.fits["gap"].slope

    def flagged(self) -> list[float]:
        return [p.epsilon for p in self.points if not p.significant]

    def to_csv(self, target) -> None:
        with csv_target(target) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SWEEP_COLUMNS)
            for p in self.points:
                w.writerow([f"{v:.17g}" for v in (p.epsilon, p.lam, p.gamma, p.eta, p.value,
                                                   p.stderr, p.gap, p.trades_per_year)])


@dataclass(frozen=True)
class ValueEstimate:
    mean: float
    stderr: float
    n_paths: int
    trades_per_year: float
    bankrupt: int


# ---------------------------------------------------------------------------
# helpers


def fit_loglog(x, y) -> tuple[float, float]:
    """Least-squares slope and intercept of log(y) against log(x)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 4:
        raise ValueError("slope fit needs at least 4 points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit needs positive data")
    slope, intercept = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope), float(intercept)


def _bootstrap_slope(x, per_path: np.ndarray, n_boot: int, seed: int) -> tuple[float, float]:
    """Percentile interval for the slope of log(mean) vs log(x), resampling paths jointly.

    ``per_path`` has shape (len(x), n_paths); column resampling keeps the CRN
    correlation between points.
    """
    if n_boot <= 0:
        return (math.nan, math.nan)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xB007,)))
    n = per_path.shape[1]
    lx = np.log(x)
    out = []
    for _ in range(n_boot):
        idx = rng.integers(0, n, n)
        m = per_path[:, idx].mean(axis=1)
        if np.all(m > 0):
            out.append(np.polyfit(lx, np.log(m), 1)[0])
    if len(out) < max(10, n_boot // 2):
        return (math.nan, math.nan)
    lo, hi = np.percentile(out, [2.5, 97.5])
    return float(lo), float(hi)


def policy_for(sol: MertonSolution, epsilon: float, lam: float, mode: str, z_ref: float = 1.0):
    """Band schedule used at one sweep point.

    ``asymptotic`` uses the closed forms (fixed cost only, or the balance curve
    lambda = epsilon^(3/4)); ``numeric`` maximizes the cost functional pointwise.
    """
    costs = CostParams(epsilon, lam)
    if mode in ("asymptotic", "search"):
        if lam == 0:
            return BandSchedule.fixed_cost(sol, epsilon)
        if math.isclose(lam, epsilon**0.75, rel_tol=1e-12):
            return BandSchedule.balanced(sol, epsilon, z_ref)
        if mode == "asymptotic":
            raise ValueError("asymptotic bands exist only for lambda = 0 or lambda = epsilon^(3/4); use mode 'numeric'")
    return BandSchedule.numeric_optimal(sol, costs, z_ref)


def estimate_value(sol: MertonSolution, costs: CostParams, policy, cfg: SimConfig) -> ValueEstimate:
    """Sample mean of U(Z_T) with its standard error."""
    res = simulate(sol, costs, policy, cfg)
    mean, se = res.mean_utility()
    return ValueEstimate(mean, se, res.n_paths, float(res.n_trades.mean() / cfg.T), int(res.bankrupt.sum()))


def _control(sol, cfg):
    return simulate(sol, CostParams(), ContinuousRebalance(), cfg)


def _se(x):
    return float(x.std(ddof=1) / math.sqrt(len(x)))


# ---------------------------------------------------------------------------
# studies


def scaling_study(sol: MertonSolution, spec: SweepSpec) -> ExperimentReport:
    """Value gap versus epsilon with CRN differencing and a bootstrap slope interval."""
    if spec.mode == "search":
        raise ValueError("use band_scaling for simulation-searched bands")
    cfg = spec.sim_config(sol.horizon)
    ctrl = _control(sol, cfg)
    f0 = sol.value(spec.z0, 0.0)
    points, diffs = [], []
    for eps in spec.epsilons:
        lam = spec.lam(eps)
        pol = policy_for(sol, eps, lam, spec.mode, spec.z0)
        res = simulate(sol, CostParams(eps, lam), pol, cfg)
        d = ctrl.utility - res.utility
        diffs.append(d)
        band = pol.at(spec.z0)
        points.append(PointEstimate(
            epsilon=eps, lam=lam, gamma=band.gamma, eta=band.eta,
            value=float(res.utility.mean()), stderr=_se(res.utility),
            gap=float(d.mean()), gap_stderr=_se(d),
            analytic_gap=float(f0 - res.utility.mean()),
            trades_per_year=float(res.n_trades.mean() / cfg.T),
            bankrupt=int(res.bankrupt.sum()),
        ))
    eps_arr = np.array([p.epsilon for p in points])
    gaps = np.array([p.gap for p in points])
    fits = {}
    if np.all(gaps > 0):
        slope, icpt = fit_loglog(eps_arr, gaps)
        ci = _bootstrap_slope(eps_arr, np.vstack(diffs), spec.n_boot, spec.seed)
        fits["gap"] = SlopeFit(slope, icpt, ci)
    else:
        fits["gap"] = SlopeFit(math.nan, math.nan, (math.nan, math.nan))
    cm, cs = ctrl.mean_utility()
    return ExperimentReport(spec, points, fits, cm, cs, f0)


def golden_section_max(fn, lo: float, hi: float, tol: float, max_iter: int = 60):
    """Golden-section search for a maximum of ``fn`` on ``[lo, hi]``; memoizes evaluations."""
    cache: dict[float, float] = {}

    def f(x):
        if x not in cache:
            cache[x] = fn(x)
        return cache[x]

    invphi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if f(c) >= f(d):
            b, d = d, c
            c = b - invphi * (b - a)
        else:
            a, c = c, d
            d = a + invphi * (b - a)
    best = max(cache, key=cache.get)
    return best, cache[best], cache


def band_scaling(sol: MertonSolution, spec: SweepSpec, n_paths: int | None = None) -> ExperimentReport:
    """Simulation-optimal symmetric band per epsilon, and its log-log exponents.

    For each epsilon the band shape of ``policy_for`` is scaled by ``s`` and
    ``log s`` is chosen by golden-section search on the CRN estimate of
    E[U(Z_T)]. With ``spec.search_2d`` the destination ratio eta/gamma is
    searched too (alternating one-dimensional searches).
    """
    cfg = spec.sim_config(sol.horizon, n_paths)
    ctrl = _control(sol, cfg)
    f0 = sol.value(spec.z0, 0.0)
    lo, hi = (math.log(v) for v in spec.search_bracket)
    points, searched = [], {}
    for eps in spec.epsilons:
        lam = spec.lam(eps)
        costs = CostParams(eps, lam)
        base = policy_for(sol, eps, lam, "search", spec.z0)
        ref = base.at(spec.z0)
        ratio = ref.eta / ref.gamma

        def value_at(log_s, r):
            res = simulate(sol, costs, base.scaled(math.exp(log_s), r if spec.search_2d else None), cfg)
            return float(res.utility.mean())

        log_s, _, evals = golden_section_max(lambda x: value_at(x, ratio), lo, hi, spec.search_tol)
        n_evals = len(evals)
        if spec.search_2d and lam > 0:
            for _ in range(2):
                ratio, _, ev = golden_section_max(lambda r: value_at(log_s, r), 0.0, 0.9, 0.02)
                n_evals += len(ev)
                log_s, _, ev = golden_section_max(lambda x: value_at(x, ratio), lo, hi, spec.search_tol)
                n_evals += len(ev)
        if log_s in (lo, hi) or min(abs(log_s - lo), abs(log_s - hi)) < spec.search_tol:
            raise RuntimeError(f"band search hit the bracket edge at epsilon={eps:g}")
        s = math.exp(log_s)
        pol = base.scaled(s, ratio if spec.search_2d else None)
        res = simulate(sol, costs, pol, cfg)
        d = ctrl.utility - res.utility
        band = pol.at(spec.z0)
        points.append(PointEstimate(
            epsilon=eps, lam=lam, gamma=band.gamma, eta=band.eta,
            value=float(res.utility.mean()), stderr=_se(res.utility),
            gap=float(d.mean()), gap_stderr=_se(d), analytic_gap=float(f0 - res.utility.mean()),
            trades_per_year=float(res.n_trades.mean() / cfg.T), bankrupt=int(res.bankrupt.sum()),
        ))
        searched[eps] = {"scale": s, "asymptotic_gamma": ref.gamma, "asymptotic_eta": ref.eta,
                         "evaluations": n_evals}
    eps_arr = np.array([p.epsilon for p in points])
    gam = np.array([p.gamma for p in points])
    width = np.array([p.gamma - p.eta for p in points])
    fits = {}
    g_slope, g_icpt = fit_loglog(eps_arr, gam)
    fits["gamma"] = SlopeFit(g_slope, g_icpt, (math.nan, math.nan))
    if np.all(width > 0):
        w_slope, w_icpt = fit_loglog(eps_arr, width)
        fits["gamma_minus_eta"] = SlopeFit(w_slope, w_icpt, (math.nan, math.nan))
    gaps = np.array([p.gap for p in points])
    if np.all(gaps > 0):
        fits["gap"] = SlopeFit(*fit_loglog(eps_arr, gaps), (math.nan, math.nan))
    cm, cs = ctrl.mean_utility()
    return ExperimentReport(spec, points, fits, cm, cs, f0, notes={"search": searched})


@dataclass
class OccupancyReport:
    ks: float
    n_samples: int
    bins: np.ndarray
    empirical: np.ndarray
    analytic: np.ndarray
    eta_ratio: float

    def to_csv(self, target) -> None:
        with csv_target(target) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTOGRAM_COLUMNS)
            for i in range(len(self.empirical)):
                w.writerow([f"{self.bins[i]:.17g}", f"{self.bins[i + 1]:.17g}",
                            f"{self.empirical[i]:.17g}", f"{self.analytic[i]:.17g}"])


def ks_against_density(samples, eta_ratio: float = 0.0) -> float:
    """Kolmogorov-Smirnov distance of xi/gamma samples from the band density on [-1, 1]."""
    samples = np.asarray(samples, dtype=float)
    return float(stats.kstest(samples, lambda x: density_cdf(x, 1.0, eta_ratio)).statistic)


def occupancy_histogram(samples, eta_ratio: float = 0.0, n_bins: int = 40):
    samples = np.asarray(samples, dtype=float)
    bins = np.linspace(-1.0, 1.0, n_bins + 1)
    emp, _ = np.histogram(np.clip(samples, -1.0, 1.0), bins=bins, density=True)
    cdf = density_cdf(bins, 1.0, eta_ratio)
    ana = np.diff(cdf) / np.diff(bins)
    return bins, emp, ana


def occupancy_study(sol: MertonSolution, costs: CostParams, policy, cfg: SimConfig,
                    n_bins: int = 40, burn_in: int = 0) -> OccupancyReport:
    """Pool xi/gamma over all paths and steps and compare with the analytic density."""
    res = simulate(sol, costs, policy, cfg, record_occupancy=True)
    occ = res.occupancy[burn_in:]
    samples = occ[np.isfinite(occ)].ravel()
    if samples.size < 10_000:
        raise ValueError("occupancy study needs at least 1e4 samples")
    ref = policy.at(cfg.z0) if hasattr(policy, "at") else policy
    ratio = ref.eta / ref.gamma
    bins, emp, ana = occupancy_histogram(samples, ratio, n_bins)
    return OccupancyReport(ks_against_density(samples, ratio), int(samples.size), bins, emp, ana, ratio)


@dataclass(frozen=True)
class DriftCheck:
    epsilon: float
    gap: float
    gap_stderr: float
    integral: float
    integral_stderr: float
    ratio: float

    @property
    def significant(self) -> bool:
        return self.gap > 3 * self.gap_stderr


def drift_integral_check(sol: MertonSolution, epsilon: float, cfg: SimConfig) -> DriftCheck:
    """Measured fixed-cost value gap over the path integral of the optimal heuristic drift."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if epsilon == 0:
        return DriftCheck(0.0, 0.0, 0.0, 0.0, 0.0, math.nan)
    ctrl = _control(sol, cfg)
    pol = BandSchedule.fixed_cost(sol, epsilon)
    res = simulate(sol, CostParams(epsilon, 0.0), pol, cfg,
                   rate_fn=lambda z, t: drift_shift_fixed(epsilon, sol, z, t))
    d = ctrl.utility - res.utility
    lost = -res.integral
    return DriftCheck(epsilon, float(d.mean()), _se(d), float(lost.mean()), _se(lost),
                      float(d.mean() / lost.mean()))
