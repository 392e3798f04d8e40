"""Path simulator for band (impulse) rebalancing with fixed and proportional costs.

Between grid times the stock account follows exact geometric Brownian motion
and cash compounds at ``r``. At each grid time the displacement
``xi = X - m(Z)`` is compared with the band: ``xi >= gamma`` sells stock down
to ``xi = eta``, ``xi <= -beta`` buys up to ``xi = -theta``. A buy of ``g``
dollars moves ``(1 - lam) g - eps`` into stock and takes ``g`` from cash; a
sell moves ``g`` out of stock and ``(1 - lam) g - eps`` into cash, so every
trade lowers wealth by exactly ``eps + lam * g``.

Random numbers come from one stream per path, keyed by ``(seed, path index)``,
so a path is the same whichever batch, block or worker simulates it.
"""

from __future__ import annotations

import contextlib
import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .band_policy import (
    BandPolicy,
    CostCoefficients,
    CostParams,
    asymptotic_bands,
    density_quantile,
    optimal_band_fixed,
    optimize_bands,
)
from .frictionless import MertonSolution

THREADS_ENV = "BANDLAB_THREADS"


@contextlib.contextmanager
def csv_target(target):
    """Yield a text stream for ``target``, a path or an already open file."""
    if hasattr(target, "write"):
        yield target
    else:
        with open(target, "w", newline="") as fh:
            yield fh


class Bands(Protocol):
    def bands(self, z: np.ndarray, t: float): ...


def _zeros(z):
    return 0.0


class ContinuousRebalance:
    """Frictionless control: reset to the Merton holding at every grid time."""

    def bands(self, z, t):
        raise TypeError("continuous rebalancing has no band")

    def __repr__(self):
        return "ContinuousRebalance()"


@dataclass(frozen=True)
class BandSchedule:
    """State-dependent symmetric band ``gamma(z), eta(z)``.

    ``gamma_of`` / ``eta_of`` map wealth arrays to band arrays; for CRRA the
    optimal band does not depend on time.
    """

    gamma_of: Callable[[np.ndarray], np.ndarray]
    eta_of: Callable[[np.ndarray], np.ndarray]
    label: str = "schedule"
    scale: float = 1.0
    eta_ratio: float | None = None

    def bands(self, z, t):
        g = self.scale * self.gamma_of(z)
        if self.eta_ratio is None:
            e = self.scale * self.eta_of(z)
        else:
            e = self.eta_ratio * g
        return g, g, e, e

    def scaled(self, scale: float, eta_ratio: float | None = None) -> "BandSchedule":
        if not scale > 0:
            raise ValueError("scale must be positive")
        return BandSchedule(self.gamma_of, self.eta_of, self.label, scale, eta_ratio)

    def at(self, z: float, t: float = 0.0) -> BandPolicy:
        g, _, e, _ = self.bands(np.asarray([z], dtype=float), t)
        return BandPolicy.symmetric(float(np.ravel(g)[0]), float(np.ravel(e)[0]))

    # constructors

    @classmethod
    def fixed_cost(cls, sol: MertonSolution, epsilon: float) -> "BandSchedule":
        # for CRRA, a^2 ~ z^2 and -f_z/f_zz ~ z, so gamma ~ z^(3/4) at every t
        g1 = optimal_band_fixed(epsilon, sol, 1.0, 0.0)
        if not math.isclose(optimal_band_fixed(epsilon, sol, 2.0, 0.0), g1 * 2.0**0.75, rel_tol=1e-12):
            raise ValueError("fixed-cost band is not a z^(3/4) power law for this model")

        def gamma_of(z):
            return g1 * np.power(z, 0.75)

        return cls(gamma_of, _zeros, label=f"fixed(eps={epsilon:g})")

    @classmethod
    def tabulated(cls, band_at: Callable[[float], BandPolicy], z_ref: float, label: str,
                  log_span: float = 4.0, num: int = 2001) -> "BandSchedule":
        """Interpolate a pointwise band solver on a log-wealth grid around ``z_ref``."""
        grid = z_ref * np.exp(np.linspace(-log_span, log_span, num))
        pols = [band_at(float(z)) for z in grid]
        lg = np.log(grid)
        lgam = np.log([p.gamma for p in pols])
        eta = np.array([p.eta for p in pols])

        def gamma_of(z):
            return np.exp(np.interp(np.log(z), lg, lgam))

        def eta_of(z):
            return np.interp(np.log(z), lg, eta)

        return cls(gamma_of, eta_of, label=label)

    @classmethod
    def numeric_optimal(cls, sol: MertonSolution, costs: CostParams, z_ref: float = 1.0) -> "BandSchedule":
        def band_at(z):
            return optimize_bands(CostCoefficients.from_merton(sol, z, 0.0), costs)

        return cls.tabulated(band_at, z_ref, f"numeric(eps={costs.epsilon:g},lam={costs.lam:g})")

    @classmethod
    def balanced(cls, sol: MertonSolution, epsilon: float, z_ref: float = 1.0) -> "BandSchedule":
        def band_at(z):
            return asymptotic_bands(epsilon, CostCoefficients.from_merton(sol, z, 0.0)).policy()

        return cls.tabulated(band_at, z_ref, f"balanced(eps={epsilon:g})")


@dataclass(frozen=True)
class SimConfig:
    dt: float
    T: float
    n_paths: int
    seed: int
    z0: float = 1.0
    start: str = "center"  # "center" (xi = 0) or "equilibrium" (xi drawn from the band density)
    block_size: int = 16384
    utility_floor: float | None = None
    check_resolution: bool = True

    def __post_init__(self):
        if not (self.dt > 0 and self.T > 0):
            raise ValueError("dt and T must be positive")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.z0 <= 0:
            raise ValueError("initial wealth must be positive")
        if self.start not in ("center", "equilibrium"):
            raise ValueError("start must be 'center' or 'equilibrium'")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def n_steps(self) -> int:
        n = round(self.T / self.dt)
        if not math.isclose(n * self.dt, self.T, rel_tol=1e-9):
            raise ValueError("T must be an integer multiple of dt")
        return n


@dataclass(frozen=True)
class PathState:
    t: float
    X: float
    Y: float
    Z: float
    xi: float


@dataclass(frozen=True)
class TradeEvent:
    time: float
    side: str
    gross: float
    proportional_cost: float
    fixed_cost: float
    xi_before: float
    xi_after: float
    z_before: float
    z_after: float


@dataclass
class PathRecord:
    path_index: int
    terminal_z: float
    utility: float
    bankrupt: bool
    trades: list[TradeEvent]
    t: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    xi: np.ndarray
    occupancy: np.ndarray  # xi / gamma after each step

    def to_csv(self, target) -> None:
        """Write ``t, X, Y, Z, xi, event`` rows (event is ``buy:g`` / ``sell:g`` or empty)."""
        events = {}
        for ev in self.trades:
            events[round(ev.time / (self.t[1] - self.t[0]))] = f"{ev.side}:{ev.gross:.17g}"
        with csv_target(target) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "X", "Y", "Z", "xi", "event"])
            for k in range(len(self.t)):
                w.writerow([f"{self.t[k]:.17g}", f"{self.X[k]:.17g}", f"{self.Y[k]:.17g}",
                            f"{self.Z[k]:.17g}", f"{self.xi[k]:.17g}", events.get(k, "")])


@dataclass
class BatchResult:
    """Per-path outputs of a batch, in path-index order."""

    path_indices: np.ndarray
    terminal_z: np.ndarray
    utility: np.ndarray
    n_trades: np.ndarray
    cost_paid: np.ndarray
    bankrupt: np.ndarray
    integral: np.ndarray | None = None
    occupancy: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return len(self.utility)

    def mean_utility(self) -> tuple[float, float]:
        u = self.utility
        return float(u.mean()), float(u.std(ddof=1) / math.sqrt(len(u))) if len(u) > 1 else math.nan


# ---------------------------------------------------------------------------
# single-state operations


def step(state: PathState, sol: MertonSolution, dt: float, noise: float) -> PathState:
    """Advance one grid step with exact GBM stock and compounding cash."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    mp = sol.params
    X = state.X * math.exp((mp.mu - 0.5 * mp.sigma**2) * dt + mp.sigma * math.sqrt(dt) * noise)
    Y = state.Y * math.exp(mp.r * dt)
    Z = X + Y
    if Z <= 0:
        raise ValueError("wealth exhausted (bankruptcy)")
    return PathState(state.t + dt, X, Y, Z, X - sol.merton_fraction * Z)


def _sell_size(xi, target, mz, costs):
    return (xi - target + mz * costs.epsilon) / (1.0 - mz * costs.lam)


def _buy_size(xi, target, mz, costs):
    return (target - xi + costs.epsilon * (1.0 - mz)) / (1.0 - costs.lam * (1.0 - mz))


def rebalance_to_target(state: PathState, sol: MertonSolution, destination_xi: float,
                        costs: CostParams, band: BandPolicy | None = None):
    """Trade so that the post-trade displacement equals ``destination_xi``.

    Returns ``(new_state, TradeEvent)``. Because ``m`` is linear in wealth the
    trade size solves a linear equation in closed form.
    """
    if band is not None and not (-band.beta <= destination_xi <= band.gamma):
        raise ValueError("destination lies outside the hold region")
    mz = sol.merton_fraction
    X, Y, Z = state.X, state.Y, state.Z
    if destination_xi < state.xi:
        side = "sell"
        g = _sell_size(state.xi, destination_xi, mz, costs)
        X2 = X - g
        Y2 = Y + (1.0 - costs.lam) * g - costs.epsilon
    else:
        side = "buy"
        g = _buy_size(state.xi, destination_xi, mz, costs)
        X2 = X + (1.0 - costs.lam) * g - costs.epsilon
        Y2 = Y - g
    Z2 = Z - costs.epsilon - costs.lam * g
    if Z2 <= 0 or g < 0:
        raise ValueError("infeasible trade: wealth exhausted")
    new = PathState(state.t, X2, Y2, Z2, X2 - mz * Z2)
    ev = TradeEvent(state.t, side, g, costs.lam * g, costs.epsilon, state.xi, new.xi, Z, Z2)
    return new, ev


# ---------------------------------------------------------------------------
# batch kernel


def path_stream(seed: int, path_index: int) -> np.random.Generator:
    """Independent generator for one path, keyed by (seed, path index)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(int(path_index),))))


def _block_noise(seed, indices, n_steps):
    u0 = np.empty(len(indices))
    z = np.empty((len(indices), n_steps))
    for row, i in enumerate(indices):
        rng = path_stream(seed, i)
        u0[row] = rng.random()
        z[row] = rng.standard_normal(n_steps)
    return u0, z


def _take(v, idx):
    return v[idx] if np.ndim(v) else v


def _initial_xi(policy, cfg, u0, z0_arr):
    if cfg.start == "center" or isinstance(policy, ContinuousRebalance):
        return np.zeros_like(u0)
    g, _, e, _ = policy.bands(z0_arr, 0.0)
    g = np.broadcast_to(np.asarray(g, dtype=float), u0.shape)
    e = np.broadcast_to(np.asarray(e, dtype=float), u0.shape)
    return density_quantile(u0, g, e)


def _simulate_block(sol, costs, policy, cfg, indices, rate_fn, record_occupancy, trace_lane):
    n = len(indices)
    n_steps = cfg.n_steps
    mp = sol.params
    mz = sol.merton_fraction
    dt = cfg.dt
    u0, noise = _block_noise(cfg.seed, indices, n_steps)
    growth = np.exp((mp.mu - 0.5 * mp.sigma**2) * dt + mp.sigma * math.sqrt(dt) * noise)
    growth = np.ascontiguousarray(growth.T)
    del noise
    er = math.exp(mp.r * dt)
    continuous = isinstance(policy, ContinuousRebalance)

    Z = np.full(n, float(cfg.z0))
    xi = _initial_xi(policy, cfg, u0, Z)
    X = mz * Z + xi
    Y = Z - X
    n_trades = np.zeros(n, dtype=np.int64)
    cost_paid = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    has_broke = False
    integral = np.zeros(n) if rate_fn is not None else None
    occ = np.empty((n_steps, n)) if record_occupancy else None

    trace = None
    if trace_lane is not None:
        trace = {"t": [0.0], "X": [X[trace_lane]], "Y": [Y[trace_lane]], "Z": [Z[trace_lane]],
                 "xi": [xi[trace_lane]], "trades": []}

    for k in range(n_steps):
        t = k * dt
        if rate_fn is not None:
            if has_broke:
                integral[alive] += rate_fn(Z[alive], t) * dt
            else:
                integral += rate_fn(Z, t) * dt
        X *= growth[k]
        Y *= er
        Z = X + Y
        t1 = (k + 1) * dt
        if not (Z > 0).all():
            broke = alive & ~(Z > 0)
            if broke.any():
                has_broke = True
                alive &= ~broke
                X[broke] = 0.0
                Y[broke] = 0.0
                Z[broke] = 0.0
        if continuous:
            X = np.where(alive, mz * Z, X)
            Y = Z - X
            xi = X - mz * Z
            if occ is not None:
                occ[k] = 0.0
        else:
            zsafe = np.where(alive, Z, 1.0) if has_broke else Z
            g, b, e, th = policy.bands(zsafe, t1)
            xi = X - mz * Z
            up = xi >= g
            dn = xi <= -b
            if has_broke:
                up &= alive
                dn &= alive
            if up.any():
                idx = np.nonzero(up)[0]
                size = _sell_size(xi[idx], _take(e, idx), mz, costs)
                if trace is not None and up[trace_lane]:
                    z_before, xi_before = Z[trace_lane], xi[trace_lane]
                X[idx] -= size
                Y[idx] += (1.0 - costs.lam) * size - costs.epsilon
                n_trades[idx] += 1
                cost_paid[idx] += costs.epsilon + costs.lam * size
                if trace is not None and up[trace_lane]:
                    s = float(size[np.searchsorted(idx, trace_lane)])
                    trace["trades"].append(("sell", t1, s, xi_before, z_before))
            if dn.any():
                idx = np.nonzero(dn)[0]
                size = _buy_size(xi[idx], -_take(th, idx), mz, costs)
                if trace is not None and dn[trace_lane]:
                    z_before, xi_before = Z[trace_lane], xi[trace_lane]
                X[idx] += (1.0 - costs.lam) * size - costs.epsilon
                Y[idx] -= size
                n_trades[idx] += 1
                cost_paid[idx] += costs.epsilon + costs.lam * size
                if trace is not None and dn[trace_lane]:
                    s = float(size[np.searchsorted(idx, trace_lane)])
                    trace["trades"].append(("buy", t1, s, xi_before, z_before))
            if up.any() or dn.any():
                Z = X + Y
                broke = alive & ~(Z > 0)
                if broke.any():
                    has_broke = True
                    alive &= ~broke
                    X[broke] = 0.0
                    Y[broke] = 0.0
                    Z[broke] = 0.0
                xi = X - mz * Z
            if occ is not None:
                occ[k] = np.where(alive, xi / g, np.nan)
        if trace is not None:
            for key, arr in (("X", X), ("Y", Y), ("Z", Z), ("xi", xi)):
                trace[key].append(arr[trace_lane])
            trace["t"].append(t1)

    floor = cfg.utility_floor
    if floor is None:
        floor = float(sol.utility(1e-6 * cfg.z0))
    util = np.full(n, floor)
    util[alive] = sol.utility(Z[alive])
    out = {
        "terminal_z": Z,
        "utility": util,
        "n_trades": n_trades,
        "cost_paid": cost_paid,
        "bankrupt": ~alive,
        "integral": integral,
        "occupancy": occ,
        "trace": trace,
    }
    return out


def _resolution_check(sol, policy, cfg):
    if isinstance(policy, ContinuousRebalance) or not cfg.check_resolution:
        return
    z = np.asarray([cfg.z0])
    g, b, _, _ = policy.bands(z, 0.0)
    width = float(min(np.min(g), np.min(b)))
    a = abs(float(sol.noise_coefficient(cfg.z0, 0.0)))
    if a * math.sqrt(cfg.dt) > width / 10.0:
        raise ValueError(
            f"dt={cfg.dt:g} too coarse: per-step displacement std {a * math.sqrt(cfg.dt):.3g} "
            f"exceeds band/10 = {width / 10:.3g}"
        )


def _check_policy(policy):
    if isinstance(policy, BandPolicy) and policy.is_degenerate:
        raise ValueError("degenerate band (eta >= gamma) cannot be simulated")


def worker_count(n_workers: int | None = None) -> int:
    if n_workers is not None:
        return max(1, int(n_workers))
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return 1


def simulate(sol: MertonSolution, costs: CostParams, policy, cfg: SimConfig, *,
             rate_fn=None, record_occupancy: bool = False, n_workers: int | None = None) -> BatchResult:
    """Simulate ``cfg.n_paths`` paths (indices ``0..n_paths-1``) in fixed-size blocks.

    ``rate_fn(Z, t)``, if given, is integrated along each path (left-point rule).
    Blocks are independent of the worker count, so results are identical for
    any number of threads.
    """
    _check_policy(policy)
    _resolution_check(sol, policy, cfg)
    cfg.n_steps  # validates the grid
    starts = list(range(0, cfg.n_paths, cfg.block_size))

    def run(s):
        idx = np.arange(s, min(s + cfg.block_size, cfg.n_paths))
        return _simulate_block(sol, costs, policy, cfg, idx, rate_fn, record_occupancy, None)

    workers = worker_count(n_workers)
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(run, starts))
    else:
        parts = [run(s) for s in starts]

    def cat(key):
        return np.concatenate([p[key] for p in parts])

    occ = None
    if record_occupancy:
        occ = np.concatenate([p["occupancy"] for p in parts], axis=1)
    return BatchResult(
        path_indices=np.arange(cfg.n_paths),
        terminal_z=cat("terminal_z"),
        utility=cat("utility"),
        n_trades=cat("n_trades"),
        cost_paid=cat("cost_paid"),
        bankrupt=cat("bankrupt"),
        integral=cat("integral") if rate_fn is not None else None,
        occupancy=occ,
    )


def simulate_path(sol: MertonSolution, costs: CostParams, policy, cfg: SimConfig, path_index: int) -> PathRecord:
    """Full trajectory and trade log of one path.

    The path is simulated inside the same block it belongs to in :func:`simulate`,
    so its terminal values are bit-identical to the batch output.
    """
    if not 0 <= path_index < cfg.n_paths:
        raise ValueError("path_index out of range")
    _check_policy(policy)
    _resolution_check(sol, policy, cfg)
    s = (path_index // cfg.block_size) * cfg.block_size
    idx = np.arange(s, min(s + cfg.block_size, cfg.n_paths))
    lane = path_index - s
    out = _simulate_block(sol, costs, policy, cfg, idx, None, True, lane)
    tr = out["trace"]
    trades = []
    for side, t, g, xi_before, z_before in tr["trades"]:
        k = round(t / cfg.dt)
        trades.append(TradeEvent(
            time=t, side=side, gross=g, proportional_cost=costs.lam * g, fixed_cost=costs.epsilon,
            xi_before=xi_before, xi_after=tr["xi"][k], z_before=z_before, z_after=tr["Z"][k],
        ))
    return PathRecord(
        path_index=path_index,
        terminal_z=float(out["terminal_z"][lane]),
        utility=float(out["utility"][lane]),
        bankrupt=bool(out["bankrupt"][lane]),
        trades=trades,
        t=np.asarray(tr["t"]),
        X=np.asarray(tr["X"]),
        Y=np.asarray(tr["Y"]),
        Z=np.asarray(tr["Z"]),
        xi=np.asarray(tr["xi"]),
        occupancy=out["occupancy"][:, lane],
    )
