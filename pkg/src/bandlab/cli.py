"""Command-line front end: ``bandlab <command> [--config FILE] [flags]``.

Structured results go to stdout as JSON, tables as CSV (to ``--output`` or
stdout). Errors are printed to stderr as a JSON object. Exit codes: 0 ok,
1 usage or configuration error, 2 numeric failure, 3 invariant-suite failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

from .band_policy import (
    CostCoefficients,
    asymptotic_bands,
    foc_residual,
    optimize_bands,
)
from .config import FIELDS, ConfigError, RunConfig, build_config, check_sweep
from .expansion import closed_form_band, solve_free_boundary
from .experiments import SweepSpec, band_scaling, occupancy_study, policy_for, scaling_study
from .selfcheck import run_checks
from .simulation import ContinuousRebalance, SimConfig, simulate, simulate_path

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3
COMMANDS = ("merton", "bands", "freeboundary", "simulate", "sweep", "density", "check")

PRECEDENCE = "Values resolve as: built-in default < --config file < command-line flag."


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _epsilons(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated numbers") from None


def _config_flags() -> argparse.ArgumentParser:
    parent = _Parser(add_help=False)
    grp = parent.add_argument_group("configuration", PRECEDENCE)
    grp.add_argument("--config", metavar="FILE", help="JSON run configuration")
    for f in FIELDS:
        kind = _epsilons if f.kind is list else f.kind
        default = ",".join(f"{v:g}" for v in f.default) if f.kind is list else f.default
        grp.add_argument(f.flag, dest=f.key, type=kind, choices=f.choices, default=None,
                         help=f"{f.help} [{f.key}, default {default}]")
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bandlab", description="Portfolio rebalancing bands under fixed and proportional costs.")
    sub = parser.add_subparsers(dest="command", metavar="command")
    common = _config_flags()
    helps = {
        "merton": "frictionless value, Merton holding and noise coefficient (JSON)",
        "bands": "asymptotic and numeric optimal bands with FOC residuals (JSON)",
        "freeboundary": "solve the fixed-cost free-boundary system (JSON)",
        "simulate": "simulate paths; per-path CSV of one path, summary JSON",
        "sweep": "value-gap (or band) scaling sweep over the epsilon grid (CSV)",
        "density": "occupancy histogram against the analytic band density (CSV)",
        "check": "run the invariant suite",
    }
    subs = {name: sub.add_parser(name, parents=[common], help=text, description=text) for name, text in helps.items()}
    b = subs["bands"]
    b.add_argument("--C", type=float, help="opportunity-cost coefficient (< 0); overrides the market")
    b.add_argument("--R", type=float, help="trading-cost coefficient (< 0); overrides the market")
    fb = subs["freeboundary"]
    fb.add_argument("--B", type=float, help="quartic coefficient sigma^2 f0_zz / 2 (< 0)")
    fb.add_argument("--a2", type=float, help="squared noise coefficient (> 0)")
    fb.add_argument("--fz", type=float, help="frictionless marginal value f0_z (> 0)")
    subs["density"].add_argument("--bins", type=int, default=40, help="number of histogram bins")
    return parser


def load_config(args) -> RunConfig:
    doc = None
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError("--config", f"cannot read file ({exc.strerror})") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"malformed JSON ({exc.msg} at line {exc.lineno})") from None
    overrides = {f.key: getattr(args, f.key) for f in FIELDS}
    return build_config(doc, overrides)


def _emit_json(obj, out):
    out.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _emit_table(writer, cfg: RunConfig, out):
    writer(cfg["output.path"] or out)


# ---------------------------------------------------------------------------
# commands


def cmd_merton(args, cfg, out, err):
    sol = cfg.merton()
    z = cfg["sim.z0"]
    _emit_json({
        "z": z, "t": 0.0, "f0": sol.value(z, 0.0), "m": sol.merton_ratio(z), "a": sol.noise_coefficient(z),
        "merton_fraction": sol.merton_fraction, "rho": sol.rho,
    }, out)
    return EXIT_OK


def cmd_bands(args, cfg, out, err):
    if (args.C is None) != (args.R is None):
        raise UsageError("--C and --R must be given together")
    costs = cfg.costs()
    if args.C is not None:
        coeffs = CostCoefficients.from_CR(args.C, args.R)
    else:
        coeffs = CostCoefficients.from_merton(cfg.merton(), cfg["sim.z0"], 0.0)
    result = {"C": coeffs.C, "R": coeffs.R, "epsilon": costs.epsilon, "lambda": costs.lam}
    pol = optimize_bands(coeffs, costs)
    f_m, f_n = foc_residual(pol.m_sum, pol.n_diff, coeffs, costs)
    result["numeric"] = {"gamma": pol.gamma, "eta": pol.eta, "foc_residual": [f_m, f_n]}
    if costs.epsilon > 0:
        if costs.lam == 0:
            g = (coeffs.R * costs.epsilon / coeffs.C) ** 0.25
            result["asymptotic"] = {"gamma": g, "eta": 0.0, "regime": "fixed cost only"}
        else:
            bal = asymptotic_bands(costs.epsilon, coeffs)
            exact = math.isclose(costs.lam, costs.epsilon**0.75, rel_tol=1e-12)
            result["asymptotic"] = {"gamma": bal.gamma, "eta": bal.eta, "omega": bal.omega,
                                    "regime": "balanced" if exact else "balanced curve (lambda off epsilon^(3/4))"}
    result["gamma"], result["eta"] = pol.gamma, pol.eta
    _emit_json(result, out)
    return EXIT_OK


def cmd_freeboundary(args, cfg, out, err):
    given = [v is not None for v in (args.B, args.a2, args.fz)]
    if any(given) and not all(given):
        raise UsageError("--B, --a2 and --fz must be given together")
    if all(given):
        B, a2, fz0 = args.B, args.a2, args.fz
    else:
        sol = cfg.merton()
        z = cfg["sim.z0"]
        B = 0.5 * sol.params.sigma**2 * sol.value_zz(z, 0.0)
        a2 = sol.noise_coefficient(z) ** 2
        fz0 = sol.value_z(z, 0.0)
    fb = solve_free_boundary(B, a2, fz0)
    _emit_json({
        "B": B, "a2": a2, "fz": fz0, "gamma": fb.gamma, "beta": fb.beta, "eta": fb.eta, "theta": fb.theta,
        "c1": fb.c1, "K": fb.K, "residual": fb.residual, "iterations": fb.iterations,
        "closed_form_gamma": closed_form_band(B, a2, fz0),
    }, out)
    return EXIT_OK


def _sim_config(cfg: RunConfig):
    return SimConfig(dt=cfg["sim.dt"], T=cfg["horizon"], n_paths=cfg["sim.n_paths"], seed=cfg["sim.seed"],
                     z0=cfg["sim.z0"], start=cfg["sim.start"], block_size=cfg["sim.block_size"])


def _policy(cfg: RunConfig, sol):
    costs = cfg.costs()
    if costs.is_frictionless:
        return ContinuousRebalance()
    pol = policy_for(sol, costs.epsilon, costs.lam, cfg["policy.mode"], cfg["sim.z0"])
    scale = cfg["policy.band_scale"]
    return pol if scale == 1.0 else pol.scaled(scale)


def cmd_simulate(args, cfg, out, err):
    sol = cfg.merton()
    costs = cfg.costs()
    pol = _policy(cfg, sol)
    sim = _sim_config(cfg)
    res = simulate(sol, costs, pol, sim)
    rec = simulate_path(sol, costs, pol, sim, cfg["sim.path_index"])
    if cfg["output.path"]:
        rec.to_csv(cfg["output.path"])
    mean, se = res.mean_utility()
    summary = {"mean_utility": mean, "stderr": se, "n_paths": res.n_paths,
               "trades_per_year": float(res.n_trades.mean() / sim.T), "bankrupt": int(res.bankrupt.sum()),
               "merton_value": sol.value(sim.z0, 0.0), "path_index": rec.path_index, "path_utility": rec.utility}
    if not cfg["output.path"]:
        _emit_table(rec.to_csv, cfg, out)
        err.write(json.dumps(summary, sort_keys=True) + "\n")
    else:
        _emit_json(summary, out)
    return EXIT_OK


def cmd_sweep(args, cfg, out, err):
    check_sweep(cfg)
    spec = SweepSpec(
        epsilons=tuple(cfg["sweep.epsilons"]), q=cfg["costs.q"], c=cfg["costs.c"], n_paths=cfg["sim.n_paths"],
        seed=cfg["sim.seed"], mode=cfg["policy.mode"], dt=cfg["sim.dt"], z0=cfg["sim.z0"],
        start=cfg["sim.start"], n_boot=cfg["sweep.n_boot"],
    )
    sol = cfg.merton()
    report = band_scaling(sol, spec) if spec.mode == "search" else scaling_study(sol, spec)
    _emit_table(report.to_csv, cfg, out)
    fits = {k: {"slope": v.slope, "ci": list(v.ci)} for k, v in report.fits.items()}
    err.write(json.dumps({"fits": fits, "flagged": report.flagged()}, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_density(args, cfg, out, err):
    sol = cfg.merton()
    costs = cfg.costs()
    if costs.is_frictionless:
        raise ConfigError("costs.epsilon", "the band density needs epsilon > 0 or lambda > 0")
    rep = occupancy_study(sol, costs, _policy(cfg, sol), _sim_config(cfg), n_bins=args.bins)
    _emit_table(rep.to_csv, cfg, out)
    err.write(json.dumps({"ks": rep.ks, "n_samples": rep.n_samples}) + "\n")
    return EXIT_OK


def cmd_check(args, cfg, out, err):
    results = run_checks()
    ok = all(r["passed"] for r in results.values())
    _emit_json({"passed": ok, "checks": results}, out)
    return EXIT_OK if ok else EXIT_CHECK


HANDLERS = {
    "merton": cmd_merton,
    "bands": cmd_bands,
    "freeboundary": cmd_freeboundary,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "density": cmd_density,
    "check": cmd_check,
}


def _fail(code, kind, message, err, **extra):
    err.write(json.dumps({"error": kind, "message": message, **extra}, sort_keys=True) + "\n")
    return code


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required: " + ", ".join(COMMANDS))
        cfg = load_config(args)
        return HANDLERS[args.command](args, cfg, out, err)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc), err)
    except ConfigError as exc:
        return _fail(EXIT_USAGE, "config", str(exc), err, key=exc.key, constraint=exc.constraint)
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        return _fail(EXIT_NUMERIC, "numeric", f"{type(exc).__name__}: {exc}", err)


if __name__ == "__main__":
    sys.exit(main())
