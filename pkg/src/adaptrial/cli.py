"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 numerical or positivity error.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import config as cfgmod
from .core import NumericalError, UsageError, read_trajectory_csv, write_trajectory_csv
from .estimators import ESTIMATORS, estimate_all
from .harness import (EIC_COLUMNS, RELVAR_COLUMNS, design_convergence_trajectory, initial_outcome_model,
                      relvar_designs, relvar_estimators, run_experiment, run_monte_carlo,
                      write_metrics_csv, write_rows_csv)

SUBCOMMANDS = ("simulate", "estimate", "montecarlo", "figure2", "figure3", "figure4", "table1")
ESTIMATE_COLUMNS = ["time_point", "n", "estimator", "psi", "se", "ci_lo", "ci_hi", "epsilon", "score_residual"]
TABLE1_COLUMNS = ["design", "time", "bias", "var", "mse", "cov", "oracle_cov"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="adaptrial", description="Adaptive-experiment simulation and estimation.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", type=Path, help="flat key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="K=V", help="override a config key")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--seed", type=str, help="base seed (unsigned 64-bit)")
    p.add_argument("--threads", type=int, help="worker processes (env ADAPTRIAL_THREADS)")
    p.add_argument("--input", type=Path, help="trajectory CSV for 'estimate'")
    return p


def effective_config(args):
    raw = cfgmod.read_config_file(args.config) if args.config else {}
    raw.update(cfgmod.parse_pairs(args.set, "--set"))
    if args.seed is not None:
        raw["scenario.seed"] = args.seed
    if args.threads is not None:
        raw["mc.threads"] = str(args.threads)
    elif os.environ.get("ADAPTRIAL_THREADS"):
        raw["mc.threads"] = os.environ["ADAPTRIAL_THREADS"]
    return cfgmod.build(raw)


def _print_metrics(m, estimator="ADL-TMLE"):
    for r in m.rows:
        if r["estimator"] == estimator:
            print(f"{m.design} t={r['time_point']} n={r['n']} {estimator}: bias={r['bias']:.4g} "
                  f"var={r['var']:.4g} cov={r['coverage']:.3f} oracle_cov={r['oracle_coverage']:.3f} "
                  f"failures={r['failures']}")


def _simulate(cfg, extras, out):
    scenario = cfg.scenario()
    ns = [cfg.n_at(t) for t in cfg.time_points]
    policy = None if cfg.scenario_kind == "multisite" else cfg.policy(scenario)
    traj = run_experiment(scenario, policy, max(ns), cfg.base_seed, ns)
    write_trajectory_csv(traj, out / "trajectory.csv")
    for t, n in zip(cfg.time_points, ns):
        g = traj.prefix(n).gbar()
        print(f"t={t} n={n} treated={traj.a[:n].mean():.3f} gbar_min={g.min():.4f} gbar_max={g.max():.4f}")


def _estimate(cfg, extras, out, input_path):
    if input_path is None:
        raise UsageError("estimate needs --input PATH")
    traj = read_trajectory_csv(input_path)
    points = [(t, cfg.n_at(t)) for t in cfg.time_points if cfg.n_at(t) <= traj.n] or [("", traj.n)]
    rows = []
    failed = []
    for t, n in points:
        sub = traj.prefix(n)
        reports = estimate_all(sub, initial_outcome_model(sub, cfg), cfg.alpha, cfg.delta_trunc, cfg.score_tol)
        parts = []
        for name in ESTIMATORS:
            r = reports[name]
            if isinstance(r, Exception):
                failed.append(f"{name} at n={n}: {r}")
                rows.append(dict(time_point=t, n=n, estimator=name, psi="", se="", ci_lo="", ci_hi="",
                                 epsilon="", score_residual=""))
                parts.append(f"{name}=failed")
                continue
            rows.append(dict(time_point=t, **r.as_row()))
            parts.append(f"{name}={r.psi:.4f}(se {r.se:.4f})")
        print(f"t={t} n={n} " + " ".join(parts))
    write_rows_csv(rows, ESTIMATE_COLUMNS, out / "estimates.csv")
    for msg in failed:
        print(f"warning: {msg}", file=sys.stderr)


def _montecarlo(cfg, extras, out):
    m = run_monte_carlo(cfg)
    write_metrics_csv([m], out / "metrics.csv")
    _print_metrics(m)
    return [m]


def _designs(cfg, kinds):
    return [run_monte_carlo(replace(cfg, design_kind=k, oracle_variance=False)) for k in kinds]


def _figure2(cfg, extras, out):
    ms = _designs(cfg, ("benefit_driven", "standard_neyman"))
    write_metrics_csv(ms, out / "metrics.csv")
    rows = [r for m in ms for r in relvar_estimators(m)]
    write_rows_csv(rows, RELVAR_COLUMNS, out / "relvar.csv")
    for r in rows:
        print(f"{r['design']} t={r['time_point']} n={r['n']} var(ADL-TMLE)/var(AD-TMLE)={r['ratio']:.4f}")


def _figure3(cfg, extras, out):
    ms = _designs(cfg, ("non_adaptive", "standard_neyman", "gbar_driven", "oracle_neyman"))
    write_metrics_csv(ms, out / "metrics.csv")
    rows = [r for m in ms[1:] for r in relvar_designs(m, ms[0])]
    write_rows_csv(rows, RELVAR_COLUMNS, out / "relvar.csv")
    for r in rows:
        print(f"{r['comparison']} t={r['time_point']} n={r['n']} ratio={r['ratio']:.4f}")


def _figure4(cfg, extras, out):
    rows = design_convergence_trajectory(cfg, reps=extras["mc.eic_reps"])
    write_rows_csv(rows, EIC_COLUMNS, out / "eic_trajectory.csv")
    for r in rows:
        print(f"{r['design']} t={r['time_point']} n={r['n']} relative={r['relative']:.6f}")


def _table1(cfg, extras, out):
    ms = _designs(cfg, ("benefit_driven", "standard_neyman"))
    write_metrics_csv(ms, out / "metrics.csv")
    rows = []
    for m in ms:
        for t in cfg.time_points:
            r = m.row("ADL-TMLE", t)
            rows.append(dict(design=m.design, time=t, bias=r["bias"], var=r["var"], mse=r["mse"],
                             cov=r["coverage"], oracle_cov=r["oracle_coverage"]))
        _print_metrics(m)
    write_rows_csv(rows, TABLE1_COLUMNS, out / "table1.csv")


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
        cfg, extras = effective_config(args)
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "config.txt").write_text(cfgmod.dump(cfg, extras))
        if args.subcommand == "estimate":
            _estimate(cfg, extras, args.out, args.input)
        else:
            handler = {"simulate": _simulate, "montecarlo": _montecarlo, "figure2": _figure2,
                       "figure3": _figure3, "figure4": _figure4, "table1": _table1}[args.subcommand]
            handler(cfg, extras, args.out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
