"""Command-line entry point: ``thermo-ri <subcommand> --config FILE --out DIR --seed N``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import harness
from .config import build_dual, build_energy, build_partition, build_region, build_spec, load_config
from .dissipation import DissipationPotential
from .effective import EffectivePotential
from .errors import ThermoRIError
from .solvers import energy_balance_report, integrate_limit_ode, solve_rate_independent
from .thermal import ChainConfig, simulate_chain

log = logging.getLogger("thermo_ri")

# subcommands whose outcome is a pass/fail assertion
ASSERTION_KINDS = {"ri-solve", "converge", "eps-rate", "check"}


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for r in rows:
            wr.writerow([f"{float(v):.17g}" for v in r])


def _dump(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=_jsonable)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    return str(o)


def cmd_ri_solve(cfg, args):
    energy = build_energy(cfg)
    d = DissipationPotential(build_region(cfg))
    P = build_partition(cfg, energy.horizon)
    traj = solve_rate_independent(energy, d, P, cfg["x0"])
    n = traj.dim
    _write_rows(os.path.join(args.out, "trajectory.csv"), ["t"] + [f"x{i + 1}" for i in range(n)] + ["margin"],
                np.column_stack([P.knots, traj.values, traj.margins]))
    ledger = energy_balance_report(traj, energy, d)
    _write_rows(os.path.join(args.out, "energy_ledger.csv"),
                ["step", "t", "delta_energy", "dissipation", "work", "w_new", "w_stay", "ok"],
                [[r["step"], r["t"], r["delta_energy"], r["dissipation"], r["work"], r["w_new"], r["w_stay"], r["ok"]]
                 for r in ledger])
    ok = all(r["ok"] for r in ledger)
    return ok, {"ledger_ok": ok, "steps": P.n_steps}


def cmd_ode(cfg, args):
    energy = build_energy(cfg)
    dual = build_dual(cfg)
    ode = cfg.get("ode", {})
    method = ode.get("method", "rk4")
    P = build_partition(cfg, energy.horizon) if method == "euler" else None
    sol = integrate_limit_ode(energy, dual, float(cfg.get("theta", 1.0)), cfg["x0"], method=method, partition=P,
                              atol=float(ode.get("atol", 1e-8)),
                              thermal_correction=bool(ode.get("thermal_correction", False)))
    n = sol.dim
    _write_rows(os.path.join(args.out, "trajectory.csv"),
                ["t"] + [f"y{i + 1}" for i in range(n)] + ["margin", "dual_trace"],
                np.column_stack([sol.t, sol.y, sol.margins, sol.trace]))
    return True, {"violated": sol.violated, "violation_time": sol.violation_time, "sup_trace": sol.max_trace,
                  "message": sol.message}


def cmd_simulate(cfg, args):
    energy = build_energy(cfg)
    region = build_region(cfg)
    P = build_partition(cfg, energy.horizon)
    chain = ChainConfig(energy, region, P, float(cfg.get("theta", 1.0)), cfg["x0"], seed=args.seed,
                        replicates=int(cfg.get("replicates", 100)), sampler=cfg.get("sampler", "auto"),
                        burn_in=int(cfg.get("burn_in", 200)), thinning=int(cfg.get("thinning", 10)))
    run = simulate_chain(chain, threads=args.threads)
    mean = run.mean_path()
    lo, med, hi = run.quantile_band()
    inc_mean, inc_var = run.step_moments()
    summary = {
        "t": P.knots,
        "mean_path": mean,
        "quantiles": {"0.05": lo, "0.5": med, "0.95": hi},
        "step_moments": {"t": P.knots[1:], "mean": inc_mean, "var": inc_var},
    }
    _dump(os.path.join(args.out, "summary.json"), summary)
    diag = {"sampler": run.sampler, "replicates": run.replicates, "truncated": run.n_truncated,
            "truncated_at": run.truncated_at, "acceptance": run.acceptance}
    _dump(os.path.join(args.out, "diagnostics.json"), diag)
    if cfg.get("write_paths", False):
        n = chain.dim
        rows = []
        for r in range(run.replicates):
            for i, t in enumerate(P.knots):
                rows.append([r, t, *run.paths[r, i]])
        _write_rows(os.path.join(args.out, "paths.csv"), ["replicate", "t"] + [f"x{i + 1}" for i in range(n)], rows)
    return True, {"truncated": run.n_truncated}


def cmd_effective(cfg, args):
    region = build_region(cfg)
    dual = build_dual(cfg, region)
    # w varies along the first axis; other components stay 0
    grid = cfg.get("grid", {})
    n_w = int(grid.get("n_w", 199))
    scale = float(region.sigma[0]) if region.sigma is not None else region.inner_radius
    w = np.linspace(-scale, scale, n_w + 2)[1:-1]
    W = np.zeros((w.size, dual.dim))
    W[:, 0] = w
    rows = []
    for row in W:
        v = float(dual.value(row))
        g = dual.gradient(row) if np.isfinite(v) else np.full(dual.dim, np.nan)
        rows.append([*row, v, *g])
    n = dual.dim
    _write_rows(os.path.join(args.out, "dual.csv"),
                [f"w{i + 1}" for i in range(n)] + ["value"] + [f"grad{i + 1}" for i in range(n)], rows)
    cramer = EffectivePotential(dual)
    x_max = float(grid.get("x_max", 6.0))
    xs = np.linspace(-x_max, x_max, int(grid.get("n_x", 121)))
    prow = []
    for x in xs:
        X = np.zeros(n)
        X[0] = x
        prow.append([*X, float(DissipationPotential(region)(X)), cramer.value(X)])
    _write_rows(os.path.join(args.out, "primal.csv"), [f"x{i + 1}" for i in range(n)] + ["psi", "cramer"], prow)
    return True, {"normalization": dual.normalization}


def cmd_converge(cfg, args):
    spec = build_spec(cfg, "convergence", seed=args.seed)
    rep = harness.run_convergence_study(spec, threads=args.threads)
    _dump(os.path.join(args.out, "report.json"), rep.to_dict())
    _write_rows(os.path.join(args.out, "table.csv"),
                ["h", "prob_exceed", "prob_se", "mean_sup", "mean_se", "complete", "truncated"],
                [[r[k] for k in ("h", "prob_exceed", "prob_se", "mean_sup", "mean_se", "complete", "truncated")]
                 for r in rep.table()])
    return rep.passed, {"slope": rep.slope, "slope_ci": rep.slope_ci}


def cmd_eps_rate(cfg, args):
    spec = build_spec(cfg, "eps-rate", seed=args.seed)
    rep = harness.run_eps_rate_study(spec)
    _dump(os.path.join(args.out, "report.json"), rep.to_dict())
    return rep.passed, {"grad_slope": rep.grad_slope, "flow_slope": rep.flow_slope}


def cmd_check(cfg, args):
    energy = build_energy(cfg)
    dual = build_dual(cfg)
    chk = cfg.get("check", {})
    expect = chk.get("expect", {})
    t_grid = np.linspace(0.0, energy.horizon, int(chk.get("n_t", 11)))
    x_lo, x_hi = chk.get("x_range", [-1.0, 1.0])
    x_grid = np.linspace(x_lo, x_hi, int(chk.get("n_x", 200)))
    nasty = harness.check_nasty_convexity(energy, dual, t_grid, x_grid)
    finite = harness.check_finite_energy(energy, dual, float(cfg.get("theta", 1.0)), cfg["x0"])
    out = {
        "nasty_convexity": {"passed": nasty.passed, "witness": nasty.witness, **nasty.details},
        "finite_energy": {"passed": finite.passed, "witness": finite.witness, **finite.details},
    }
    _dump(os.path.join(args.out, "report.json"), out)
    ok = (nasty.passed == bool(expect.get("nasty_convexity", True))
          and finite.passed == bool(expect.get("finite_energy", True)))
    return ok, {"nasty_convexity": nasty.passed, "finite_energy": finite.passed}


def cmd_figures(cfg, args):
    data = harness.reproduce_figures(args.out)
    return True, {"small_x_ratio": data["edp_small_ratio"]}


COMMANDS = {
    "ri-solve": cmd_ri_solve,
    "ode": cmd_ode,
    "simulate": cmd_simulate,
    "effective": cmd_effective,
    "converge": cmd_converge,
    "eps-rate": cmd_eps_rate,
    "check": cmd_check,
    "figures": cmd_figures,
}


def build_parser():
    p = argparse.ArgumentParser(prog="thermo-ri", description=__doc__)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON or TOML experiment file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.config is None and args.command != "figures":
        print(f"thermo-ri {args.command}: --config is required", file=sys.stderr)
        return 2
    cfg = load_config(args.config) if args.config else {}
    if args.seed is None:
        args.seed = int(cfg.get("seed", 0))
    os.makedirs(args.out, exist_ok=True)
    try:
        ok, info = COMMANDS[args.command](cfg, args)
    except ThermoRIError as exc:
        log.error("%s failed: %s", args.command, exc)
        ok, info = False, {"error": f"{type(exc).__name__}: {exc}"}
        if args.command not in ASSERTION_KINDS:
            harness.write_manifest(args.out, cfg, args.seed, command=args.command, extra={"result": info})
            return 1
    harness.write_manifest(args.out, cfg, args.seed, command=args.command,
                           extra={"result": json.loads(json.dumps(info, default=_jsonable)), "passed": ok})
    status = "PASS" if ok else "FAIL"
    if args.command in ASSERTION_KINDS:
        print(f"{args.command}: {status}")
    return 0 if (ok or args.command not in ASSERTION_KINDS) else 1


if __name__ == "__main__":
    sys.exit(main())
