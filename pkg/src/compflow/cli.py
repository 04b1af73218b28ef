"""Command-line entry point.

Usage::

    compflow <command> (--scenario PATH | --preset NAME) [--out DIR] [--seed N] [--jobs N]

Commands and the CSV each writes (``<command>.csv`` under ``--out``, or stdout):

=========  ==============================================================
entropy    class, source, graph_entropy, source_entropy, gamma_surj
analyze    per node-class flows and delays at gamma = Gamma lambda, or the
           example cost table for ``example`` scenarios
threshold  L, class, complexity, m, d, rho_th, feasible (plus rho_th_coupled)
bounds     occupancy bounds per node-class from the processing-factor
           interval and from the flow/entropy sandwich
optimize   min_cost, comms_cost, comms_cost_closed, feasible, converged,
           iterations and the optimal ratio per node-class
simulate   simulated L, m, n, throughput, sojourn with analytic counterparts
sweep      one row per grid point of the scenario's sweep
compare    separate vs mixed layouts (per occupancy level when given)
=========  ==============================================================

Every file starts with ``#`` comment lines (schema version, scenario, seed,
the surjectivity of each class) followed by a header row. Numbers carry 12
significant digits. Exit codes: 0 success, 2 invalid scenario or usage, 3
infeasible or unstable model, 4 solver non-convergence.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import analysis, desim, optimizer
from .errors import (
    CompflowError,
    ConvergenceError,
    InfeasibleError,
    InstabilityError,
    ScenarioError,
    SingularSystemError,
)
from .flownet import lambda_bounds, solve_traffic
from .queueing import Complexity, complexity
from .scenario import PRESETS, Scenario, expand_grid, load_preset, load_scenario

SCHEMA_VERSION = 1
COMMANDS = ("entropy", "analyze", "threshold", "bounds", "optimize", "simulate", "sweep", "compare")

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_NONCONVERGED = 0, 2, 3, 4


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.12g" % float(value)
    return str(value)


def render_csv(rows: list[dict], columns: list[str], preamble: list[str]) -> str:
    buf = io.StringIO()
    for line in preamble:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt(row.get(col, "")) for col in columns])
    return buf.getvalue()


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Result:
    def __init__(self, rows, columns, notes=(), status=EXIT_OK):
        self.rows = rows
        self.columns = columns
        self.notes = list(notes)
        self.status = status


def _columns(rows, leading):
    cols = list(leading)
    for row in rows:
        for key in row:
            if key not in cols:
                cols.append(key)
    return cols


def _solver_options(sc: Scenario, seed: int, args) -> optimizer.SolverOptions:
    kw = dict(sc.solver)
    kw["seed"] = seed
    if getattr(args, "restarts", None) is not None:
        kw["restarts"] = args.restarts
    if getattr(args, "mode", None):
        kw["mode"] = args.mode
    try:
        return optimizer.SolverOptions(**kw)
    except TypeError as exc:
        raise ScenarioError(f"solver: {exc}") from exc


def cmd_entropy(sc, args, seed):
    net = sc.require_network()
    rows = []
    for c, name in enumerate(net.class_names):
        info = sc.surjectivity.get(name)
        rows.append(
            {
                "class": name,
                "source": "function" if info else "given",
                "graph_entropy": info["graph_entropy"] if info else math.nan,
                "source_entropy": info["source_entropy"] if info else math.nan,
                "gamma_surj": net.gamma_surj[c],
            }
        )
    return Result(rows, ["class", "source", "graph_entropy", "source_entropy", "gamma_surj"])


def _example_rows(ex):
    if ex["kind"] == "bisection_allocation":
        rows = []
        for W in ex.get("W", [0]):
            comp, comm = analysis.bisection_allocation_cost(ex["N"], ex["V"], int(W))
            rows.append({"N": ex["N"], "V": ex["V"], "W": int(W), "compute_cost": comp, "comm_cost": comm})
        return Result(rows, ["N", "V", "W", "compute_cost", "comm_cost"])
    rows = []
    for W in ex.get("W", [1]):
        split, central, min_w = analysis.classification_split_cost(ex["N"], int(W))
        rows.append(
            {"N": ex["N"], "W": int(W), "split_cost": split, "central_cost": central,
             "min_W": min_w, "split_wins": split < central}
        )
    return Result(rows, ["N", "W", "split_cost", "central_cost", "min_W", "split_wins"])


def cmd_analyze(sc, args, seed):
    if sc.network is None and sc.example:
        return _example_rows(sc.example)
    net = sc.require_network()
    V, C = net.shape
    ratio = np.broadcast_to(net.gamma_surj, (V, C))
    flow = solve_traffic(net, "ratio", ratio=ratio)
    w_comp, w_comm, m, n, feasible = optimizer.cost_arrays(net, flow.lam, flow.gamma)
    if not feasible:
        raise InfeasibleError("flows at gamma = Gamma lambda saturate a communication queue")
    lo, hi = lambda_bounds(net)
    rows = []
    for v in range(V):
        for c in range(C):
            wt = max(w_comp[v, c], w_comm[v, c]) if net.delay_mode.value == "pipelined" else w_comp[v, c] + w_comm[v, c]
            rows.append(
                {
                    "node": net.node_names[v], "class": net.class_names[c],
                    "lambda": flow.lam[v, c], "gamma": flow.gamma[v, c],
                    "rho": flow.gamma[v, c] / net.mu[v, c],
                    "m": m[v, c], "n": n[v, c], "L": m[v, c] + n[v, c],
                    "w_comp": w_comp[v, c], "w_comm": w_comm[v, c], "w_total": wt,
                    "lambda_lower": lo[v, c], "lambda_upper": hi[v, c],
                }
            )
    notes = [f"total={fmt(optimizer._total(net, w_comp, w_comm))}", f"residual={fmt(flow.residual)}"]
    return Result(rows, _columns(rows, []), notes)


def cmd_threshold(sc, args, seed):
    net = sc.require_network()
    grid = expand_grid(sc.threshold.get("L", {"start": 1, "stop": 50, "num": 50}))
    coupled = args.coupled or bool(sc.threshold.get("coupled", False))
    rows = []
    for L in grid:
        for c, name in enumerate(net.class_names):
            cls, g, k = net.complexity[c], float(net.gamma_surj[c]), float(net.k[0, c])
            m = L * (1.0 - g)
            row = {"L": L, "class": name, "complexity": cls.value, "m": m, "d": math.nan,
                   "rho_th": math.nan, "feasible": False, "note": ""}
            try:
                d = complexity(cls, m, k)
                res = analysis.load_threshold(d, g)
                row.update(d=d, rho_th=res.rho_th, feasible=res.feasible)
                if coupled:
                    row["rho_th_coupled"] = analysis.load_threshold_coupled(cls, k, g).rho_th
            except ValueError as exc:
                row["note"] = str(exc)
            rows.append(row)
    cols = ["L", "class", "complexity", "m", "d", "rho_th", "feasible"]
    if coupled:
        cols.append("rho_th_coupled")
    return Result(rows, cols + ["note"])


def cmd_bounds(sc, args, seed):
    net = sc.require_network()
    V, C = net.shape
    flow = solve_traffic(net, "ratio", ratio=np.broadcast_to(net.gamma_surj, (V, C)))
    _, _, m, n, _ = optimizer.cost_arrays(net, flow.lam, flow.gamma)
    rows = []
    for v in range(V):
        for c in range(C):
            lam, mu, g = flow.lam[v, c], net.mu[v, c], float(net.gamma_surj[c])
            if lam <= 0:
                continue
            row = {"node": net.node_names[v], "class": net.class_names[c], "lambda": lam, "mu": mu,
                   "L": m[v, c] + n[v, c], "note": ""}
            try:
                d = complexity(net.complexity[c], m[v, c], float(net.k[v, c]))
                row["d"] = d
                b = analysis.little_L_bounds(lam, mu, d)
                row.update(b_minus=b.b_minus, b_plus=b.b_plus, gamma_cap=b.gamma_cap,
                           L_lower_interval=b.lower, L_upper_interval=b.upper, regime=b.regime)
            except ValueError as exc:
                row["note"] = str(exc)
            try:
                fb = analysis.flow_L_bounds(g * lam, lam, mu, lam)
                row.update(L_lower_flow=fb.lower, L_upper_flow=fb.upper, approx_upper=fb.approx_upper,
                           gamma_min=fb.gamma_min,
                           sandwich=bool(fb.lower - 1e-9 <= row["L"] <= fb.upper + 1e-9))
            except ValueError as exc:
                row["note"] = (row["note"] + "; " if row["note"] else "") + str(exc)
            rows.append(row)
    cols = ["node", "class", "lambda", "mu", "L", "d", "b_minus", "b_plus", "gamma_cap", "L_lower_interval",
            "L_upper_interval", "regime", "L_lower_flow", "L_upper_flow", "approx_upper", "gamma_min",
            "sandwich", "note"]
    return Result(rows, cols)


def cmd_optimize(sc, args, seed):
    net = sc.require_network()
    opts = _solver_options(sc, seed, args)
    obj, flow = optimizer.min_cost(net, opts)
    row = {"min_cost": obj.total, "feasible": obj.feasible, "converged": obj.converged, "iterations": obj.iterations}
    for form, key in (("direct", "comms_cost"), ("closed", "comms_cost_closed")):
        try:
            row[key] = optimizer.comms_cost(net, form)
        except (InfeasibleError, SingularSystemError):
            row[key] = math.inf
    V, C = net.shape
    for v in range(V):
        for c in range(C):
            row[f"t_{net.node_names[v]}_{net.class_names[c]}"] = obj.ratio[v, c]
    cols = _columns([row], ["min_cost", "comms_cost", "comms_cost_closed", "feasible", "converged", "iterations"])
    return Result([row], cols, status=EXIT_OK if obj.converged else EXIT_NONCONVERGED)


def cmd_simulate(sc, args, seed):
    net = sc.require_network()
    cfg_kw = dict(sc.simulation)
    for key in ("departures", "duration", "warmup", "slot"):
        val = getattr(args, key, None)
        if val is not None:
            cfg_kw[key] = val
    if "duration" in cfg_kw and "departures" not in cfg_kw:
        cfg_kw["departures"] = None
    tol = float(cfg_kw.pop("tol", 0.05))
    try:
        cfg = desim.SimConfig(net, seed=seed, **cfg_kw)
    except TypeError as exc:
        raise ScenarioError(f"simulation: {exc}") from exc
    stats = desim.run_simulation(cfg)
    flow = solve_traffic(net, "ratio", ratio=stats.ratio)
    report = desim.compare_to_analytic(stats, flow, tol=tol)
    little = desim.empirical_little_check(stats)
    rows = []
    for srow, arow, lrow in zip(stats.rows(), report["rows"], little):
        row = dict(srow)
        row.update({k: arow[k] for k in ("lambda_theory", "L_theory", "W_theory", "err_lambda", "err_L", "err_W")})
        row["analytic_pass"] = arow["pass"]
        row["little_pass"] = lrow["pass"]
        rows.append(row)
    notes = [f"events={stats.events}", f"window={fmt(stats.window)}", f"analytic_pass={fmt(report['pass'])}",
             f"little_pass={fmt(all(r['pass'] for r in little))}"]
    return Result(rows, _columns(rows, []), notes)


def cmd_sweep(sc, args, seed):
    net = sc.require_network()
    parameter = args.parameter or sc.sweep.get("parameter")
    if parameter is None:
        raise ScenarioError("sweep: no parameter given in the scenario or on the command line")
    grid = expand_grid(args.grid.split(",")) if args.grid else expand_grid(sc.sweep.get("grid", []))
    at_L = args.at_L if args.at_L is not None else sc.sweep.get("at_L")
    rows = optimizer.sweep(net, parameter, grid, _solver_options(sc, seed, args), jobs=args.jobs, at_L=at_L)
    cols = ["parameter", "value", "min_cost", "comms_cost", "comms_cost_closed", "feasible", "converged",
            "mean_ratio", "error"]
    notes = [f"at_L={fmt(at_L)}"] if at_L is not None else []
    return Result(rows, cols, notes)


def cmd_compare(sc, args, seed):
    net = sc.require_network()
    opts = _solver_options(sc, seed, args)
    levels = expand_grid(sc.compare.get("L"))
    rows = []
    for L in levels or [None]:
        point = net if L is None else optimizer.scale_to_occupancy(net, L)
        for row in optimizer.compare_separate_vs_mixed(point, opts):
            rows.append({"L": math.nan if L is None else L, **row})
    return Result(rows, _columns(rows, ["L", "config", "min_cost", "comms_cost", "feasible", "error"]))


HANDLERS = {
    "entropy": cmd_entropy, "analyze": cmd_analyze, "threshold": cmd_threshold, "bounds": cmd_bounds,
    "optimize": cmd_optimize, "simulate": cmd_simulate, "sweep": cmd_sweep, "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", type=Path, help="scenario YAML file")
    src.add_argument("--preset", choices=PRESETS, help="shipped scenario")
    common.add_argument("--out", type=Path, help="output directory (default: stdout)")
    common.add_argument("--seed", type=int, help="override the scenario seed")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers for sweeps")
    common.add_argument("--format", choices=["csv"], default="csv")

    parser = argparse.ArgumentParser(prog="compflow", description="Function computation over queueing networks.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=f"{name} report")
        if name == "threshold":
            p.add_argument("--coupled", action="store_true", help="add the fixed-point threshold column")
        if name in ("optimize", "sweep", "compare"):
            p.add_argument("--restarts", type=int)
            p.add_argument("--mode", choices=["closed_form", "projected_descent", "grid"])
        if name == "sweep":
            p.add_argument("--parameter", choices=optimizer.SWEEP_PARAMETERS)
            p.add_argument("--grid", help="comma-separated grid values")
            p.add_argument("--at-L", dest="at_L", type=float, help="rescale arrivals to this occupancy per point")
        if name == "simulate":
            p.add_argument("--departures", type=int)
            p.add_argument("--duration", type=float)
            p.add_argument("--warmup", type=float)
            p.add_argument("--slot", type=float)
    return parser


def run(args) -> int:
    sc = load_preset(args.preset) if args.preset else load_scenario(args.scenario)
    seed = sc.seed if args.seed is None else args.seed
    if seed < 0:
        raise ScenarioError("seed must be nonnegative")
    if args.jobs < 1:
        raise ScenarioError("--jobs must be at least 1")
    result = HANDLERS[args.command](sc, args, seed)
    preamble = [f"schema={args.command}/{SCHEMA_VERSION}", f"scenario={sc.name}", f"seed={seed}"]
    if sc.network is not None:
        for c, name in enumerate(sc.network.class_names):
            line = f"Gamma[{name}]={fmt(sc.network.gamma_surj[c])}"
            info = sc.surjectivity.get(name)
            if info:
                line += f" computed H_G={fmt(info['graph_entropy'])} H_X={fmt(info['source_entropy'])}"
            preamble.append(line)
    preamble += result.notes
    text = render_csv(result.rows, result.columns, preamble)
    if args.out is None:
        sys.stdout.write(text)
    else:
        write_atomic(args.out / f"{args.command}.csv", text)
    return result.status


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    try:
        return run(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for v in exc.violations:
            print(f"  {v}", file=sys.stderr)
        return EXIT_INVALID
    except (InfeasibleError, InstabilityError, SingularSystemError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ConvergenceError as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (CompflowError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
