"""Command line entry point: solve, simulate, reproduce.

Exit codes: 0 ok, 2 validation error, 3 solver non-convergence,
4 infeasible simulation input.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

from . import sim, solvers
from .netmodel import ValidationError
from .scenarios import load_scenario, scenario_to_config
from .sim import SimulationInputError
from .solvers import Solution

OUTDIR_ENV = "BATSNUM_OUTDIR"

TABLE_COLUMNS = ["case", "U1", "U2", "U_tilde", "kappa", "mode", "loss_family"]


def _outdir(args):
    out = args.outdir or os.environ.get(OUTDIR_ENV) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _load(args):
    if args.scenario:
        return load_scenario(args.scenario, loss_family=args.loss)
    return load_scenario(f"case{args.case}", loss_family=args.loss)


def _solve_one(scenario, mode):
    if mode == "up":
        up = solvers.solve_up(scenario)
        return None, up
    if mode == "nap":
        return solvers.solve_nap(scenario), None
    if mode == "two-step":
        return solvers.two_step_solve(scenario), None
    if mode == "pd":
        return solvers.primal_dual_adaptive(scenario), None
    raise ValidationError(f"unknown mode {mode!r}")


def cmd_solve(args):
    scenario = _load(args)
    t0 = time.time()
    solution, up = _solve_one(scenario, args.mode)
    elapsed = time.time() - t0
    out = _outdir(args)
    base = f"{scenario.name}-{args.mode}"
    if args.mode == "up":
        doc = {"mode": "up", "u_tilde": up.u_tilde,
               "utilities": [float(u) for u in up.utilities],
               "f": [float(x) for x in up.f]}
        path = os.path.join(out, f"{base}.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, indent=2)
        print(f"U_tilde = {up.u_tilde:.6f}  ({path})")
        return 0
    path = os.path.join(out, f"{base}.json")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(solution.to_json())
    report = {"scenario": scenario.name, "mode": args.mode,
              "u_total": solution.u_total, "u_tilde": solution.u_tilde,
              "kappa": solution.kappa, "wall_clock_s": elapsed}
    with open(os.path.join(out, f"{base}-report.json"), "w",
              encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
    us = " ".join(f"{u:.4f}" for u in solution.utilities)
    print(f"{scenario.name} {args.mode}: U = [{us}] "
          f"U_tilde = {solution.u_tilde:.4f} kappa = {solution.kappa*100:.2f}%  "
          f"({path})")
    return 0


def cmd_simulate(args):
    scenario = _load(args)
    with open(args.solution, "r", encoding="utf-8") as fh:
        solution = Solution.from_json(fh.read())
    report = sim.run_simulation(scenario, solution, slots=args.slots,
                                rng_seed=args.seed)
    out = _outdir(args)
    base = f"{scenario.name}-sim"
    with open(os.path.join(out, f"{base}.json"), "w", encoding="utf-8") as fh:
        doc = report.to_json_dict()
        stability = sim.buffer_stability(report)
        doc["buffer_stability"] = {"stable": stability.stable,
                                   "slopes": stability.slopes}
        json.dump(doc, fh, sort_keys=True, indent=2)
    csv_path = os.path.join(out, f"{base}-buffers.csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "node", "buffer_size"])
        series = report.buffer_series
        for j, node in enumerate(report.buffer_nodes):
            col = series[:, j]
            for slot in range(0, series.shape[0], args.buffer_stride):
                w.writerow([slot, node, int(col[slot])])
    for fid in report.flow_ids:
        print(f"{fid}: utility = {report.utilities[fid]:.4f} "
              f"completed = {report.completed[fid]}")
    print(f"buffers stable: {stability.stable}  ({csv_path})")
    return 0


def cmd_reproduce(args):
    out = _outdir(args)
    families = [args.loss] if args.loss else ["iid", "ge"]
    cases = [args.case] if args.case else list(range(1, 12))
    rows = []
    for family in families:
        for n in cases:
            scenario = load_scenario(f"case{n}", loss_family=family)
            nap = solvers.solve_nap(scenario)
            two = solvers.two_step_solve(scenario, nap_solution=nap)
            for mode, sol in (("nap", nap), ("two-step", two)):
                rows.append([n, f"{sol.utilities[0]:.6f}",
                             f"{sol.utilities[1]:.6f}", f"{sol.u_tilde:.6f}",
                             f"{sol.kappa:.6f}", mode, family])
            print(f"case {n} [{family}]: nap kappa = {nap.kappa*100:.2f}% "
                  f"two-step kappa = {two.kappa*100:.2f}%")
    path = os.path.join(out, "tables.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE_COLUMNS)
        w.writerows(rows)
    print(f"wrote {path}")
    return 0


def cmd_export(args):
    scenario = _load(args)
    print(json.dumps(scenario_to_config(scenario), sort_keys=True, indent=2))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="batsnum")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--case", type=int, choices=range(1, 12),
                        metavar="1..11", help="built-in line-network case")
        sp.add_argument("--scenario", help="path to a scenario JSON document")
        sp.add_argument("--loss", choices=["iid", "ge"], default="iid",
                        help="loss family for built-in cases")
        sp.add_argument("--outdir", default=None,
                        help=f"output directory (default ${OUTDIR_ENV} or cwd)")

    sp = sub.add_parser("solve", help="run one solver on one scenario")
    common(sp)
    sp.add_argument("--mode", choices=["nap", "two-step", "up", "pd"],
                    required=True)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("simulate", help="packet-level run of a solved config")
    common(sp)
    sp.add_argument("--solution", required=True, help="solution JSON path")
    sp.add_argument("--slots", type=int, default=1_000_000)
    sp.add_argument("--seed", type=int, default=7)
    sp.add_argument("--buffer-stride", type=int, default=1,
                    help="CSV downsampling stride for the buffer series")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("reproduce",
                        help="solve the built-in cases and emit summary tables")
    sp.add_argument("--tables", action="store_true",
                    help="accepted for compatibility; tables are always written")
    sp.add_argument("--loss", choices=["iid", "ge"], default=None,
                    help="restrict to one loss family")
    sp.add_argument("--case", type=int, choices=range(1, 12), default=None,
                    metavar="1..11", help="restrict to one case")
    sp.add_argument("--outdir", default=None)
    sp.set_defaults(func=cmd_reproduce)

    sp = sub.add_parser("export-config", help="print a scenario as JSON")
    common(sp)
    sp.set_defaults(func=cmd_export)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "command", None) in ("solve", "simulate", "export-config"):
        if not args.scenario and args.case is None:
            print("error: provide --case or --scenario", file=sys.stderr)
            return 2
    try:
        return args.func(args)
    except ValidationError as e:
        print(f"validation error: {e}", file=sys.stderr)
        return 2
    except SimulationInputError as e:
        print(f"infeasible simulation input: {e}", file=sys.stderr)
        return 4
    except RuntimeError as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
