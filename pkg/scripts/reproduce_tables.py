#!/usr/bin/env python3
"""Solve every built-in case with both loss families and print the tables.

Equivalent to `batsnum reproduce --tables`; kept as a script so the sweep
is easy to run piecemeal or under a profiler.
"""

import argparse
import sys
import time

from batsnum import solvers
from batsnum.scenarios import load_scenario


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--loss", choices=["iid", "ge"], default=None)
    ap.add_argument("--cases", type=int, nargs="*", default=None)
    args = ap.parse_args()
    families = [args.loss] if args.loss else ["iid", "ge"]
    cases = args.cases or list(range(1, 12))
    print(f"{'case':>4} {'family':>6} {'U1':>9} {'U2':>9} "
          f"{'U1+':>9} {'U2+':>9} {'U~':>9} {'k_nap':>7} {'k_2s':>7} {'s':>5}")
    for family in families:
        for n in cases:
            t0 = time.time()
            sc = load_scenario(f"case{n}", loss_family=family)
            nap = solvers.solve_nap(sc)
            two = solvers.two_step_solve(sc, nap_solution=nap)
            print(f"{n:>4} {family:>6} "
                  f"{nap.utilities[0]:>9.3f} {nap.utilities[1]:>9.3f} "
                  f"{two.utilities[0]:>9.3f} {two.utilities[1]:>9.3f} "
                  f"{nap.u_tilde:>9.3f} {nap.kappa*100:>6.2f}% "
                  f"{two.kappa*100:>6.2f}% {time.time()-t0:>4.0f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
