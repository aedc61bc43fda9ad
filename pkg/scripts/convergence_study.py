"""K-refinement study: optimal cost and |y - yhat| on a noisy heat problem.

    python3 scripts/convergence_study.py --K 2 4 8 16 --csv out.csv
"""
import argparse
import csv
import sys

import numpy as np

from stochlq.diagnostics import adjoint_gap
from stochlq.lq import solve_open_loop
from stochlq.model import heat_preset
from stochlq.stochastic import build_tree


def problem(K, N):
    tree = build_tree(K, 0.0, 1.0)
    B = np.linspace(1.0, 0.2, N)[:, None]
    return heat_preset(
        tree, N, 1, eta=np.ones(N), B=B, C=0.3, D=0.2 * B, sigma=0.3 * np.ones(N), G=1.0,
    )


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--K", type=int, nargs="+", default=[2, 4, 8, 16])
    parser.add_argument("--N", type=int, default=3)
    parser.add_argument("--csv", default=None)
    args = parser.parse_args()

    rows = []
    for K in args.K:
        spec = problem(K, args.N)
        u, diag = solve_open_loop(spec, tol=1e-12)
        rows.append([K, diag.cost, adjoint_gap(spec, u), diag.iterations])
    header = ["K", "cost", "adjoint_gap", "cg_iterations"]
    out = open(args.csv, "w", newline="") if args.csv else sys.stdout
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    if args.csv:
        out.close()
    for prev, cur in zip(rows, rows[1:]):
        print(f"K {prev[0]} -> {cur[0]}: gap ratio {prev[2] / cur[2]:.3f}", file=sys.stderr)


if __name__ == "__main__":
    main()
