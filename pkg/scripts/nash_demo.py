"""Solve a random convex two-player game and verify the equilibrium.

    python3 scripts/nash_demo.py --seed 3 --K 4
"""
import argparse

import numpy as np

from stochlq.game import player_cost, solve_nash, verify_nash
from stochlq.instances import random_game


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--K", type=int, default=4)
    parser.add_argument("--N", type=int, default=3)
    parser.add_argument("--m", type=int, default=1)
    args = parser.parse_args()

    game = random_game(np.random.default_rng(args.seed), N=args.N, m=args.m, K=args.K)
    cand = solve_nash(game)
    ver = verify_nash(game, cand, seed=args.seed)
    print(f"label        {cand.label} ({cand.method}, {cand.iterations} iterations)")
    print(f"residuals    {cand.residuals[0]:.2e} {cand.residuals[1]:.2e}")
    print(f"min eigs     {cand.min_eigs[0]:.4f} {cand.min_eigs[1]:.4f}")
    print(f"best resp.   {ver.best_response_distance[0]:.2e} {ver.best_response_distance[1]:.2e}")
    print(f"costs        {player_cost(game, 1, cand.u1, cand.u2):.6f} {player_cost(game, 2, cand.u1, cand.u2):.6f}")
    print(f"verified     {ver.passed}")


if __name__ == "__main__":
    main()
