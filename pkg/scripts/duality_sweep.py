"""Duality, adjoint-pairing and expansion residuals over many random tree instances.

    python3 scripts/duality_sweep.py --instances 200 --seed 0
"""
import argparse

import numpy as np

from stochlq.diagnostics import adjoint_pairing_residuals, duality_residuals, expansion_residual, random_control
from stochlq.instances import random_lq_problem


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--instances", type=int, default=100)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--max-K", type=int, default=6)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    worst = {"transposition": 0.0, "duality": 0.0, "pairing": 0.0, "expansion": 0.0}
    for _ in range(args.instances):
        K = int(rng.integers(1, args.max_K + 1))
        spec = random_lq_problem(
            rng, N=int(rng.integers(1, 6)), m=int(rng.integers(1, 4)), K=K,
            t_index=int(rng.integers(0, K)), with_S=bool(rng.integers(0, 2)),
        )
        dual = duality_residuals(spec, rng)
        worst["transposition"] = max(worst["transposition"], dual.transposition)
        worst["duality"] = max(worst["duality"], dual.duality)
        worst["pairing"] = max(worst["pairing"], *adjoint_pairing_residuals(spec, rng))
        u, v = random_control(spec, rng), random_control(spec, rng)
        worst["expansion"] = max(worst["expansion"], expansion_residual(spec, u, v, float(rng.uniform(1e-3, 1))))
    for name, value in worst.items():
        print(f"{name:14s} {value:.3e}")


if __name__ == "__main__":
    main()
