"""Command-line harness: ``slq <command> --config <path> [--seed n] [--format json|csv] [--out dir]``.

Exit codes: 0 every check passed, 1 a check failed, 2 configuration or usage
error, 3 numerical or capacity error.
"""
from __future__ import annotations

import argparse
import sys
import warnings

import numpy as np

from . import __version__
from .config import MAX_TREE_LEVELS, ProblemConfig, load_config
from .diagnostics import (
    adjoint_gap,
    adjoint_pairing_residuals,
    duality_residuals,
    expansion_residual,
    random_control,
)
from .errors import CapacityError, ConfigError, IndefiniteError, InvalidGridError, NoEquilibriumError, NumericError, ShapeError
from .forward import solve_forward
from .game import GameSpec, check_convexity_homogeneous, solve_nash, verify_nash
from .lq import check_finiteness, solve_open_loop
from .model import validate_conditions
from .montecarlo import mc_duality_check
from .oracles import MAX_DENSE_DIM, brute_force_minimizer
from .report import ResultReport, emit_report
from .stochastic import build_chain, build_tree, level_mean, process_norm

COMMANDS = ("validate", "solve", "gradient-check", "duality-check", "nash", "oracle-compare", "convergence")
EXACT_TOL = 1e-12
EXPANSION_TOL = 1e-11
GRADIENT_TOL = 1e-8
NASH_TOL = 1e-8
BR_TOL = 1e-7
DEVIATION_TOL = 1e-9
ORACLE_CONTROL_TOL = 1e-8
ORACLE_COST_TOL = 1e-10
ORACLE_SYMMETRY_TOL = 1e-10
MONOTONE_SLACK = 1e-12
CONVERGENCE_TREE_LEVELS = 16


def _check_rng(seed: int):
    # test data use their own stream so they never collide with random tables
    return np.random.default_rng([seed, 1])


def _require_mode(cfg: ProblemConfig, mode: str, command: str):
    if cfg.mode != mode:
        raise ConfigError(f"'{command}' needs mode '{mode}'", "mode")


def _require_exact_backend(cfg: ProblemConfig, command: str):
    if cfg.backend["kind"] == "mc":
        raise ConfigError(f"'{command}' is not available on the Monte Carlo backend", "backend.kind")


def _mean_table(spec, u, x):
    rows = []
    for k in range(spec.t_index, spec.K + 1):
        ctrl = level_mean(u[k]).tolist() if k < spec.K else [float("nan")] * spec.m
        rows.append([k, float(spec.tree.grid.times[k])] + ctrl + level_mean(x[k]).tolist())
    cols = ["level", "time"] + [f"u{j}" for j in range(spec.m)] + [f"x{j}" for j in range(spec.N)]
    return cols, rows


# commands

def cmd_validate(cfg: ProblemConfig, seed: int, report: ResultReport):
    problem = cfg.build(seed)
    dense = int(cfg.solver["dense_threshold"])
    iterative = bool(cfg.solver["iterative_eigs"])
    if isinstance(problem, GameSpec):
        report.values["symmetry_violations"] = problem.symmetry_violations()
        for i in (1, 2):
            try:
                res = check_convexity_homogeneous(problem, i, dense, iterative)
                report.values[f"player{i}_min_eig"] = res.min_eig
                report.values[f"player{i}_convex"] = res.nonneg
            except CapacityError as exc:
                report.messages.append(f"player {i}: {exc}")
        return
    rep = validate_conditions(problem)
    report.values.update(rep.as_dict())
    report.values["control_dim"] = problem.control_dim
    try:
        fin = check_finiteness(problem, dense, iterative)
        report.values.update(psi1_min_eig=fin.min_eig, psi1_max_eig=fin.max_eig, finite=fin.nonneg)
    except CapacityError as exc:
        report.messages.append(str(exc))
    if not rep.standard:
        report.messages.append("standard conditions do not hold; finiteness is decided by the Psi1 spectrum")


def cmd_solve(cfg: ProblemConfig, seed: int, report: ResultReport):
    _require_mode(cfg, "slq", "solve")
    _require_exact_backend(cfg, "solve")
    spec = cfg.build(seed)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        u, diag = solve_open_loop(spec, tol=float(cfg.solver["tol"]), mode=cfg.solver["mode"])
    report.messages.extend(str(w.message) for w in caught)
    report.values.update(
        cost=diag.cost, gradient_norm=diag.gradient_norm, iterations=diag.iterations,
        method=diag.method, converged=diag.converged, control_dim=spec.control_dim,
    )
    report.check("gradient_norm", diag.gradient_norm, GRADIENT_TOL)
    report.add_table("means", *_mean_table(spec, u, solve_forward(spec, u)))


def cmd_gradient_check(cfg: ProblemConfig, seed: int, report: ResultReport):
    _require_mode(cfg, "slq", "gradient-check")
    _require_exact_backend(cfg, "gradient-check")
    spec = cfg.build(seed)
    rng = _check_rng(seed)
    u, v = random_control(spec, rng), random_control(spec, rng)
    rows = []
    for eps in cfg.checks["epsilons"]:
        res = expansion_residual(spec, u, v, float(eps))
        rows.append([float(eps), res])
        report.check(f"expansion_eps={eps:g}", res, EXPANSION_TOL)
    report.add_table("expansion", ["epsilon", "expansion_residual"], rows)


def cmd_duality_check(cfg: ProblemConfig, seed: int, report: ResultReport):
    if cfg.mode != "slq":
        raise ConfigError("'duality-check' needs mode 'slq'", "mode")
    spec = cfg.build(seed)
    rng = _check_rng(seed)
    if cfg.backend["kind"] == "mc":
        ens = cfg.ensemble()
        K, M = spec.K, ens.M
        W = ens.brownian
        u = np.stack([W[k][:, None] * rng.standard_normal(spec.m) for k in range(K)])
        xi = np.stack([W[k][:, None] * rng.standard_normal(spec.N) for k in range(K)])
        yT = np.outer(1.0 + W[K], rng.standard_normal(spec.N))
        res = mc_duality_check(spec, ens, u, yT, xi)
        report.values.update(residual=res.residual, stderr=res.stderr, scale=res.scale, paths=M)
        report.check("duality_statistical", res.residual, 3.0 * res.stderr, note="|mean| <= 3 standard errors",
                     passed=res.within_bound)
        report.messages.append("Monte Carlo duality is statistical: regression and sampling error remain")
        return
    dual = duality_residuals(spec, rng)
    report.check("transposition", dual.transposition, EXACT_TOL)
    report.check("duality", dual.duality, EXACT_TOL)
    for name, value in adjoint_pairing_residuals(spec, rng)._asdict().items():
        report.check(f"adjoint_{name}", value, EXACT_TOL)


def cmd_nash(cfg: ProblemConfig, seed: int, report: ResultReport):
    _require_mode(cfg, "game", "nash")
    _require_exact_backend(cfg, "nash")
    game = cfg.build(seed)
    cand = solve_nash(
        game, tol=float(cfg.solver["tol"]), certify_tol=NASH_TOL, dense_threshold=int(cfg.solver["dense_threshold"])
    )
    report.values.update(
        label=cand.label, certified=cand.certified, iterations=cand.iterations, method=cand.method,
        player1_min_eig=cand.min_eigs[0], player2_min_eig=cand.min_eigs[1],
    )
    for i in (0, 1):
        report.check(f"stationarity_player{i + 1}", cand.residuals[i], NASH_TOL)
        report.check(f"convex_player{i + 1}", cand.min_eigs[i], 0.0, passed=cand.convex[i], note="min eigenvalue")
    ver = verify_nash(
        game, cand, n_deviations=int(cfg.checks["n_deviations"]), seed=seed, br_tol=BR_TOL, deviation_tol=DEVIATION_TOL
    )
    for i in (0, 1):
        report.check(f"best_response_player{i + 1}", ver.best_response_distance[i], BR_TOL)
        report.check(f"deviation_gain_player{i + 1}", ver.worst_deviation_gain[i], DEVIATION_TOL)


def cmd_oracle_compare(cfg: ProblemConfig, seed: int, report: ResultReport):
    _require_mode(cfg, "slq", "oracle-compare")
    _require_exact_backend(cfg, "oracle-compare")
    spec = cfg.build(seed)
    if spec.control_dim > MAX_DENSE_DIM:
        raise CapacityError(f"control dimension {spec.control_dim} exceeds the brute-force limit {MAX_DENSE_DIM}")
    u, diag = solve_open_loop(spec, tol=min(float(cfg.solver["tol"]), 1e-12), mode=cfg.solver["mode"])
    oracle = brute_force_minimizer(spec)
    control_gap = process_norm(u - oracle.u_star)
    cost_gap = abs(diag.cost - oracle.cost) / max(1.0, abs(oracle.cost))
    report.values.update(
        cost=diag.cost, oracle_cost=oracle.cost, oracle_min_eig=oracle.min_eig, control_dim=spec.control_dim
    )
    report.check("control_difference", control_gap, ORACLE_CONTROL_TOL)
    report.check("cost_difference", cost_gap, ORACLE_COST_TOL, note="relative to max(1, |J|)")
    report.check("hessian_asymmetry", oracle.quadratic.asymmetry, ORACLE_SYMMETRY_TOL)


def _convergence_space(cfg: ProblemConfig, K: int, noise_free: bool):
    kind = cfg.backend["kind"]
    if kind == "chain":
        return build_chain(K, cfg.t0, cfg.T), "chain"
    if K <= CONVERGENCE_TREE_LEVELS:
        return build_tree(K, cfg.t0, cfg.T), "tree"
    if noise_free:
        return build_chain(K, cfg.t0, cfg.T), "chain"
    raise ConfigError(
        f"K={K} needs a tree beyond {CONVERGENCE_TREE_LEVELS} levels and the problem has noise", "checks.K_values"
    )


def _constant_tables_only(cfg: ProblemConfig):
    sections = [("coefficients", cfg.raw.get("coefficients", {}))]
    if cfg.mode == "slq":
        sections.append(("weights", cfg.raw.get("weights", {})))
    for section, tables in sections:
        for name, value in tables.items():
            if isinstance(value, dict) and value.get("kind") != "constant":
                raise ConfigError("K-refinement needs constant tables", f"{section}.{name}")


def cmd_convergence(cfg: ProblemConfig, seed: int, report: ResultReport):
    _require_mode(cfg, "slq", "convergence")
    _require_exact_backend(cfg, "convergence")
    _constant_tables_only(cfg)
    if cfg.t_index != 0:
        raise ConfigError("K-refinement starts at level 0", "initial.t_index")
    K_values = sorted(int(K) for K in cfg.checks["K_values"])
    if not K_values or K_values[0] < 1:
        raise ConfigError("need at least one K >= 1", "checks.K_values")
    probe = cfg.build(seed, K=min(K_values[0], MAX_TREE_LEVELS))
    noise_free = probe.is_noise_free()
    results = []
    for K in K_values:
        space, kind = _convergence_space(cfg, K, noise_free)
        spec = cfg.build_on(space, seed)
        u, diag = solve_open_loop(spec, tol=min(float(cfg.solver["tol"]), 1e-12), mode=cfg.solver["mode"])
        results.append((K, kind, diag.cost, adjoint_gap(spec, u)))
        if kind == "chain" and cfg.backend["kind"] == "tree":
            report.messages.append(f"K={K}: noise-free problem solved on the deterministic chain")
    ref = cfg.checks["reference_cost"]
    if ref is None:
        ref = results[-1][2]
        report.messages.append("no reference cost given; errors are measured against the finest level")
    errors = [abs(c - float(ref)) for _, _, c, _ in results]
    rows = []
    for i, (K, kind, c, gap) in enumerate(results):
        ratio = errors[i - 1] / errors[i] if i and errors[i] > 0 else float("nan")
        gap_ratio = results[i - 1][3] / gap if i and gap > 0 else float("nan")
        rows.append([K, kind, c, errors[i], ratio, gap, gap_ratio])
    report.add_table("refinement", ["K", "space", "cost", "error", "ratio", "adjoint_gap", "gap_ratio"], rows)
    report.values.update(reference_cost=float(ref), final_error=errors[-1])
    increase = max((errors[i + 1] - errors[i] for i in range(len(errors) - 1)), default=0.0)
    report.check("monotone_error", increase, MONOTONE_SLACK, note="largest error increase between refinements")


HANDLERS = {
    "validate": cmd_validate,
    "solve": cmd_solve,
    "gradient-check": cmd_gradient_check,
    "duality-check": cmd_duality_check,
    "nash": cmd_nash,
    "oracle-compare": cmd_oracle_compare,
    "convergence": cmd_convergence,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slq", description="Stochastic LQ control and Nash game solver.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON problem description")
    parser.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    parser.add_argument("--format", choices=("json", "csv"), default="json")
    parser.add_argument("--out", default=None, help="directory for report files (default: stdout)")
    parser.add_argument("--lenient", action="store_true", help="ignore unknown config fields")
    return parser


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        cfg = load_config(args.config, strict=not args.lenient)
        seed = cfg.seed if args.seed is None else args.seed
        report = ResultReport(args.command, cfg.config_hash(seed), seed)
        HANDLERS[args.command](cfg, seed, report)
    except (ConfigError, InvalidGridError, ShapeError) as exc:
        print(f"error: {exc}", file=stderr)
        return 2
    except (NumericError, CapacityError, IndefiniteError, NoEquilibriumError, np.linalg.LinAlgError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=stderr)
        return 3
    written = emit_report(report, args.format, args.out)
    if args.out is None:
        stdout.write(written)
    else:
        for path in written:
            print(path, file=stdout)
    if args.command == "validate":
        return 0
    return 0 if report.passed else 1


def main(argv=None) -> int:
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
