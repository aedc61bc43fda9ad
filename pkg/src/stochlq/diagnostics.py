"""Reusable numerical checks shared by the CLI, the scripts and the test suite."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .backward import duality_terms, verify_transposition
from .forward import running_part
from .instances import random_process
from .lq import OperatorBundle, cost, frechet_gradient, optimality_system
from .model import LQProblemSpec
from .stochastic import AdaptedProcess, pair_processes, pair_terminal, process_norm


def relative_gap(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return abs(a - b) / scale if scale > 0 else 0.0


def random_control(spec: LQProblemSpec, rng, scale: float = 1.0) -> AdaptedProcess:
    return random_process(rng, spec.tree, spec.m, scale, start=spec.t_index)


def random_state_process(spec: LQProblemSpec, rng, scale: float = 1.0) -> AdaptedProcess:
    return random_process(rng, spec.tree, spec.N, scale, start=spec.t_index)


def random_terminal(spec: LQProblemSpec, rng, scale: float = 1.0) -> np.ndarray:
    return scale * rng.standard_normal((spec.tree.n_leaves, spec.N))


class AdjointPairings(NamedTuple):
    M: float
    N: float
    hatM: float
    hatN: float


def adjoint_pairing_residuals(spec: LQProblemSpec, rng) -> AdjointPairings:
    """Relative gaps of ``<L a, b> = <a, L* b>`` for the four control-to-state maps."""
    ops = OperatorBundle(spec)
    u = random_control(spec, rng)
    eta = rng.standard_normal(spec.N)
    xi = random_state_process(spec, rng)
    yT = random_terminal(spec, rng)
    tree = spec.tree
    return AdjointPairings(
        M=relative_gap(pair_processes(running_part(ops.apply_M(u)), xi), pair_processes(u, ops.apply_M_star(xi))),
        N=relative_gap(pair_processes(running_part(ops.apply_N(eta)), xi), float(eta @ ops.apply_N_star(xi))),
        hatM=relative_gap(pair_terminal(ops.apply_hatM(u), yT, tree), pair_processes(u, ops.apply_hatM_star(yT))),
        hatN=relative_gap(pair_terminal(ops.apply_hatN(eta), yT, tree), float(eta @ ops.apply_hatN_star(yT))),
    )


class DualityCheck(NamedTuple):
    transposition: float
    duality: float


def duality_residuals(spec: LQProblemSpec, rng) -> DualityCheck:
    """Transposition identity for a random test equation and full duality with the problem data."""
    yT = random_terminal(spec, rng)
    xi = random_state_process(spec, rng)
    test = (rng.standard_normal(spec.N), random_state_process(spec, rng), random_state_process(spec, rng))
    transposition = verify_transposition(spec, yT, xi, test)
    full = duality_terms(spec, random_control(spec, rng), yT, xi).relative_residual
    return DualityCheck(transposition, full)


def expansion_residual(spec: LQProblemSpec, u: AdaptedProcess, v: AdaptedProcess, eps: float) -> float:
    """Relative defect of ``J(u + eps v) = J(u) + eps <J'(u), v> + eps^2 J_0(v)``.

    ``J_0`` is the cost of the homogeneous problem, which equals half the
    second variation.
    """
    j_u = cost(spec, u)
    j_eps = cost(spec, u + eps * v)
    first = eps * pair_processes(frechet_gradient(spec, u), v)
    second = eps**2 * cost(spec.homogeneous(), v)
    scale = max(abs(j_eps), abs(j_u), abs(first), abs(second))
    return abs(j_eps - j_u - first - second) / scale if scale > 0 else 0.0


def adjoint_gap(spec: LQProblemSpec, u: AdaptedProcess) -> float:
    """Process norm of ``y - yhat`` on the running levels along the optimality system."""
    pair = optimality_system(spec, u).pair
    y = pair.y.restrict(spec.t_index, spec.K)
    return process_norm(y - pair.yhat)
