"""Dense brute-force oracles that never touch the adjoint machinery."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import CapacityError
from .lq import cost
from .model import LQProblemSpec
from .stochastic import AdaptedProcess

MAX_DENSE_DIM = 200


class DenseQuadratic(NamedTuple):
    hessian: np.ndarray  # flat node coordinates, no pairing weights
    linear: np.ndarray
    constant: float
    asymmetry: float  # max |H - H^T| / max |H| before symmetrisation


def cost_quadratic_form(spec: LQProblemSpec, max_dim: int = MAX_DENSE_DIM) -> DenseQuadratic:
    """Recover ``J(u) = 1/2 u^T H u + l^T u + c`` from cost evaluations alone.

    Entries come from exact polarisation identities, which hold to rounding
    error because the discrete cost is exactly quadratic.
    """
    d = spec.control_dim
    if d > max_dim:
        raise CapacityError(f"control dimension {d} exceeds brute-force limit {max_dim}")
    t, K, m, tree = spec.t_index, spec.K, spec.m, spec.tree

    def J(v):
        return cost(spec, AdaptedProcess.from_flat(tree, t, K, (m,), v))

    c = J(np.zeros(d))
    eye = np.eye(d)
    plus = np.array([J(e) for e in eye])
    minus = np.array([J(-e) for e in eye])
    lin = 0.5 * (plus - minus)
    H = np.empty((d, d))
    for i in range(d):
        H[i, i] = plus[i] + minus[i] - 2.0 * c
    for i in range(d):
        for j in range(i + 1, d):
            H[i, j] = J(eye[i] + eye[j]) - plus[i] - plus[j] + c
            # lower triangle from the difference direction: an independent estimate
            H[j, i] = c + lin[i] - lin[j] + 0.5 * (H[i, i] + H[j, j]) - J(eye[i] - eye[j])
    scale = max(np.abs(H).max(), 1e-300)
    asym = float(np.abs(H - H.T).max() / scale)
    return DenseQuadratic(0.5 * (H + H.T), lin, c, asym)


class BruteForceResult(NamedTuple):
    u_star: AdaptedProcess
    cost: float
    min_eig: float
    quadratic: DenseQuadratic


def brute_force_minimizer(spec: LQProblemSpec, max_dim: int = MAX_DENSE_DIM) -> BruteForceResult:
    """Minimise the cost over all node values by a dense symmetric solve."""
    quad = cost_quadratic_form(spec, max_dim)
    H = quad.hessian
    u = np.linalg.solve(H, -quad.linear)
    t, K, m, tree = spec.t_index, spec.K, spec.m, spec.tree
    u_star = AdaptedProcess.from_flat(tree, t, K, (m,), u)
    return BruteForceResult(u_star, cost(spec, u_star), float(np.linalg.eigvalsh(H)[0]), quad)
