"""Matrix-free conjugate gradients in a weighted inner product."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Operator = Callable[[np.ndarray], np.ndarray]


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    converged: bool
    residual_norms: list[float] = field(default_factory=list)
    # smallest normalised curvature p^T A p / |p|^2 seen; negative means indefinite
    min_curvature: float = np.inf
    breakdown: bool = False


def conjugate_gradient(
    apply_op: Operator,
    rhs: np.ndarray,
    weights: np.ndarray,
    *,
    precond: Operator | None = None,
    tol: float = 1e-10,
    maxiter: int | None = None,
    x0: np.ndarray | None = None,
    curvature_tol: float = 1e-13,
) -> CGResult:
    """Solve ``A x = rhs`` for ``A`` self-adjoint in ``<a, b> = sum(weights * a * b)``.

    Stops when the weighted residual norm drops below ``tol * |rhs|``, or with
    ``breakdown=True`` as soon as a search direction has curvature at or below
    ``curvature_tol`` times the running curvature scale.
    """
    inner = lambda a, b: float(np.dot(weights * a, b))
    n = rhs.size
    maxiter = 10 * max(n, 1) if maxiter is None else maxiter
    x = np.zeros_like(rhs) if x0 is None else x0.copy()
    r = rhs - apply_op(x) if x0 is not None else rhs.copy()
    b_norm = np.sqrt(inner(rhs, rhs))
    r_norm = np.sqrt(inner(r, r))
    history = [r_norm]
    if b_norm == 0.0 or r_norm <= tol * b_norm:
        return CGResult(x, 0, True, history)
    z = precond(r) if precond else r
    p = z.copy()
    rz = inner(r, z)
    scale = 0.0
    min_curv = np.inf
    for it in range(1, maxiter + 1):
        Ap = apply_op(p)
        pAp = inner(p, Ap)
        pp = inner(p, p)
        curv = pAp / pp
        min_curv = min(min_curv, curv)
        scale = max(scale, abs(curv))
        if curv <= curvature_tol * scale:
            return CGResult(x, it, False, history, min_curv, breakdown=True)
        alpha = rz / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        r_norm = np.sqrt(inner(r, r))
        history.append(r_norm)
        if r_norm <= tol * b_norm:
            return CGResult(x, it, True, history, min_curv)
        z = precond(r) if precond else r
        rz_new = inner(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return CGResult(x, maxiter, False, history, min_curv)
