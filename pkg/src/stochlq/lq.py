"""Open-loop LQ control: operator bundle, Psi system, cost, gradient and minimizer.

The cost of a control ``u`` is::

    J(u) = 1/2 E[ sum_k dt (<Q x, x> + <R u, u> + s <S x, u> + 2 <q, x> + 2 <r, u>)
                 + <G x_K, x_K> + 2 <g, x_K> ]

with ``s = spec.s_factor`` (2 by default).  Writing ``x = M u + N eta + h``
turns J into a quadratic form in ``u`` whose Hessian ``Psi1`` is applied
matrix-free with one forward and one backward sweep.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh

from .backward import BackwardPair, adjoint_control_map, solve_backward
from .errors import CapacityError, IndefiniteError
from .forward import running_part, solve_forward, terminal_value
from .krylov import conjugate_gradient
from .model import LQProblemSpec
from .stochastic import AdaptedProcess, matvec, pair_processes, pair_terminal, process_norm


def _restrict(spec: LQProblemSpec, p: AdaptedProcess) -> AdaptedProcess:
    return p.restrict(spec.t_index, spec.K)


def _apply(spec: LQProblemSpec, table: AdaptedProcess, v: AdaptedProcess, transpose=False) -> AdaptedProcess:
    return AdaptedProcess(
        spec.tree, v.start, [matvec(table[k], v[k], transpose=transpose) for k in v.levels_range()]
    )


def _leaf_apply(G: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.einsum("nij,nj->ni", G, v)


class OperatorBundle:
    """Control-to-state maps and their adjoints for one problem.

    Forward maps zero out every datum except the one they act on; adjoint
    maps are single backward solves.
    """

    def __init__(self, spec: LQProblemSpec):
        self.spec = spec
        z = spec.zero_like
        self._homog = spec.replace(
            eta=np.zeros(spec.N), b=z(spec.coeffs.b), sigma=z(spec.coeffs.sigma)
        )

    def apply_M(self, u: AdaptedProcess) -> AdaptedProcess:
        return solve_forward(self._homog, u)

    def apply_N(self, eta) -> AdaptedProcess:
        return solve_forward(self._homog.replace(eta=eta), None)

    def apply_hatM(self, u: AdaptedProcess) -> np.ndarray:
        return terminal_value(self.apply_M(u))

    def apply_hatN(self, eta) -> np.ndarray:
        return terminal_value(self.apply_N(eta))

    def compute_h(self) -> AdaptedProcess:
        return solve_forward(self.spec.replace(eta=np.zeros(self.spec.N)), None)

    def _zero_terminal(self) -> np.ndarray:
        return np.zeros((self.spec.tree.n_leaves, self.spec.N))

    def apply_M_star(self, xi: AdaptedProcess) -> AdaptedProcess:
        """Adjoint of ``u -> (M u)`` on the running levels ``t .. K-1``."""
        return adjoint_control_map(self.spec, solve_backward(self.spec, self._zero_terminal(), xi))

    def apply_N_star(self, xi: AdaptedProcess) -> np.ndarray:
        return solve_backward(self.spec, self._zero_terminal(), xi).initial_mean()

    def apply_hatM_star(self, yT) -> AdaptedProcess:
        return adjoint_control_map(self.spec, solve_backward(self.spec, yT, None))

    def apply_hatN_star(self, yT) -> np.ndarray:
        return solve_backward(self.spec, yT, None).initial_mean()


@dataclass
class OptimalitySweep:
    x: AdaptedProcess
    pair: BackwardPair
    stationarity: AdaptedProcess


def optimality_system(spec: LQProblemSpec, u: AdaptedProcess) -> OptimalitySweep:
    """State, adjoint and ``B^T yhat + D^T Y + c S x + R u + r`` for control u."""
    w = spec.weights
    c = spec.s_factor / 2.0
    x = solve_forward(spec, u)
    xr = running_part(x)
    xi = _apply(spec, w.Q, xr) + c * _apply(spec, w.S, u, transpose=True) + _restrict(spec, w.q)
    yT = _leaf_apply(w.G, terminal_value(x)) + w.g
    pair = solve_backward(spec, yT, xi)
    grad = (
        adjoint_control_map(spec, pair)
        + c * _apply(spec, w.S, xr)
        + _apply(spec, w.R, u)
        + _restrict(spec, w.r)
    )
    return OptimalitySweep(x, pair, grad)


def cost(spec: LQProblemSpec, u: AdaptedProcess | None = None) -> float:
    """Direct evaluation of the quadratic cost from the simulated state."""
    u = spec.zero_control() if u is None else u
    w = spec.weights
    x = solve_forward(spec, u)
    xr, xT = running_part(x), terminal_value(x)
    running = (
        pair_processes(_apply(spec, w.Q, xr), xr)
        + pair_processes(_apply(spec, w.R, u), u)
        + spec.s_factor * pair_processes(_apply(spec, w.S, xr), u)
        + 2.0 * pair_processes(_restrict(spec, w.q), xr)
        + 2.0 * pair_processes(_restrict(spec, w.r), u)
    )
    terminal = pair_terminal(_leaf_apply(w.G, xT), xT, spec.tree) + 2.0 * pair_terminal(w.g, xT, spec.tree)
    return 0.5 * (running + terminal)


def frechet_gradient(spec: LQProblemSpec, u: AdaptedProcess | None = None) -> AdaptedProcess:
    """Derivative of the cost at u, identified with a control process via :func:`pair_processes`."""
    u = spec.zero_control() if u is None else u
    return optimality_system(spec, u).stationarity


def optimality_residual(spec: LQProblemSpec, u: AdaptedProcess) -> float:
    """Norm of the stationarity expression along the forward-backward system."""
    return process_norm(frechet_gradient(spec, u))


class PsiSystem:
    """Matrix-free quadratic-form data of the cost.

    ``J(u) = 1/2 <Psi1 u, u> + <Psi2 eta, u> + 1/2 <Psi3 eta, eta> + <phi1, eta> + <phi2, u> + phi3``
    """

    def __init__(self, spec: LQProblemSpec):
        self.spec = spec
        self._homog = spec.homogeneous()
        self._bundle = OperatorBundle(spec)

    def apply_psi1(self, u: AdaptedProcess) -> AdaptedProcess:
        return optimality_system(self._homog, u).stationarity

    def apply_psi2(self, eta) -> AdaptedProcess:
        hom = self._homog.replace(eta=eta)
        return optimality_system(hom, hom.zero_control()).stationarity

    def apply_psi3(self, eta) -> np.ndarray:
        hom = self._homog.replace(eta=eta)
        return optimality_system(hom, hom.zero_control()).pair.initial_mean()

    @cached_property
    def psi3(self) -> np.ndarray:
        return np.column_stack([self.apply_psi3(e) for e in np.eye(self.spec.N)])

    @cached_property
    def _source_sweep(self) -> OptimalitySweep:
        spec = self.spec.replace(eta=np.zeros(self.spec.N))
        return optimality_system(spec, spec.zero_control())

    @property
    def phi1(self) -> np.ndarray:
        return self._source_sweep.pair.initial_mean()

    @property
    def phi2(self) -> AdaptedProcess:
        return self._source_sweep.stationarity

    @cached_property
    def phi3(self) -> float:
        spec, w = self.spec, self.spec.weights
        h = self._source_sweep.x
        hr, hT = running_part(h), terminal_value(h)
        terminal = pair_terminal(_leaf_apply(w.G, hT) + 2.0 * w.g, hT, spec.tree)
        running = pair_processes(_apply(spec, w.Q, hr) + 2.0 * _restrict(spec, w.q), hr)
        return 0.5 * (terminal + running)

    def cost(self, u: AdaptedProcess, eta=None) -> float:
        eta = self.spec.eta if eta is None else np.asarray(eta, dtype=float)
        return (
            0.5 * pair_processes(self.apply_psi1(u), u)
            + pair_processes(self.apply_psi2(eta), u)
            + 0.5 * float(eta @ self.psi3 @ eta)
            + float(self.phi1 @ eta)
            + pair_processes(self.phi2, u)
            + self.phi3
        )

    def gradient(self, u: AdaptedProcess) -> AdaptedProcess:
        return self.apply_psi1(u) + self.apply_psi2(self.spec.eta) + self.phi2


def assemble_psi(spec: LQProblemSpec) -> PsiSystem:
    return PsiSystem(spec)


# flat-vector helpers for the Krylov and dense paths

def _flat_operator(spec: LQProblemSpec, op):
    t, K, m, tree = spec.t_index, spec.K, spec.m, spec.tree

    def apply(v: np.ndarray) -> np.ndarray:
        return op(AdaptedProcess.from_flat(tree, t, K, (m,), v)).flatten()

    return apply


def _control_weights(spec: LQProblemSpec) -> np.ndarray:
    return spec.zero_control().weights()


def psi1_matrix(spec: LQProblemSpec) -> np.ndarray:
    """Dense matrix of Psi1 in flat node coordinates (column j = Psi1 e_j)."""
    apply = _flat_operator(spec, PsiSystem(spec).apply_psi1)
    d = spec.control_dim
    cols = np.empty((d, d))
    e = np.zeros(d)
    for j in range(d):
        e[j] = 1.0
        cols[:, j] = apply(e)
        e[j] = 0.0
    return cols


@dataclass
class FinitenessResult:
    nonneg: bool
    min_eig: float
    max_eig: float
    method: str


def check_finiteness(
    spec: LQProblemSpec, dense_threshold: int = 4096, iterative: bool = False, tol: float = 1e-10
) -> FinitenessResult:
    """Smallest eigenvalue of Psi1, self-adjoint under :func:`pair_processes`.

    Psi1 >= 0 is necessary for the problem to be finite.
    """
    d = spec.control_dim
    w = np.sqrt(_control_weights(spec))
    if d <= dense_threshold:
        P = psi1_matrix(spec)
        sym = w[:, None] * P / w[None, :]
        eigs = np.linalg.eigvalsh(0.5 * (sym + sym.T))
        lo, hi, method = float(eigs[0]), float(eigs[-1]), "dense"
    elif iterative:
        apply = _flat_operator(spec, PsiSystem(spec).apply_psi1)
        op = LinearOperator((d, d), matvec=lambda v: w * apply(v / w), dtype=float)
        lo = float(eigsh(op, k=1, which="SA", tol=1e-12, return_eigenvectors=False)[0])
        hi = float(eigsh(op, k=1, which="LA", tol=1e-12, return_eigenvectors=False)[0])
        method = "lanczos"
    else:
        raise CapacityError(
            f"control dimension {d} exceeds dense threshold {dense_threshold}; enable iterative mode"
        )
    return FinitenessResult(lo >= -tol * max(1.0, abs(hi)), lo, hi, method)


@dataclass
class OpenLoopDiagnostics:
    iterations: int
    gradient_norm: float
    cost: float
    converged: bool
    method: str
    residual_history: list[float] = field(default_factory=list)
    min_curvature: float = np.inf


def _r_preconditioner(spec: LQProblemSpec):
    """Node-wise R^{-1}, or None when some R block is not positive definite."""
    t, K, m, tree = spec.t_index, spec.K, spec.m, spec.tree
    inverses = []
    for k in range(t, K):
        Rk = spec.weights.R[k]
        try:
            np.linalg.cholesky(Rk)
        except np.linalg.LinAlgError:
            return None
        inverses.append(np.linalg.inv(Rk))
    R_inv = AdaptedProcess(tree, t, inverses)

    def apply(v: np.ndarray) -> np.ndarray:
        return _apply(spec, R_inv, AdaptedProcess.from_flat(tree, t, K, (m,), v)).flatten()

    return apply


def solve_open_loop(
    spec: LQProblemSpec,
    *,
    tol: float = 1e-10,
    maxiter: int | None = None,
    mode: str = "auto",
    precondition: bool = True,
) -> tuple[AdaptedProcess, OpenLoopDiagnostics]:
    """Minimize the cost by CG on ``Psi1 u = -(Psi2 eta + phi2)``.

    ``mode="auto"`` runs preconditioned CG and falls back to the minimal-norm
    least-squares solution (CG on the normal equations) with a warning when a
    direction of zero curvature shows up; negative curvature raises
    :class:`IndefiniteError`.  ``mode="lstsq"`` goes straight to the normal
    equations.
    """
    if mode not in ("auto", "cg", "lstsq"):
        raise ValueError(f"unknown mode {mode!r}")
    t, K, m, tree = spec.t_index, spec.K, spec.m, spec.tree
    psi = PsiSystem(spec)
    apply = _flat_operator(spec, psi.apply_psi1)
    weights = _control_weights(spec)
    rhs = -frechet_gradient(spec, spec.zero_control()).flatten()
    d = rhs.size
    maxiter = 10 * d if maxiter is None else maxiter

    method = "lstsq"
    if mode != "lstsq":
        precond = _r_preconditioner(spec) if precondition else None
        res = conjugate_gradient(apply, rhs, weights, precond=precond, tol=tol, maxiter=maxiter)
        method = "pcg" if precond else "cg"
        if res.breakdown:
            scale = max(abs(c) for c in (res.min_curvature, 1.0))
            if res.min_curvature < -1e-10 * scale or mode == "cg":
                raise IndefiniteError(
                    f"negative curvature {res.min_curvature:.3e} met by CG; Psi1 is not positive "
                    "semidefinite (run check_finiteness)"
                )
            warnings.warn("Psi1 is singular; returning the minimal-norm least-squares control")
            method = "lstsq"
    if method == "lstsq":
        normal = lambda v: apply(apply(v))
        res = conjugate_gradient(normal, apply(rhs), weights, tol=tol, maxiter=maxiter)
    u = AdaptedProcess.from_flat(tree, t, K, (m,), res.x)
    if not res.converged:
        warnings.warn(f"CG stopped after {res.iterations} iterations without reaching tol={tol}")
    grad = frechet_gradient(spec, u)
    return u, OpenLoopDiagnostics(
        iterations=res.iterations,
        gradient_norm=process_norm(grad),
        cost=cost(spec, u),
        converged=res.converged,
        method=method,
        residual_history=res.residual_norms,
        min_curvature=res.min_curvature,
    )
