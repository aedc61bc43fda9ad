"""Backward adjoint equation on the tree, built as the exact adjoint of the forward step.

With ``P_k = e^{A dt} y_{k+1}`` (a level-(k+1) quantity) the recursion is::

    Y_k    = E_k[P_k dW_k] / dt
    yhat_k = E_k[P_k]
    y_k    = yhat_k + dt (A1_k^T yhat_k + C_k^T Y_k + xi_k)

and for any forward path ``x`` with data ``(eta, u, b, sigma)`` the summation
by parts identity

    E<x_K, y_K> - E<eta, y_t> = sum_k dt E[<u, B^T yhat + D^T Y> + <b, yhat> + <sigma, Y> - <x_k, xi_k>]

holds exactly, not just to O(dt).
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import NumericError, ShapeError
from .forward import running_part, solve_forward, terminal_value
from .model import LQProblemSpec
from .stochastic import AdaptedProcess, matvec, pair_processes, pair_terminal


class BackwardPair(NamedTuple):
    y: AdaptedProcess  # levels t .. K
    Y: AdaptedProcess  # levels t .. K-1
    yhat: AdaptedProcess  # levels t .. K-1

    def initial_mean(self) -> np.ndarray:
        """Expectation of y at the initial level."""
        return self.y[self.y.start].mean(axis=0)


def solve_backward(spec: LQProblemSpec, yT, xi: AdaptedProcess | None = None) -> BackwardPair:
    tree, c = spec.tree, spec.coeffs
    t, K, N = spec.t_index, spec.K, spec.N
    yT = np.asarray(yT, dtype=float)
    if yT.shape != (tree.n_leaves, N):
        raise ShapeError(f"terminal datum must have shape {(tree.n_leaves, N)}, got {yT.shape}")
    if xi is not None and (xi.start, xi.stop, xi.shape) != (t, K, (N,)):
        raise ShapeError(f"source must cover levels {t}..{K - 1} with shape ({N},)")
    dt = tree.dt
    prop = spec.A.propagator(dt)

    y = yT
    ys, Ys, yhats = [y], [], []
    for k in range(K - 1, t - 1, -1):
        yhat, Y = tree.martingale_representation(prop * y, k)
        y = yhat + dt * (matvec(c.A1[k], yhat, transpose=True) + matvec(c.C[k], Y, transpose=True))
        if xi is not None:
            y = y + dt * xi[k]
        if not np.all(np.isfinite(y)):
            raise NumericError(f"non-finite adjoint state at level {k}", level=k)
        ys.append(y)
        Ys.append(Y)
        yhats.append(yhat)
    return BackwardPair(
        AdaptedProcess(tree, t, ys[::-1]),
        AdaptedProcess(tree, t, Ys[::-1]),
        AdaptedProcess(tree, t, yhats[::-1]),
    )


def adjoint_control_map(spec: LQProblemSpec, pair: BackwardPair, B=None, D=None) -> AdaptedProcess:
    """``B^T yhat + D^T Y`` on levels ``t .. K-1`` (B, D default to the spec's)."""
    B = spec.coeffs.B if B is None else B
    D = spec.coeffs.D if D is None else D
    return AdaptedProcess(
        spec.tree,
        spec.t_index,
        [
            matvec(B[k], pair.yhat[k], transpose=True) + matvec(D[k], pair.Y[k], transpose=True)
            for k in pair.yhat.levels_range()
        ],
    )


class DualityTerms(NamedTuple):
    terminal: float  # E<x_K, y_K>
    initial: float  # E<eta, y_t>
    control: float
    drift: float
    diffusion: float
    source: float  # sum dt E<x_k, xi_k>

    @property
    def lhs(self) -> float:
        return self.terminal - self.initial

    @property
    def rhs(self) -> float:
        return self.control + self.drift + self.diffusion - self.source

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs)

    @property
    def relative_residual(self) -> float:
        scale = sum(abs(v) for v in self)
        return self.residual / scale if scale > 0 else 0.0


def duality_terms(
    spec: LQProblemSpec,
    u: AdaptedProcess | None,
    yT,
    xi: AdaptedProcess | None = None,
    x: AdaptedProcess | None = None,
    pair: BackwardPair | None = None,
) -> DualityTerms:
    """Both sides of the discrete summation-by-parts identity for forward data of ``spec``."""
    t, K = spec.t_index, spec.K
    u = spec.zero_control() if u is None else u
    x = solve_forward(spec, u) if x is None else x
    pair = solve_backward(spec, yT, xi) if pair is None else pair
    b = spec.coeffs.b.restrict(t, K)
    sigma = spec.coeffs.sigma.restrict(t, K)
    return DualityTerms(
        terminal=pair_terminal(terminal_value(x), yT, spec.tree),
        initial=float(spec.eta @ pair.initial_mean()),
        control=pair_processes(u, adjoint_control_map(spec, pair)),
        drift=pair_processes(b, pair.yhat),
        diffusion=pair_processes(sigma, pair.Y),
        source=0.0 if xi is None else pair_processes(running_part(x), xi),
    )


def _embed_levels(spec: LQProblemSpec, v: AdaptedProcess | None) -> AdaptedProcess:
    """Extend a process on ``t .. K-1`` to a full ``0 .. K-1`` table, zero before t."""
    t, K, tree = spec.t_index, spec.K, spec.tree
    full = AdaptedProcess.zeros(tree, 0, K, spec.N)
    if v is None:
        return full
    if (v.start, v.stop, v.shape) != (t, K, (spec.N,)):
        raise ShapeError(f"test perturbation must cover levels {t}..{K - 1} with shape ({spec.N},)")
    return AdaptedProcess(tree, 0, full.levels[:t] + [np.asarray(a) for a in v.levels])


def verify_transposition(spec: LQProblemSpec, yT, xi: AdaptedProcess | None, test) -> float:
    """Relative residual of the transposition identity for a test equation.

    ``test = (eta, v1, v2)``: the test process solves the homogeneous state
    equation with initial value eta, drift perturbation v1 and diffusion
    perturbation v2, using the same one-step scheme as the state.
    """
    eta, v1, v2 = test
    test_spec = spec.replace(
        eta=np.zeros(spec.N) if eta is None else eta,
        b=_embed_levels(spec, v1),
        sigma=_embed_levels(spec, v2),
    )
    return duality_terms(test_spec, None, yT, xi).relative_residual
