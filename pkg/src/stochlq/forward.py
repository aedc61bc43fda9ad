"""Exponential Euler-Maruyama simulation of the controlled state equation on the tree.

One step from level k to k+1 reads::

    x_{k+1} = e^{A dt} [ x_k + (A1_k x_k + B_k u_k + b_k) dt + (C_k x_k + D_k u_k + sigma_k) dW_k ]

The semigroup is applied exactly, so stiff spectra need no step restriction.
The backward solver in :mod:`stochlq.backward` is the exact algebraic adjoint
of this step.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import NumericError, ShapeError
from .model import LQProblemSpec
from .stochastic import AdaptedProcess, matvec, process_norm


def _check_control(spec: LQProblemSpec, u: AdaptedProcess | None) -> AdaptedProcess:
    if u is None:
        return spec.zero_control()
    if (u.start, u.stop, u.shape) != (spec.t_index, spec.K, (spec.m,)):
        raise ShapeError(
            f"control must cover levels {spec.t_index}..{spec.K - 1} with shape ({spec.m},), "
            f"got {u.start}..{u.stop - 1} {u.shape}"
        )
    return u


def solve_forward(spec: LQProblemSpec, u: AdaptedProcess | None = None) -> AdaptedProcess:
    """State path ``x(t_k)`` on levels ``t_index .. K`` (inclusive)."""
    u = _check_control(spec, u)
    tree, c = spec.tree, spec.coeffs
    dt = tree.dt
    prop = spec.A.propagator(dt)
    t = spec.t_index
    x = np.broadcast_to(spec.eta, (tree.n_nodes(t), spec.N)).copy()
    path = [x]
    for k in range(t, spec.K):
        drift = matvec(c.A1[k], x) + matvec(c.B[k], u[k]) + c.b[k]
        diffusion = matvec(c.C[k], x) + matvec(c.D[k], u[k]) + c.sigma[k]
        dW = tree.child_increments(k)[:, None]
        x = prop * (tree.expand(x + dt * drift, k) + tree.expand(diffusion, k) * dW)
        if not np.all(np.isfinite(x)):
            raise NumericError(f"non-finite state produced at step {k} -> {k + 1}", level=k + 1)
        path.append(x)
    return AdaptedProcess(tree, t, path)


def running_part(x: AdaptedProcess) -> AdaptedProcess:
    """Drop the terminal level, leaving the levels paired against running costs."""
    return x.restrict(x.start, x.stop - 1)


def terminal_value(x: AdaptedProcess) -> np.ndarray:
    return x[x.stop - 1]


class LinearDecomposition(NamedTuple):
    control_part: AdaptedProcess
    initial_part: AdaptedProcess
    source_part: AdaptedProcess


def decompose_linear(spec: LQProblemSpec, u: AdaptedProcess | None = None) -> LinearDecomposition:
    """Split ``x = (control response) + (initial response) + (b, sigma response)``."""
    u = _check_control(spec, u)
    z = spec.zero_like
    no_source = spec.replace(b=z(spec.coeffs.b), sigma=z(spec.coeffs.sigma))
    Mu = solve_forward(no_source.replace(eta=np.zeros(spec.N)), u)
    Neta = solve_forward(no_source, None)
    h = solve_forward(spec.replace(eta=np.zeros(spec.N)), None)
    return LinearDecomposition(Mu, Neta, h)


class AprioriResult(NamedTuple):
    ratio: float
    state_norm: float
    data_norm: float
    degenerate: bool


def _l1_in_time_norm(spec: LQProblemSpec, p: AdaptedProcess) -> float:
    """``sqrt(E (sum_k dt |p_k|)^2)`` over levels ``t_index .. K-1``."""
    tree = spec.tree
    acc = np.zeros(tree.n_nodes(spec.t_index))
    for k in range(spec.t_index, spec.K):
        acc = acc + tree.dt * np.linalg.norm(p[k], axis=1)
        acc = tree.expand(acc, k)
    return float(np.sqrt(np.mean(acc**2)))


def apriori_check(spec: LQProblemSpec, u: AdaptedProcess | None = None) -> AprioriResult:
    """Ratio of ``sup_k sqrt(E|x_k|^2)`` to ``|eta| + |u| + |b| + |sigma|``."""
    u = _check_control(spec, u)
    t = spec.t_index
    data = (
        float(np.linalg.norm(spec.eta))
        + process_norm(u)
        + _l1_in_time_norm(spec, spec.coeffs.b)
        + process_norm(spec.coeffs.sigma.restrict(t, spec.K))
    )
    x = solve_forward(spec, u)
    state = max(float(np.sqrt(np.mean(np.sum(v**2, axis=1)))) for v in x.levels)
    if data == 0.0:
        return AprioriResult(float("nan"), state, 0.0, True)
    return AprioriResult(state / data, state, data, False)

