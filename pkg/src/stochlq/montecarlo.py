"""Monte Carlo backend: Gaussian paths with least-squares conditional expectations.

Conditional expectations given F_{t_k} are approximated by regression on
polynomials of W(t_k), so the coefficient tables must be deterministic
(time-indexed).  The same exponential Euler step and its adjoint are used as
on the tree; the duality identity then holds only up to regression and
sampling error.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from numpy.polynomial.hermite_e import hermevander

from .errors import ShapeError
from .model import LQProblemSpec
from .stochastic import TimeGrid


@dataclass(frozen=True)
class MCEnsemble:
    grid: TimeGrid
    M: int
    seed: int = 0
    basis_degree: int = 3

    @cached_property
    def increments(self) -> np.ndarray:
        """``(K, M)`` array of Brownian increments, reproducible from the seed."""
        rng = np.random.default_rng(self.seed)
        return np.sqrt(self.grid.dt) * rng.standard_normal((self.grid.K, self.M))

    @cached_property
    def brownian(self) -> np.ndarray:
        """``(K + 1, M)`` array of ``W(t_k) - W(t0)``."""
        return np.vstack([np.zeros((1, self.M)), np.cumsum(self.increments, axis=0)])

    def basis(self, k: int) -> np.ndarray:
        if k == 0:
            return np.ones((self.M, 1))
        scale = np.sqrt(k * self.grid.dt)
        return hermevander(self.brownian[k] / scale, self.basis_degree)

    def conditional_expectation(self, values: np.ndarray, k: int) -> np.ndarray:
        """Regression of per-path ``values`` (shape ``(M, ...)``) on the level-k basis."""
        X = self.basis(k)
        flat = values.reshape(self.M, -1)
        coef, *_ = np.linalg.lstsq(X, flat, rcond=None)
        return (X @ coef).reshape(values.shape)


def build_ensemble(K: int, t0: float, T: float, M: int, seed: int = 0, basis_degree: int = 3) -> MCEnsemble:
    return MCEnsemble(TimeGrid(float(t0), float(T), K), int(M), int(seed), int(basis_degree))


def time_table(spec: LQProblemSpec, name: str) -> np.ndarray:
    """Per-level values of a node-independent table, shape ``(K,) + node shape``."""
    source = spec.coeffs if hasattr(spec.coeffs, name) else spec.weights
    proc = getattr(source, name)
    out = []
    for k, v in zip(proc.levels_range(), proc.levels):
        if np.ptp(v, axis=0).max(initial=0.0) > 0:
            raise ShapeError(f"{name} varies across nodes at level {k}; the Monte Carlo backend needs time tables")
        out.append(v[0])
    return np.array(out)


def _check(spec: LQProblemSpec, ens: MCEnsemble):
    if spec.K != ens.grid.K or not np.isclose(spec.dt, ens.grid.dt):
        raise ShapeError("ensemble grid does not match the problem grid")
    if spec.t_index != 0:
        raise ShapeError("the Monte Carlo backend starts at level 0")


def mc_forward(spec: LQProblemSpec, ens: MCEnsemble, u: np.ndarray | None = None) -> np.ndarray:
    """State paths, shape ``(K + 1, M, N)``; ``u`` has shape ``(K, M, m)``."""
    _check(spec, ens)
    K, M, N, dt = spec.K, ens.M, spec.N, spec.dt
    u = np.zeros((K, M, spec.m)) if u is None else u
    A1, B, C, D = (time_table(spec, n) for n in ("A1", "B", "C", "D"))
    b, sigma = time_table(spec, "b"), time_table(spec, "sigma")
    prop = spec.A.propagator(dt)
    x = np.empty((K + 1, M, N))
    x[0] = spec.eta
    for k in range(K):
        drift = x[k] @ A1[k].T + u[k] @ B[k].T + b[k]
        diff = x[k] @ C[k].T + u[k] @ D[k].T + sigma[k]
        x[k + 1] = prop * (x[k] + dt * drift + diff * ens.increments[k][:, None])
    return x


class MCBackward(NamedTuple):
    y: np.ndarray  # (K + 1, M, N)
    Y: np.ndarray  # (K, M, N)
    yhat: np.ndarray  # (K, M, N)


def mc_backward(spec: LQProblemSpec, ens: MCEnsemble, yT: np.ndarray, xi: np.ndarray | None = None) -> MCBackward:
    _check(spec, ens)
    K, M, N, dt = spec.K, ens.M, spec.N, spec.dt
    A1, C = time_table(spec, "A1"), time_table(spec, "C")
    prop = spec.A.propagator(dt)
    y = np.empty((K + 1, M, N))
    Y = np.empty((K, M, N))
    yhat = np.empty((K, M, N))
    y[K] = yT
    for k in range(K - 1, -1, -1):
        P = prop * y[k + 1]
        yhat[k] = ens.conditional_expectation(P, k)
        # centring first removes the regression noise of E[dW | F_k] from Y
        Y[k] = ens.conditional_expectation((P - yhat[k]) * ens.increments[k][:, None], k) / dt
        y[k] = yhat[k] + dt * (yhat[k] @ A1[k] + Y[k] @ C[k] + (0.0 if xi is None else xi[k]))
    return MCBackward(y, Y, yhat)


class MCDualityResult(NamedTuple):
    residual: float  # |mean(lhs - rhs)|
    stderr: float  # standard error of the per-path discrepancy
    scale: float
    within_bound: bool  # residual <= 3 stderr (statistical, not exact)


def mc_duality_check(spec: LQProblemSpec, ens: MCEnsemble, u, yT, xi=None) -> MCDualityResult:
    """Per-path summation-by-parts discrepancy, averaged over the ensemble."""
    K, dt = spec.K, spec.dt
    B, D = time_table(spec, "B"), time_table(spec, "D")
    b, sigma = time_table(spec, "b"), time_table(spec, "sigma")
    x = mc_forward(spec, ens, u)
    bw = mc_backward(spec, ens, yT, xi)
    dot = lambda a, c: np.sum(a * c, axis=-1)
    lhs = dot(x[K], bw.y[K]) - dot(x[0], bw.y[0])
    terms = [lhs]
    rhs = np.zeros(ens.M)
    for k in range(K):
        adj_u = bw.yhat[k] @ B[k] + bw.Y[k] @ D[k]
        step = dt * (dot(u[k], adj_u) + bw.yhat[k] @ b[k] + bw.Y[k] @ sigma[k])
        if xi is not None:
            step = step - dt * dot(x[k], xi[k])
        rhs += step
        terms.append(step)
    disc = lhs - rhs
    scale = float(sum(abs(np.mean(t)) for t in terms))
    residual = float(abs(disc.mean()))
    stderr = float(disc.std(ddof=1) / np.sqrt(ens.M))
    return MCDualityResult(residual, stderr, scale, residual <= 3.0 * stderr + 1e-12 * scale)
