"""Discrete filtered probability space on a binary Rademacher tree.

Level ``k`` of a tree with ``K`` steps holds ``2**k`` nodes.  Node ``n`` at
level ``k`` has children ``2n`` (up move, increment ``+sqrt(dt)``) and
``2n + 1`` (down move, increment ``-sqrt(dt)``), so the node index written in
binary is the path from the root with ``u = 0`` and ``d = 1``.  Every leaf
carries probability ``2**-K``.

A one-node-per-level chain (``branching=1``) is also provided.  Its increments
vanish, so it is only a valid model for noise-free problems, where it gives
the same optimal values as the full tree at a cost linear in ``K``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidGridError, ShapeError


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    K: int

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise InvalidGridError(f"step count K must be an integer >= 1, got {self.K}")
        if not self.T > self.t0:
            raise InvalidGridError(f"horizon T={self.T} must exceed t0={self.t0}")

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.K

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.K + 1)


@dataclass(frozen=True)
class TreeSpace:
    grid: TimeGrid
    branching: int = 2

    @property
    def K(self) -> int:
        return self.grid.K

    @property
    def dt(self) -> float:
        return self.grid.dt

    @property
    def sqrt_dt(self) -> float:
        return float(np.sqrt(self.grid.dt))

    @property
    def is_chain(self) -> bool:
        return self.branching == 1

    def n_nodes(self, k: int) -> int:
        if not 0 <= k <= self.K:
            raise ShapeError(f"level {k} outside 0..{self.K}")
        return self.branching**k

    @property
    def n_leaves(self) -> int:
        return self.n_nodes(self.K)

    def prob(self, k: int) -> float:
        """Probability of a single level-k atom."""
        return 1.0 / self.n_nodes(k)

    def child_increments(self, k: int) -> np.ndarray:
        """Increment ``W(t_{k+1}) - W(t_k)`` attached to each level-(k+1) node."""
        n = self.n_nodes(k)
        if self.is_chain:
            return np.zeros(n)
        return np.tile(np.array([self.sqrt_dt, -self.sqrt_dt]), n)

    def brownian(self, k: int) -> np.ndarray:
        """Value of the random walk ``W(t_k) - W(t0)`` at every level-k node."""
        w = np.zeros(1)
        for j in range(k):
            w = np.repeat(w, self.branching) + self.child_increments(j)
        return w

    def expand(self, x: np.ndarray, k: int) -> np.ndarray:
        """Lift level-k node values to level k+1 (each child inherits the parent value)."""
        self._check_level(x, k)
        return np.repeat(x, self.branching, axis=0)

    def expand_to(self, x: np.ndarray, k: int, j: int) -> np.ndarray:
        """Lift level-k node values to level j >= k."""
        self._check_level(x, k)
        return np.repeat(x, self.branching ** (j - k), axis=0)

    def conditional_expectation(self, x: np.ndarray, k: int) -> np.ndarray:
        """Average of level-(k+1) values over the children of each level-k node."""
        self._check_level(x, k + 1)
        return x.reshape((self.n_nodes(k), self.branching) + x.shape[1:]).mean(axis=1)

    def martingale_representation(self, x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Split level-(k+1) values as ``x = e + z * dW_k`` with e, z on level k."""
        self._check_level(x, k + 1)
        e = self.conditional_expectation(x, k)
        if self.is_chain:
            return e, np.zeros_like(e)
        pairs = x.reshape((self.n_nodes(k), 2) + x.shape[1:])
        z = (pairs[:, 0] - pairs[:, 1]) / (2.0 * self.sqrt_dt)
        return e, z

    def paths(self, k: int) -> list[str]:
        """Up/down path strings of the level-k nodes, in node order."""
        if self.is_chain:
            return ["u" * k]
        return [format(n, f"0{k}b").translate(_BITS_TO_PATH) if k else "" for n in range(2**k)]

    def node_index(self, path: str) -> int:
        if any(c not in "ud" for c in path) or len(path) > self.K:
            raise ShapeError(f"invalid node path {path!r}")
        if self.is_chain:
            return 0
        return int(path.translate(_PATH_TO_BITS), 2) if path else 0

    def _check_level(self, x: np.ndarray, k: int):
        if np.shape(x)[0] != self.n_nodes(k):
            raise ShapeError(f"expected {self.n_nodes(k)} level-{k} nodes, got {np.shape(x)[0]}")


_BITS_TO_PATH = str.maketrans("01", "ud")
_PATH_TO_BITS = str.maketrans("ud", "01")


def build_tree(K: int, t0: float, T: float) -> TreeSpace:
    return TreeSpace(TimeGrid(float(t0), float(T), K))


def build_chain(K: int, t0: float, T: float) -> TreeSpace:
    """Degenerate one-node-per-level space for deterministic (noise-free) problems."""
    return TreeSpace(TimeGrid(float(t0), float(T), K), branching=1)


def conditional_expectation(x: np.ndarray, tree: TreeSpace, k: int) -> np.ndarray:
    return tree.conditional_expectation(np.asarray(x, dtype=float), k)


def martingale_representation(x: np.ndarray, tree: TreeSpace, k: int):
    return tree.martingale_representation(np.asarray(x, dtype=float), k)


class AdaptedProcess:
    """Node-indexed values on consecutive tree levels ``start .. stop - 1``.

    ``levels[j]`` has shape ``(n_nodes(start + j),) + shape``.  Adaptedness is
    structural: one value per node, shared by every leaf below that node.
    """

    __slots__ = ("tree", "start", "levels")

    def __init__(self, tree: TreeSpace, start: int, levels: Sequence[np.ndarray]):
        self.tree = tree
        self.start = int(start)
        self.levels = [np.asarray(v, dtype=float) for v in levels]
        shape = self.levels[0].shape[1:] if self.levels else ()
        for j, v in enumerate(self.levels):
            k = self.start + j
            if v.shape != (tree.n_nodes(k),) + shape:
                raise ShapeError(
                    f"level {k}: expected shape {(tree.n_nodes(k),) + shape}, got {v.shape}"
                )

    @classmethod
    def zeros(cls, tree: TreeSpace, start: int, stop: int, shape=()) -> "AdaptedProcess":
        shape = (shape,) if isinstance(shape, (int, np.integer)) else tuple(shape)
        return cls(tree, start, [np.zeros((tree.n_nodes(k),) + shape) for k in range(start, stop)])

    @classmethod
    def constant(cls, tree: TreeSpace, start: int, stop: int, value) -> "AdaptedProcess":
        value = np.asarray(value, dtype=float)
        return cls(
            tree,
            start,
            [np.broadcast_to(value, (tree.n_nodes(k),) + value.shape).copy() for k in range(start, stop)],
        )

    @classmethod
    def from_time_table(cls, tree: TreeSpace, start: int, values) -> "AdaptedProcess":
        """Deterministic process: one value per level."""
        levels = []
        for j, value in enumerate(values):
            value = np.asarray(value, dtype=float)
            levels.append(np.broadcast_to(value, (tree.n_nodes(start + j),) + value.shape).copy())
        return cls(tree, start, levels)

    @classmethod
    def from_flat(cls, tree: TreeSpace, start: int, stop: int, shape, flat) -> "AdaptedProcess":
        shape = (shape,) if isinstance(shape, (int, np.integer)) else tuple(shape)
        size = int(np.prod(shape)) if shape else 1
        flat = np.asarray(flat, dtype=float)
        levels, pos = [], 0
        for k in range(start, stop):
            n = tree.n_nodes(k) * size
            levels.append(flat[pos:pos + n].reshape((tree.n_nodes(k),) + shape))
            pos += n
        if pos != flat.size:
            raise ShapeError(f"flat vector has {flat.size} entries, expected {pos}")
        return cls(tree, start, levels)

    @property
    def stop(self) -> int:
        return self.start + len(self.levels)

    @property
    def shape(self) -> tuple:
        return self.levels[0].shape[1:]

    @property
    def size(self) -> int:
        return sum(v.size for v in self.levels)

    def __getitem__(self, k: int) -> np.ndarray:
        if not self.start <= k < self.stop:
            raise ShapeError(f"level {k} outside {self.start}..{self.stop - 1}")
        return self.levels[k - self.start]

    def restrict(self, start: int, stop: int | None = None) -> "AdaptedProcess":
        stop = self.stop if stop is None else stop
        if start < self.start or stop > self.stop:
            raise ShapeError(f"cannot restrict levels {self.start}..{self.stop - 1} to {start}..{stop - 1}")
        return AdaptedProcess(self.tree, start, self.levels[start - self.start:stop - self.start])

    def flatten(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.levels]) if self.levels else np.zeros(0)

    def weights(self) -> np.ndarray:
        """Per-entry weight of the flattened process under :func:`pair_processes`."""
        return np.concatenate(
            [np.full(v.size, self.tree.dt * self.tree.prob(k)) for k, v in zip(self.levels_range(), self.levels)]
        )

    def levels_range(self) -> range:
        return range(self.start, self.stop)

    def map(self, fn) -> "AdaptedProcess":
        return AdaptedProcess(self.tree, self.start, [fn(v) for v in self.levels])

    def copy(self) -> "AdaptedProcess":
        return self.map(np.copy)

    def _compatible(self, other: "AdaptedProcess"):
        if not isinstance(other, AdaptedProcess):
            return NotImplemented
        if (other.start, other.stop, other.shape) != (self.start, self.stop, self.shape):
            raise ShapeError(
                f"incompatible processes: levels {self.start}..{self.stop - 1} {self.shape} "
                f"vs {other.start}..{other.stop - 1} {other.shape}"
            )
        return other

    def __add__(self, other):
        other = self._compatible(other)
        if other is NotImplemented:
            return other
        return AdaptedProcess(self.tree, self.start, [a + b for a, b in zip(self.levels, other.levels)])

    def __sub__(self, other):
        other = self._compatible(other)
        if other is NotImplemented:
            return other
        return AdaptedProcess(self.tree, self.start, [a - b for a, b in zip(self.levels, other.levels)])

    def __neg__(self):
        return self.map(np.negative)

    def __mul__(self, scalar):
        if isinstance(scalar, AdaptedProcess):
            return NotImplemented
        return self.map(lambda v: v * float(scalar))

    __rmul__ = __mul__

    def __repr__(self):
        return f"AdaptedProcess(levels={self.start}..{self.stop - 1}, shape={self.shape})"


def pair_processes(u: AdaptedProcess, v: AdaptedProcess, tree: TreeSpace | None = None) -> float:
    """Discrete ``E int <u, v> ds``: sum over levels of ``dt * sum_atoms p * <u_k, v_k>``."""
    u._compatible(v)
    tree = tree or u.tree
    total = 0.0
    for k, a, b in zip(u.levels_range(), u.levels, v.levels):
        total += tree.dt * tree.prob(k) * float(np.sum(a * b))
    return total


def process_norm(u: AdaptedProcess) -> float:
    return float(np.sqrt(max(pair_processes(u, u), 0.0)))


def pair_terminal(xi: np.ndarray, zeta: np.ndarray, tree: TreeSpace) -> float:
    """Discrete ``E <xi, zeta>`` over the leaves."""
    xi, zeta = np.asarray(xi, dtype=float), np.asarray(zeta, dtype=float)
    if xi.shape != zeta.shape or xi.shape[0] != tree.n_leaves:
        raise ShapeError(f"terminal values need matching shapes with {tree.n_leaves} leaves")
    return tree.prob(tree.K) * float(np.sum(xi * zeta))


def level_mean(x: np.ndarray) -> np.ndarray:
    """Expectation of a level's node values (uniform atoms)."""
    return np.asarray(x).mean(axis=0)


def matvec(mats: np.ndarray, vecs: np.ndarray, transpose: bool = False) -> np.ndarray:
    """Node-wise matrix-vector product for stacked ``(n, p, q)`` matrices."""
    if transpose:
        return np.einsum("nji,nj->ni", mats, vecs)
    return np.einsum("nij,nj->ni", mats, vecs)
