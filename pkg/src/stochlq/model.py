"""Galerkin-truncated problem data: generator, coefficient and weight tables."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError
from .stochastic import AdaptedProcess, TreeSpace

SYMMETRY_TOL = 1e-12


@dataclass(frozen=True)
class SpectralOperatorA:
    """Self-adjoint generator, diagonal in the chosen basis."""

    eigenvalues: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "eigenvalues", np.asarray(self.eigenvalues, dtype=float).ravel())

    @property
    def N(self) -> int:
        return self.eigenvalues.size

    def propagator(self, dt: float) -> np.ndarray:
        if dt < 0:
            raise DomainError(f"semigroup time step must be >= 0, got {dt}")
        return np.exp(self.eigenvalues * dt)


def semigroup_apply(A: SpectralOperatorA, dt: float, v) -> np.ndarray:
    """``exp(A dt) v``; works on a single vector or on a stack of node vectors."""
    return A.propagator(dt) * np.asarray(v, dtype=float)


@dataclass(frozen=True)
class CoefficientSet:
    """State-equation tables on levels ``0 .. K-1``."""

    A1: AdaptedProcess
    B: AdaptedProcess
    C: AdaptedProcess
    D: AdaptedProcess
    b: AdaptedProcess
    sigma: AdaptedProcess


@dataclass(frozen=True)
class WeightSet:
    """Cost tables; G and g live on the leaves, the rest on levels ``0 .. K-1``."""

    Q: AdaptedProcess
    R: AdaptedProcess
    S: AdaptedProcess
    G: np.ndarray
    q: AdaptedProcess
    r: AdaptedProcess
    g: np.ndarray


@dataclass(frozen=True)
class LQProblemSpec:
    A: SpectralOperatorA
    coeffs: CoefficientSet
    weights: WeightSet
    tree: TreeSpace
    t_index: int = 0
    eta: np.ndarray = field(default=None)
    s_factor: float = 2.0

    def __post_init__(self):
        N, m = self.N, self.m
        eta = np.zeros(N) if self.eta is None else np.asarray(self.eta, dtype=float).ravel()
        object.__setattr__(self, "eta", eta)
        if eta.shape != (N,):
            raise ShapeError(f"eta must have {N} entries, got {eta.shape}")
        if not np.all(np.isfinite(eta)):
            raise ShapeError("eta must be finite")
        if not 0 <= self.t_index < self.tree.K:
            raise ShapeError(f"initial level {self.t_index} outside 0..{self.tree.K - 1}")
        if self.s_factor not in (1.0, 2.0):
            raise DomainError(f"s_factor must be 1 or 2, got {self.s_factor}")
        K = self.tree.K
        expected = {
            "A1": (N, N), "B": (N, m), "C": (N, N), "D": (N, m), "b": (N,), "sigma": (N,),
        }
        for name, shape in expected.items():
            _check_table(getattr(self.coeffs, name), name, shape, K)
        for name, shape in {"Q": (N, N), "R": (m, m), "S": (m, N), "q": (N,), "r": (m,)}.items():
            _check_table(getattr(self.weights, name), name, shape, K)
        n = self.tree.n_leaves
        if np.shape(self.weights.G) != (n, N, N):
            raise ShapeError(f"G: expected {(n, N, N)}, got {np.shape(self.weights.G)}")
        if np.shape(self.weights.g) != (n, N):
            raise ShapeError(f"g: expected {(n, N)}, got {np.shape(self.weights.g)}")

    @property
    def N(self) -> int:
        return self.A.N

    @property
    def m(self) -> int:
        return self.coeffs.B.shape[1]

    @property
    def K(self) -> int:
        return self.tree.K

    @property
    def dt(self) -> float:
        return self.tree.dt

    @property
    def control_dim(self) -> int:
        return self.m * sum(self.tree.n_nodes(k) for k in range(self.t_index, self.K))

    def zero_control(self) -> AdaptedProcess:
        return AdaptedProcess.zeros(self.tree, self.t_index, self.K, self.m)

    def replace(self, **changes) -> "LQProblemSpec":
        """Copy with fields of the spec, its coefficients or its weights replaced by name."""
        coeff_names = {f.name for f in dataclasses.fields(CoefficientSet)}
        weight_names = {f.name for f in dataclasses.fields(WeightSet)}
        coeffs = {k: changes.pop(k) for k in list(changes) if k in coeff_names}
        weights = {k: changes.pop(k) for k in list(changes) if k in weight_names}
        if coeffs:
            changes["coeffs"] = dataclasses.replace(self.coeffs, **coeffs)
        if weights:
            changes["weights"] = dataclasses.replace(self.weights, **weights)
        return dataclasses.replace(self, **changes)

    def homogeneous(self) -> "LQProblemSpec":
        """Same operators with eta, b, sigma, q, r, g all zero."""
        z = self.zero_like
        return self.replace(
            eta=np.zeros(self.N), b=z(self.coeffs.b), sigma=z(self.coeffs.sigma),
            q=z(self.weights.q), r=z(self.weights.r), g=np.zeros_like(self.weights.g),
        )

    def without_noise_data(self) -> "LQProblemSpec":
        """Zero the inhomogeneous state terms b and sigma only."""
        z = self.zero_like
        return self.replace(b=z(self.coeffs.b), sigma=z(self.coeffs.sigma))

    @staticmethod
    def zero_like(p: AdaptedProcess) -> AdaptedProcess:
        return p.map(np.zeros_like)

    def is_noise_free(self) -> bool:
        c = self.coeffs
        return all(not np.any(v) for p in (c.C, c.D, c.sigma) for v in p.levels)


def _check_table(p: AdaptedProcess, name: str, shape: tuple, K: int):
    if not isinstance(p, AdaptedProcess):
        raise ShapeError(f"{name} must be an AdaptedProcess")
    if (p.start, p.stop) != (0, K):
        raise ShapeError(f"{name} must cover levels 0..{K - 1}, got {p.start}..{p.stop - 1}")
    if p.shape != shape:
        raise ShapeError(f"{name}: expected node shape {shape}, got {p.shape}")


def as_table(tree: TreeSpace, value, shape: tuple) -> AdaptedProcess:
    """Coerce a constant, a per-level list, or a process into a level ``0..K-1`` table."""
    K = tree.K
    if isinstance(value, AdaptedProcess):
        return value
    if value is None:
        return AdaptedProcess.zeros(tree, 0, K, shape)
    arr = np.asarray(value, dtype=float)
    if arr.shape == () and shape:
        arr = arr * (np.eye(*shape) if len(shape) == 2 else np.ones(shape))
    if arr.shape == shape:
        return AdaptedProcess.constant(tree, 0, K, arr)
    if arr.shape == (K,) + shape:
        return AdaptedProcess.from_time_table(tree, 0, list(arr))
    raise ShapeError(f"cannot build a table of node shape {shape} from array of shape {arr.shape}")


def as_leaf_table(tree: TreeSpace, value, shape: tuple) -> np.ndarray:
    n = tree.n_leaves
    if value is None:
        return np.zeros((n,) + shape)
    arr = np.asarray(value, dtype=float)
    if arr.shape == () and shape:
        arr = arr * (np.eye(*shape) if len(shape) == 2 else np.ones(shape))
    if arr.shape == shape:
        return np.broadcast_to(arr, (n,) + shape).copy()
    if arr.shape == (n,) + shape:
        return arr.copy()
    raise ShapeError(f"cannot build a leaf table of shape {shape} from array of shape {arr.shape}")


def make_problem(
    tree: TreeSpace,
    eigenvalues,
    m: int,
    *,
    eta=None,
    t_index: int = 0,
    s_factor: float = 2.0,
    A1=None, B=None, C=None, D=None, b=None, sigma=None,
    Q=None, R=None, S=None, G=None, q=None, r=None, g=None,
) -> LQProblemSpec:
    """Assemble a problem; omitted tables are zero except R, which defaults to the identity."""
    A = SpectralOperatorA(eigenvalues)
    N = A.N
    if R is None:
        R = np.eye(m)
    coeffs = CoefficientSet(
        A1=as_table(tree, A1, (N, N)),
        B=as_table(tree, B, (N, m)),
        C=as_table(tree, C, (N, N)),
        D=as_table(tree, D, (N, m)),
        b=as_table(tree, b, (N,)),
        sigma=as_table(tree, sigma, (N,)),
    )
    weights = WeightSet(
        Q=as_table(tree, Q, (N, N)),
        R=as_table(tree, R, (m, m)),
        S=as_table(tree, S, (m, N)),
        G=as_leaf_table(tree, G, (N, N)),
        q=as_table(tree, q, (N,)),
        r=as_table(tree, r, (m,)),
        g=as_leaf_table(tree, g, (N,)),
    )
    return LQProblemSpec(A, coeffs, weights, tree, t_index, eta, float(s_factor))


def heat_eigenvalues(N: int) -> np.ndarray:
    """Dirichlet Laplacian on (0, 1): ``-n^2 pi^2`` for ``n = 1..N``."""
    n = np.arange(1, N + 1)
    return -(n * np.pi) ** 2


def heat_preset(tree: TreeSpace, N: int, m: int, **kwargs) -> LQProblemSpec:
    """Heat-equation skeleton: zero coefficients, ``Q = I``, ``R = I``."""
    if N < 1 or m < 1:
        raise ShapeError(f"dimensions must be positive, got N={N}, m={m}")
    kwargs.setdefault("Q", np.eye(N))
    return make_problem(tree, heat_eigenvalues(N), m, **kwargs)


@dataclass
class ValidationReport:
    symmetry_violations: list[str]
    finite: bool
    q_min_eig: float
    r_min_eig: float
    g_min_eig: float
    s_zero: bool
    joint_min_eig: float
    standard: bool

    @property
    def delta(self) -> float:
        """Uniform lower bound of R over all atoms."""
        return self.r_min_eig

    def as_dict(self) -> dict:
        return dataclasses.asdict(self) | {"delta": self.delta}


def _min_sym_eig(mats: np.ndarray) -> float:
    if mats.size == 0:
        return np.inf
    return float(np.linalg.eigvalsh(0.5 * (mats + np.swapaxes(mats, -1, -2))).min())


def _asymmetry(name: str, mats: np.ndarray, where) -> list[str]:
    skew = np.abs(mats - np.swapaxes(mats, -1, -2)).max(axis=(-1, -2))
    return [f"{name}{where(i)}: max |M - M^T| = {skew[i]:.3e}" for i in np.flatnonzero(skew > SYMMETRY_TOL)]


def validate_conditions(spec: LQProblemSpec) -> ValidationReport:
    """Check symmetry of Q, R, G and classify the problem as standard or not.

    Standard means Q >= 0, R >= delta I with delta > 0 and G >= 0 at every atom.
    When S is nonzero the running integrand must additionally be jointly
    convex in (x, u), i.e. the block matrix [[Q, c S^T], [c S, R]] with
    ``c = s_factor / 2`` must be positive semidefinite.
    """
    w, t0 = spec.weights, spec.t_index
    levels = range(t0, spec.K)
    violations = []
    for name in ("Q", "R"):
        proc = getattr(w, name)
        for k in levels:
            paths = spec.tree.paths(k) if proc[k].shape[0] <= 4096 else None
            violations += _asymmetry(
                name, proc[k], lambda i, k=k, p=paths: f"[level {k}, node {p[i] if p else i!r}]"
            )
    violations += _asymmetry("G", w.G, lambda i: f"[leaf {i}]")

    finite = all(
        np.all(np.isfinite(v))
        for proc in (*dataclasses.astuple(spec.coeffs, tuple_factory=list), w.Q, w.R, w.S, w.q, w.r)
        for v in proc.levels
    ) and bool(np.all(np.isfinite(w.G)) and np.all(np.isfinite(w.g)))

    q_min = min(_min_sym_eig(w.Q[k]) for k in levels)
    r_min = min(_min_sym_eig(w.R[k]) for k in levels)
    g_min = _min_sym_eig(w.G)
    s_zero = all(not np.any(w.S[k]) for k in levels)
    c = spec.s_factor / 2.0
    joint = min(
        _min_sym_eig(np.block([[w.Q[k], c * np.swapaxes(w.S[k], 1, 2)], [c * w.S[k], w.R[k]]]))
        for k in levels
    )
    standard = q_min >= -SYMMETRY_TOL and r_min > 0 and g_min >= -SYMMETRY_TOL
    if not s_zero:
        standard = standard and joint >= -SYMMETRY_TOL
    return ValidationReport(
        symmetry_violations=violations,
        finite=bool(finite),
        q_min_eig=q_min,
        r_min_eig=r_min,
        g_min_eig=g_min,
        s_zero=s_zero,
        joint_min_eig=joint,
        standard=bool(standard and not violations),
    )


def symmetrized(spec: LQProblemSpec) -> LQProblemSpec:
    """Replace Q, R, G by their symmetric parts (only on explicit request)."""
    sym = lambda a: 0.5 * (a + np.swapaxes(a, -1, -2))
    return spec.replace(Q=spec.weights.Q.map(sym), R=spec.weights.R.map(sym), G=sym(spec.weights.G))
