"""Two-person LQ stochastic differential games: open-loop Nash equilibria.

Both players steer one state::

    dx = [(A + A1) x + B1 u1 + B2 u2 + b] ds + [C x + D1 u1 + D2 u2 + sigma] dW

and player i minimises its own quadratic cost, which weights both controls.
Player i's stationarity expression is::

    B_i^T yhat_i + D_i^T Y_i + S^i_i x + R^i_ii u_i + 1/2 (R^i_21 + R^i_12)^T u_other + r^i_i

where ``(y_i, Y_i)`` solves the adjoint equation with source
``Q^i x + S^i_1^T u1 + S^i_2^T u2 + q^i`` and terminal value ``G^i x_K + g^i``.
The map ``(u1, u2) -> (g1, g2)`` is affine; a Nash equilibrium is a zero of it
at which both players' homogeneous costs are convex.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .backward import adjoint_control_map, solve_backward
from .errors import NoEquilibriumError, ShapeError
from .forward import running_part, solve_forward, terminal_value
from .krylov import conjugate_gradient
from .lq import FinitenessResult, check_finiteness, solve_open_loop
from .model import (
    SYMMETRY_TOL,
    CoefficientSet,
    LQProblemSpec,
    SpectralOperatorA,
    WeightSet,
    as_leaf_table,
    as_table,
)
from .stochastic import AdaptedProcess, TreeSpace, matvec, pair_processes, pair_terminal, process_norm

PLAYER_FIELDS = ("Q", "S1", "S2", "R11", "R12", "R21", "R22", "G", "q", "r1", "r2", "g")


@dataclass(frozen=True)
class PlayerWeights:
    Q: AdaptedProcess
    S1: AdaptedProcess
    S2: AdaptedProcess
    R11: AdaptedProcess
    R12: AdaptedProcess
    R21: AdaptedProcess
    R22: AdaptedProcess
    G: np.ndarray
    q: AdaptedProcess
    r1: AdaptedProcess
    r2: AdaptedProcess
    g: np.ndarray

    def S(self, j: int) -> AdaptedProcess:
        return self.S1 if j == 1 else self.S2

    def R(self, i: int, j: int) -> AdaptedProcess:
        return getattr(self, f"R{i}{j}")

    def r(self, j: int) -> AdaptedProcess:
        return self.r1 if j == 1 else self.r2

    def swapped(self) -> "PlayerWeights":
        """Same weights with the roles of controls 1 and 2 exchanged."""
        return PlayerWeights(
            Q=self.Q, S1=self.S2, S2=self.S1, R11=self.R22, R12=self.R21, R21=self.R12,
            R22=self.R11, G=self.G, q=self.q, r1=self.r2, r2=self.r1, g=self.g,
        )


@dataclass(frozen=True)
class GameSpec:
    A: SpectralOperatorA
    tree: TreeSpace
    A1: AdaptedProcess
    C: AdaptedProcess
    b: AdaptedProcess
    sigma: AdaptedProcess
    B1: AdaptedProcess
    B2: AdaptedProcess
    D1: AdaptedProcess
    D2: AdaptedProcess
    players: tuple[PlayerWeights, PlayerWeights]
    t_index: int = 0
    eta: np.ndarray = field(default=None)

    def __post_init__(self):
        N = self.A.N
        object.__setattr__(
            self, "eta", np.zeros(N) if self.eta is None else np.asarray(self.eta, dtype=float).ravel()
        )
        m = self.m
        for name in ("B1", "B2", "D1", "D2"):
            if getattr(self, name).shape != (N, m):
                raise ShapeError(f"{name}: expected node shape {(N, m)}, got {getattr(self, name).shape}")
        for i, p in enumerate(self.players, start=1):
            shapes = {
                "Q": (N, N), "S1": (m, N), "S2": (m, N), "R11": (m, m), "R12": (m, m),
                "R21": (m, m), "R22": (m, m), "q": (N,), "r1": (m,), "r2": (m,),
            }
            for name, shape in shapes.items():
                if getattr(p, name).shape != shape:
                    raise ShapeError(f"player {i} {name}: expected node shape {shape}")
        # joint dynamics double as a consistency check of every state table
        self.joint_spec()

    @property
    def N(self) -> int:
        return self.A.N

    @property
    def m(self) -> int:
        return self.B1.shape[1]

    @property
    def K(self) -> int:
        return self.tree.K

    def Bi(self, i: int) -> AdaptedProcess:
        return self.B1 if i == 1 else self.B2

    def Di(self, i: int) -> AdaptedProcess:
        return self.D1 if i == 1 else self.D2

    def zero_control(self) -> AdaptedProcess:
        return AdaptedProcess.zeros(self.tree, self.t_index, self.K, self.m)

    def joint_spec(self) -> LQProblemSpec:
        """State equation with the stacked control ``(u1, u2)``; weights are placeholders."""
        tree, N, m = self.tree, self.N, self.m
        stack = lambda P1, P2: AdaptedProcess(
            tree, 0, [np.concatenate([a, c], axis=-1) for a, c in zip(P1.levels, P2.levels)]
        )
        coeffs = CoefficientSet(self.A1, stack(self.B1, self.B2), self.C, stack(self.D1, self.D2), self.b, self.sigma)
        weights = WeightSet(
            Q=as_table(tree, None, (N, N)), R=as_table(tree, np.eye(2 * m), (2 * m, 2 * m)),
            S=as_table(tree, None, (2 * m, N)), G=as_leaf_table(tree, None, (N, N)),
            q=as_table(tree, None, (N,)), r=as_table(tree, None, (2 * m,)), g=as_leaf_table(tree, None, (N,)),
        )
        return LQProblemSpec(self.A, coeffs, weights, tree, self.t_index, self.eta)

    def swapped(self) -> "GameSpec":
        """Relabel the players 1 <-> 2."""
        p1, p2 = self.players
        return dataclasses.replace(
            self, B1=self.B2, B2=self.B1, D1=self.D2, D2=self.D1, players=(p2.swapped(), p1.swapped())
        )

    def symmetry_violations(self) -> list[str]:
        out = []
        for i, p in enumerate(self.players, start=1):
            for name in ("Q", "R11", "R12", "R21", "R22"):
                proc = getattr(p, name)
                for k in range(self.t_index, self.K):
                    skew = np.abs(proc[k] - np.swapaxes(proc[k], 1, 2)).max()
                    if skew > SYMMETRY_TOL:
                        out.append(f"player {i} {name}[level {k}]: max |M - M^T| = {skew:.3e}")
            skew = np.abs(p.G - np.swapaxes(p.G, 1, 2)).max()
            if skew > SYMMETRY_TOL:
                out.append(f"player {i} G: max |M - M^T| = {skew:.3e}")
        return out


def make_game(
    tree: TreeSpace,
    eigenvalues,
    m: int,
    *,
    players,
    eta=None,
    t_index: int = 0,
    A1=None, C=None, b=None, sigma=None, B1=None, B2=None, D1=None, D2=None,
) -> GameSpec:
    """Build a game; ``players`` is a pair of dicts keyed by :data:`PLAYER_FIELDS`.

    Omitted player tables are zero except R11 and R22 of the player's own
    control, which default to the identity.
    """
    A = SpectralOperatorA(eigenvalues)
    N = A.N
    built = []
    for i, p in enumerate(players, start=1):
        unknown = set(p) - set(PLAYER_FIELDS)
        if unknown:
            raise ShapeError(f"player {i}: unknown weight(s) {sorted(unknown)}")
        p = dict(p)
        p.setdefault(f"R{i}{i}", np.eye(m))
        shapes = {
            "Q": (N, N), "S1": (m, N), "S2": (m, N), "R11": (m, m), "R12": (m, m), "R21": (m, m),
            "R22": (m, m), "q": (N,), "r1": (m,), "r2": (m,),
        }
        tables = {k: as_table(tree, p.get(k), s) for k, s in shapes.items()}
        tables["G"] = as_leaf_table(tree, p.get("G"), (N, N))
        tables["g"] = as_leaf_table(tree, p.get("g"), (N,))
        built.append(PlayerWeights(**tables))
    return GameSpec(
        A=A, tree=tree,
        A1=as_table(tree, A1, (N, N)), C=as_table(tree, C, (N, N)),
        b=as_table(tree, b, (N,)), sigma=as_table(tree, sigma, (N,)),
        B1=as_table(tree, B1, (N, m)), B2=as_table(tree, B2, (N, m)),
        D1=as_table(tree, D1, (N, m)), D2=as_table(tree, D2, (N, m)),
        players=tuple(built), t_index=t_index, eta=eta,
    )


def _stack(u1: AdaptedProcess, u2: AdaptedProcess) -> AdaptedProcess:
    return AdaptedProcess(u1.tree, u1.start, [np.concatenate([a, c], axis=-1) for a, c in zip(u1.levels, u2.levels)])


def _apply(table: AdaptedProcess, v: AdaptedProcess, transpose=False) -> AdaptedProcess:
    return AdaptedProcess(v.tree, v.start, [matvec(table[k], v[k], transpose) for k in v.levels_range()])


def _restrict(game: GameSpec, p: AdaptedProcess) -> AdaptedProcess:
    return p.restrict(game.t_index, game.K)


def _controls(game: GameSpec, i: int, ui: AdaptedProcess, uo: AdaptedProcess):
    return (ui, uo) if i == 1 else (uo, ui)


def game_state(game: GameSpec, u1: AdaptedProcess, u2: AdaptedProcess) -> AdaptedProcess:
    return solve_forward(game.joint_spec(), _stack(u1, u2))


def player_cost(game: GameSpec, i: int, u1: AdaptedProcess, u2: AdaptedProcess, x=None) -> float:
    """Cost of player i written out term by term."""
    p = game.players[i - 1]
    x = game_state(game, u1, u2) if x is None else x
    xr, xT = running_part(x), terminal_value(x)
    R = lambda a, b: _restrict(game, p.R(a, b))
    running = (
        pair_processes(_apply(_restrict(game, p.Q), xr), xr)
        + 2.0 * pair_processes(_apply(_restrict(game, p.S1), xr), u1)
        + 2.0 * pair_processes(_apply(_restrict(game, p.S2), xr), u2)
        + pair_processes(_apply(R(1, 1), u1), u1)
        + pair_processes(_apply(R(1, 2), u2), u1)
        + pair_processes(_apply(R(2, 1), u1), u2)
        + pair_processes(_apply(R(2, 2), u2), u2)
        + 2.0 * pair_processes(_restrict(game, p.r1), u1)
        + 2.0 * pair_processes(_restrict(game, p.r2), u2)
        + 2.0 * pair_processes(_restrict(game, p.q), xr)
    )
    terminal = pair_terminal(np.einsum("nij,nj->ni", p.G, xT) + 2.0 * p.g, xT, game.tree)
    return 0.5 * (running + terminal)


def _cross_weight(game: GameSpec, i: int) -> AdaptedProcess:
    """``1/2 (R^i_21 + R^i_12)^T`` on levels ``t .. K-1``."""
    p = game.players[i - 1]
    return _restrict(game, p.R21 + p.R12).map(lambda a: 0.5 * np.swapaxes(a, 1, 2))


def nash_stationarity(game: GameSpec, u1: AdaptedProcess, u2: AdaptedProcess) -> tuple[AdaptedProcess, AdaptedProcess]:
    joint = game.joint_spec()
    x = solve_forward(joint, _stack(u1, u2))
    xr, xT = running_part(x), terminal_value(x)
    out = []
    for i in (1, 2):
        p = game.players[i - 1]
        ui, uo = (u1, u2) if i == 1 else (u2, u1)
        xi = (
            _apply(_restrict(game, p.Q), xr)
            + _apply(_restrict(game, p.S1), u1, transpose=True)
            + _apply(_restrict(game, p.S2), u2, transpose=True)
            + _restrict(game, p.q)
        )
        yT = np.einsum("nij,nj->ni", p.G, xT) + p.g
        pair = solve_backward(joint, yT, xi)
        g = (
            adjoint_control_map(joint, pair, B=game.Bi(i), D=game.Di(i))
            + _apply(_restrict(game, p.S(i)), xr)
            + _apply(_restrict(game, p.R(i, i)), ui)
            + _apply(_cross_weight(game, i), uo)
            + _restrict(game, p.r(i))
        )
        out.append(g)
    return out[0], out[1]


def _embed_levels(game: GameSpec, v: AdaptedProcess) -> AdaptedProcess:
    full = AdaptedProcess.zeros(game.tree, 0, game.K, v.shape)
    return AdaptedProcess(game.tree, 0, full.levels[: game.t_index] + list(v.levels))


def embed_player_problem(game: GameSpec, i: int, u_other: AdaptedProcess | None = None) -> LQProblemSpec:
    """Player i's control problem with the other player's control frozen.

    The frozen control moves into the drift and diffusion sources and into the
    linear cost terms; terms constant in u_i are dropped.
    """
    if i not in (1, 2):
        raise ValueError(f"player index must be 1 or 2, got {i}")
    o = 3 - i
    uo = game.zero_control() if u_other is None else u_other
    if (uo.start, uo.stop, uo.shape) != (game.t_index, game.K, (game.m,)):
        raise ShapeError(f"frozen control must cover levels {game.t_index}..{game.K - 1} with shape ({game.m},)")
    p = game.players[i - 1]
    uo_full = _embed_levels(game, uo)
    coeffs = CoefficientSet(
        A1=game.A1, B=game.Bi(i), C=game.C, D=game.Di(i),
        b=game.b + _apply(game.Bi(o), uo_full),
        sigma=game.sigma + _apply(game.Di(o), uo_full),
    )
    cross = 0.5 * (p.R21 + p.R12).map(lambda a: np.swapaxes(a, 1, 2))
    weights = WeightSet(
        Q=p.Q, R=p.R(i, i), S=p.S(i), G=p.G,
        q=p.q + _apply(p.S(o), uo_full, transpose=True),
        r=p.r(i) + _apply(cross, uo_full),
        g=p.g,
    )
    return LQProblemSpec(game.A, coeffs, weights, game.tree, game.t_index, game.eta, 2.0)


def homogeneous_player_problem(game: GameSpec, i: int) -> LQProblemSpec:
    spec = embed_player_problem(game, i, None)
    return spec.homogeneous().replace(
        b=spec.zero_like(game.b), sigma=spec.zero_like(game.sigma)
    )


def check_convexity_homogeneous(game: GameSpec, i: int, dense_threshold: int = 4096, iterative: bool = False) -> FinitenessResult:
    """Convexity of player i's homogeneous cost, i.e. nonnegativity of its Hessian."""
    return check_finiteness(homogeneous_player_problem(game, i), dense_threshold, iterative)


@dataclass
class NashCandidate:
    u1: AdaptedProcess
    u2: AdaptedProcess
    residuals: tuple[float, float]
    convex: tuple[bool, bool]
    min_eigs: tuple[float, float]
    iterations: int
    method: str
    tol: float = 1e-8

    @property
    def certified(self) -> bool:
        return all(r <= self.tol for r in self.residuals) and all(self.convex)

    @property
    def label(self) -> str:
        return "Nash" if self.certified else "stationary point (uncertified)"


def _flat(game: GameSpec):
    t, K, m, tree = game.t_index, game.K, game.m, game.tree
    n = m * sum(tree.n_nodes(k) for k in range(t, K))

    def split(v):
        return (
            AdaptedProcess.from_flat(tree, t, K, (m,), v[:n]),
            AdaptedProcess.from_flat(tree, t, K, (m,), v[n:]),
        )

    w = game.zero_control().weights()
    return n, split, np.concatenate([w, w])


def solve_nash(
    game: GameSpec,
    *,
    tol: float = 1e-10,
    maxiter: int | None = None,
    certify_tol: float = 1e-8,
    check_convexity: bool = True,
    dense_threshold: int = 4096,
) -> NashCandidate:
    """Zero of the joint stationarity map by a Krylov method on the stacked controls.

    The stacked operator is applied in coordinates scaled by the square root
    of the pairing weights, so Euclidean residuals there equal residuals in
    the process norm.  CG is used when the operator is numerically
    self-adjoint and positive on the probes, GMRES otherwise.
    """
    n, split, weights = _flat(game)
    sw = np.sqrt(weights)

    def F(v):
        g1, g2 = nash_stationarity(game, *split(v))
        return np.concatenate([g1.flatten(), g2.flatten()])

    const = F(np.zeros(2 * n))
    L = lambda v: F(v) - const
    maxiter = 10 * 2 * n if maxiter is None else maxiter

    rng = np.random.default_rng(0)
    a, c = rng.standard_normal(2 * n), rng.standard_normal(2 * n)
    La, Lc = L(a), L(c)
    lhs, rhs = np.dot(weights * La, c), np.dot(weights * a, Lc)
    symmetric = abs(lhs - rhs) <= 1e-12 * (abs(lhs) + abs(rhs) + 1e-300)

    solution, iterations, method = None, 0, "gmres"
    if symmetric:
        res = conjugate_gradient(L, -const, weights, tol=tol, maxiter=maxiter)
        if res.converged:
            solution, iterations, method = res.x, res.iterations, "cg"
    if solution is None:
        op = LinearOperator((2 * n, 2 * n), matvec=lambda z: sw * L(z / sw), dtype=float)
        counter = {"n": 0}

        def callback(_):
            counter["n"] += 1

        z, info = gmres(
            op, -sw * const, rtol=tol, atol=0.0, restart=min(2 * n, 200),
            maxiter=max(1, maxiter // min(2 * n, 200) + 1), callback=callback, callback_type="pr_norm",
        )
        solution, iterations = z / sw, counter["n"]
        if info != 0:
            u1, u2 = split(solution)
            raise NoEquilibriumError(f"GMRES did not converge (info={info})", best_iterate=(u1, u2))

    u1, u2 = split(solution)
    g1, g2 = nash_stationarity(game, u1, u2)
    if check_convexity:
        c1 = check_convexity_homogeneous(game, 1, dense_threshold, iterative=True)
        c2 = check_convexity_homogeneous(game, 2, dense_threshold, iterative=True)
        convex, eigs = (c1.nonneg, c2.nonneg), (c1.min_eig, c2.min_eig)
    else:
        convex, eigs = (False, False), (float("nan"), float("nan"))
    return NashCandidate(
        u1, u2, (process_norm(g1), process_norm(g2)), convex, eigs, iterations, method, certify_tol
    )


@dataclass
class NashVerification:
    best_response_distance: tuple[float, float]
    worst_deviation_gain: tuple[float, float]
    passed: bool
    br_tol: float
    deviation_tol: float

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _random_control(game: GameSpec, rng) -> AdaptedProcess:
    tree = game.tree
    v = AdaptedProcess(tree, game.t_index, [rng.standard_normal((tree.n_nodes(k), game.m)) for k in range(game.t_index, game.K)])
    nrm = process_norm(v)
    return v * (1.0 / nrm) if nrm > 0 else v


def verify_nash(
    game: GameSpec,
    candidate: NashCandidate,
    *,
    n_deviations: int = 100,
    seed: int = 0,
    br_tol: float = 1e-7,
    deviation_tol: float = 1e-9,
) -> NashVerification:
    """Best-response and unilateral-deviation checks of a candidate pair."""
    rng = np.random.default_rng(seed)
    u = (candidate.u1, candidate.u2)
    dist, gains = [], []
    for i in (1, 2):
        ui, uo = u[i - 1], u[2 - i]
        br, _ = solve_open_loop(embed_player_problem(game, i, uo), tol=1e-12)
        dist.append(process_norm(br - ui))
        base = player_cost(game, i, *u)
        worst = -np.inf
        for _ in range(n_deviations):
            v = _random_control(game, rng) * float(rng.uniform(0.01, 2.0))
            trial = _controls(game, i, ui + v, uo)
            worst = max(worst, base - player_cost(game, i, *trial))
        gains.append(float(worst) if n_deviations else 0.0)
    passed = all(d <= br_tol for d in dist) and all(g <= deviation_tol for g in gains)
    return NashVerification(tuple(dist), tuple(gains), passed, br_tol, deviation_tol)
