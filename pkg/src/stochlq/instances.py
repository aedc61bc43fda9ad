"""Random problem and game generators used by tests, scripts and the CLI."""
from __future__ import annotations

import numpy as np

from .game import GameSpec, make_game
from .model import LQProblemSpec, make_problem
from .stochastic import AdaptedProcess, TreeSpace, build_tree


def random_process(rng, tree: TreeSpace, shape, scale=1.0, start=0, stop=None) -> AdaptedProcess:
    """Node-indexed Gaussian table (non-Markovian: every node independent)."""
    stop = tree.K if stop is None else stop
    shape = (shape,) if isinstance(shape, int) else tuple(shape)
    return AdaptedProcess(
        tree, start, [scale * rng.standard_normal((tree.n_nodes(k),) + shape) for k in range(start, stop)]
    )


def _psd_stack(rng, n_nodes, n, scale, shift=0.0):
    X = rng.standard_normal((n_nodes, n, n))
    return scale * np.einsum("kij,klj->kil", X, X) / n + shift * np.eye(n)


def random_psd_process(rng, tree: TreeSpace, n, scale=1.0, shift=0.0) -> AdaptedProcess:
    return AdaptedProcess(tree, 0, [_psd_stack(rng, tree.n_nodes(k), n, scale, shift) for k in range(tree.K)])


def random_symmetric_process(rng, tree: TreeSpace, n, scale=1.0) -> AdaptedProcess:
    def sym(k):
        X = rng.standard_normal((tree.n_nodes(k), n, n))
        return scale * 0.5 * (X + np.swapaxes(X, 1, 2))

    return AdaptedProcess(tree, 0, [sym(k) for k in range(tree.K)])


def random_lq_problem(
    rng,
    *,
    N: int = 2,
    m: int = 1,
    K: int = 4,
    T: float = 1.0,
    t_index: int = 0,
    delta: float = 0.5,
    standard: bool = True,
    with_S: bool = False,
    coupling: float = 0.5,
    heat: bool = True,
    tree: TreeSpace | None = None,
) -> LQProblemSpec:
    """Random instance with node-dependent coefficients and weights.

    ``standard=True`` draws Q, G >= 0 and R >= delta I.  With ``with_S`` a
    small S is added and Q is shifted so the running integrand stays jointly
    convex.
    """
    tree = build_tree(K, 0.0, T) if tree is None else tree
    eig = -(np.arange(1, N + 1) * np.pi) ** 2 / 10 if heat else -rng.uniform(0, 3, N)
    rp = lambda shape, s=1.0: random_process(rng, tree, shape, s)
    if standard:
        Q = random_psd_process(rng, tree, N, 1.0, 0.5 if with_S else 0.0)
        R = random_psd_process(rng, tree, m, 1.0, delta)
        G = _psd_stack(rng, tree.n_leaves, N, 1.0)
    else:
        Q = random_symmetric_process(rng, tree, N)
        R = random_symmetric_process(rng, tree, m)
        G = _psd_stack(rng, tree.n_leaves, N, 1.0) - 0.5 * np.eye(N)
    S = None
    if with_S:
        # |c S|^2 <= lambda_min(Q) lambda_min(R) keeps [[Q, S^T], [S, R]] >= 0
        S = rp((m, N), 0.1 * np.sqrt(0.5 * delta) / max(N, m))
    return make_problem(
        tree, eig, m, eta=rng.standard_normal(N), t_index=t_index,
        A1=rp((N, N), coupling), B=rp((N, m)), C=rp((N, N), coupling), D=rp((N, m), 0.5),
        b=rp((N,)), sigma=rp((N,)),
        Q=Q, R=R, S=S, G=G, q=rp((N,)), r=rp((m,)), g=rng.standard_normal((tree.n_leaves, N)),
    )


def scalar_benchmark(tree: TreeSpace) -> LQProblemSpec:
    """dx = u ds, x(0) = 1, J = 1/2 (int u^2 ds + x(T)^2); optimum u = -1/2, J = 1/4 on [0, 1]."""
    return make_problem(tree, [0.0], 1, eta=[1.0], B=1.0, R=1.0, G=1.0)


def _player(rng, tree, N, m, delta, cross, i):
    rp = lambda shape, s=1.0: random_process(rng, tree, shape, s)
    p = {
        "Q": random_psd_process(rng, tree, N),
        "G": _psd_stack(rng, tree.n_leaves, N, 1.0),
        "q": rp((N,)),
        "r1": rp((m,)),
        "r2": rp((m,)),
        "g": rng.standard_normal((tree.n_leaves, N)),
        f"R{i}{i}": random_psd_process(rng, tree, m, 1.0, delta),
    }
    o = 3 - i
    p[f"R{o}{o}"] = random_psd_process(rng, tree, m)
    if cross:
        p["R12"] = random_symmetric_process(rng, tree, m, cross)
        p["R21"] = random_symmetric_process(rng, tree, m, cross)
        p[f"S{o}"] = rp((m, N), cross)
    return p


def random_game(
    rng,
    *,
    N: int = 2,
    m: int = 1,
    K: int = 4,
    T: float = 1.0,
    delta: float = 0.5,
    cross: float = 0.3,
    tree: TreeSpace | None = None,
) -> GameSpec:
    """Random convex game: Q^i, G^i >= 0, R^i_ii >= delta I, own S^i_i = 0.

    Cross weights R^i_12, R^i_21 are symmetric at every node.
    """
    tree = build_tree(K, 0.0, T) if tree is None else tree
    rp = lambda shape, s=1.0: random_process(rng, tree, shape, s)
    players = [_player(rng, tree, N, m, delta, cross, i) for i in (1, 2)]
    return make_game(
        tree, -(np.arange(1, N + 1) * np.pi) ** 2 / 10, m, players=players, eta=rng.standard_normal(N),
        A1=rp((N, N), 0.5), C=rp((N, N), 0.5), b=rp((N,)), sigma=rp((N,)),
        B1=rp((N, m)), B2=rp((N, m)), D1=rp((N, m), 0.5), D2=rp((N, m), 0.5),
    )


def symmetric_game(rng, *, N: int = 2, m: int = 1, K: int = 4, delta: float = 0.5) -> GameSpec:
    """Game invariant under relabelling the players."""
    tree = build_tree(K, 0.0, 1.0)
    rp = lambda shape, s=1.0: random_process(rng, tree, shape, s)
    p1 = _player(rng, tree, N, m, delta, 0.3, 1)
    swap = {"S1": "S2", "S2": "S1", "R11": "R22", "R22": "R11", "R12": "R21", "R21": "R12", "r1": "r2", "r2": "r1"}
    p2 = {swap.get(k, k): v for k, v in p1.items()}
    B, D = rp((N, m)), rp((N, m), 0.5)
    return make_game(
        tree, -(np.arange(1, N + 1) * np.pi) ** 2 / 10, m, players=[p1, p2], eta=rng.standard_normal(N),
        A1=rp((N, N), 0.5), C=rp((N, N), 0.5), b=rp((N,)), sigma=rp((N,)),
        B1=B, B2=B, D1=D, D2=D,
    )


def decoupled_game(rng, *, n1: int = 1, n2: int = 1, m: int = 1, K: int = 4, delta: float = 0.5) -> GameSpec:
    """Players drive disjoint state blocks and only weight their own block."""
    tree = build_tree(K, 0.0, 1.0)
    N = n1 + n2
    blocks = [slice(0, n1), slice(n1, N)]

    def block_process(shape_fn, i, s=1.0, mode="rows"):
        levels = []
        for k in range(K):
            full = np.zeros((tree.n_nodes(k),) + shape_fn())
            sl = blocks[i - 1]
            n = sl.stop - sl.start
            if mode == "square":
                full[:, sl, sl] = s * rng.standard_normal((tree.n_nodes(k), n, n))
            elif mode == "rows":
                full[:, sl] = s * rng.standard_normal((tree.n_nodes(k), n) + shape_fn()[1:])
            levels.append(full)
        return AdaptedProcess(tree, 0, levels)

    def blockdiag(i_list, s):
        out = None
        for i in i_list:
            p = block_process(lambda: (N, N), i, s, "square")
            out = p if out is None else out + p
        return out

    players = []
    for i in (1, 2):
        sl = blocks[i - 1]
        n = sl.stop - sl.start
        Q = AdaptedProcess(tree, 0, [np.zeros((tree.n_nodes(k), N, N)) for k in range(K)])
        for k in range(K):
            Q.levels[k][:, sl, sl] = _psd_stack(rng, tree.n_nodes(k), n, 1.0)
        G = np.zeros((tree.n_leaves, N, N))
        G[:, sl, sl] = _psd_stack(rng, tree.n_leaves, n, 1.0)
        q = block_process(lambda: (N,), i)
        g = np.zeros((tree.n_leaves, N))
        g[:, sl] = rng.standard_normal((tree.n_leaves, n))
        players.append({
            "Q": Q, "G": G, "q": q, "g": g,
            f"R{i}{i}": random_psd_process(rng, tree, m, 1.0, delta),
            f"r{i}": random_process(rng, tree, m),
        })
    return make_game(
        tree, -(np.arange(1, N + 1) * np.pi) ** 2 / 10, m, players=players, eta=rng.standard_normal(N),
        A1=blockdiag((1, 2), 0.5), C=blockdiag((1, 2), 0.5),
        b=rp_full(rng, tree, N), sigma=rp_full(rng, tree, N),
        B1=block_process(lambda: (N, m), 1), B2=block_process(lambda: (N, m), 2),
        D1=block_process(lambda: (N, m), 1, 0.5), D2=block_process(lambda: (N, m), 2, 0.5),
    )


def rp_full(rng, tree, N):
    return random_process(rng, tree, (N,))
