"""JSON problem configuration.

Example::

    {
      "schema_version": 1,
      "mode": "slq",
      "grid": {"t0": 0.0, "T": 1.0, "K": 4},
      "backend": {"kind": "tree"},
      "dims": {"N": 2, "m": 1},
      "operator": {"preset": "heat"},
      "initial": {"t_index": 0, "eta": [1.0, 0.0]},
      "coefficients": {"B": {"kind": "random", "scale": 1.0}},
      "weights": {"Q": 1.0, "G": {"kind": "time-table", ...}},
      "solver": {"tol": 1e-10, "s_factor": 2}
    }

Tables accept a bare number or nested list (constant; a number stands for a
multiple of the identity for matrix tables), ``{"kind": "constant", "value": v}``,
``{"kind": "time-table", "values": [v_0, ..., v_{K-1}]}``,
``{"kind": "node-table", "values": {"": v, "u": v, "d": v, ...}}`` keyed by
up/down path strings, or ``{"kind": "random", "scale": s, "psd": false, "shift": 0}``
drawn from the run's seed.  Terminal tables (G, g) index leaves, i.e. paths
of length K.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidGridError, ShapeError
from .game import PLAYER_FIELDS, GameSpec, make_game
from .model import LQProblemSpec, heat_eigenvalues, make_problem, symmetrized
from .montecarlo import MCEnsemble, build_ensemble
from .stochastic import AdaptedProcess, TreeSpace, build_chain, build_tree

SCHEMA_VERSION = 1
MAX_TREE_LEVELS = 20

TOP_LEVEL = {
    "schema_version", "mode", "grid", "backend", "dims", "operator", "initial",
    "coefficients", "weights", "players", "solver", "checks", "seed", "description",
}
SLQ_COEFFS = {"A1", "B", "C", "D", "b", "sigma"}
GAME_COEFFS = {"A1", "C", "b", "sigma", "B1", "B2", "D1", "D2"}
WEIGHTS = {"Q", "R", "S", "G", "q", "r", "g"}
SOLVER_DEFAULTS = {
    "tol": 1e-10,
    "s_factor": 2.0,
    "dense_threshold": 4096,
    "symmetrize": False,
    "mode": "auto",
    "iterative_eigs": False,
}
CHECK_DEFAULTS = {
    "epsilons": [1e-3, 1e-2, 1e-1, 1.0],
    "K_values": [4, 8, 16, 32],
    "reference_cost": None,
    "n_deviations": 100,
}


@dataclass
class ProblemConfig:
    raw: dict
    mode: str
    t0: float
    T: float
    K: int
    backend: dict
    N: int
    m: int
    eigenvalues: np.ndarray
    t_index: int
    eta: np.ndarray
    solver: dict
    checks: dict
    seed: int = 0

    def config_hash(self, seed: int | None = None) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        blob += f"|seed={self.seed if seed is None else seed}"
        return hashlib.sha256(blob.encode()).hexdigest()

    def space(self, K: int | None = None) -> TreeSpace:
        K = self.K if K is None else K
        kind = self.backend["kind"]
        if kind in ("chain", "mc"):
            return build_chain(K, self.t0, self.T)
        if K > MAX_TREE_LEVELS:
            raise ConfigError(f"tree with K={K} exceeds the {MAX_TREE_LEVELS}-level limit", "grid.K")
        return build_tree(K, self.t0, self.T)

    def ensemble(self, seed: int | None = None) -> MCEnsemble:
        b = self.backend
        return build_ensemble(
            self.K, self.t0, self.T, b["M"], b.get("seed", self.seed) if seed is None else seed,
            b.get("basis_degree", 3),
        )

    def build(self, seed: int | None = None, K: int | None = None) -> LQProblemSpec | GameSpec:
        """Materialise the problem; random tables are drawn from ``seed``."""
        return self.build_on(self.space(K), seed)

    def build_on(self, tree: TreeSpace, seed: int | None = None) -> LQProblemSpec | GameSpec:
        """Materialise the problem on an explicit tree or chain."""
        rng = np.random.default_rng(self.seed if seed is None else seed)
        built = _build_slq(self, tree, rng) if self.mode == "slq" else _build_game(self, tree, rng)
        if tree.is_chain and self.backend["kind"] != "mc" and not _noise_free(built):
            raise ConfigError("the chain backend drops the noise; C, D and sigma must vanish", "backend.kind")
        return built


def _noise_free(problem) -> bool:
    if isinstance(problem, LQProblemSpec):
        return problem.is_noise_free()
    tables = (problem.C, problem.D1, problem.D2, problem.sigma)
    return all(not np.any(v) for p in tables for v in p.levels)


def _require(d: dict, key: str, field: str):
    if key not in d:
        raise ConfigError("missing required entry", f"{field}.{key}" if field else key)
    return d[key]


def _check_keys(d, allowed, field, strict):
    if not isinstance(d, dict):
        raise ConfigError("expected an object", field)
    unknown = set(d) - set(allowed)
    if unknown and strict:
        raise ConfigError(f"unknown field(s) {sorted(unknown)}", field)


def _number(value, field, kind=float):
    try:
        out = kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"expected a {kind.__name__}, got {value!r}", field) from None
    if kind is int and out != value:
        raise ConfigError(f"expected an integer, got {value!r}", field)
    return out


def parse_config(raw: dict, *, strict: bool = True) -> ProblemConfig:
    raw = copy.deepcopy(raw)
    _check_keys(raw, TOP_LEVEL, "", strict)
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version {version}", "schema_version")
    mode = raw.get("mode", "slq")
    if mode not in ("slq", "game"):
        raise ConfigError(f"mode must be 'slq' or 'game', got {mode!r}", "mode")

    grid = _require(raw, "grid", "")
    _check_keys(grid, {"t0", "T", "K"}, "grid", strict)
    K = _number(_require(grid, "K", "grid"), "grid.K", int)
    t0 = _number(grid.get("t0", 0.0), "grid.t0")
    T = _number(grid.get("T", 1.0), "grid.T")
    if K < 1:
        raise InvalidGridError(f"grid.K: step count must be >= 1, got {K}")
    if not T > t0:
        raise InvalidGridError(f"grid.T: horizon {T} must exceed t0={t0}")

    backend = raw.get("backend", {"kind": "tree"})
    _check_keys(backend, {"kind", "M", "seed", "basis_degree"}, "backend", strict)
    kind = backend.get("kind", "tree")
    if kind not in ("tree", "chain", "mc"):
        raise ConfigError(f"unknown backend {kind!r}", "backend.kind")
    if kind == "mc":
        _number(_require(backend, "M", "backend"), "backend.M", int)
    if kind == "tree" and K > MAX_TREE_LEVELS:
        raise ConfigError(f"tree with K={K} exceeds the {MAX_TREE_LEVELS}-level limit", "grid.K")
    backend = {"kind": kind, **{k: v for k, v in backend.items() if k != "kind"}}

    dims = _require(raw, "dims", "")
    _check_keys(dims, {"N", "m"}, "dims", strict)
    N = _number(_require(dims, "N", "dims"), "dims.N", int)
    m = _number(dims.get("m", 1), "dims.m", int)
    if N < 1 or m < 1:
        raise ConfigError(f"dimensions must be positive, got N={N}, m={m}", "dims")

    op = raw.get("operator", {"preset": "heat"})
    _check_keys(op, {"eigenvalues", "preset"}, "operator", strict)
    if "eigenvalues" in op:
        eig = np.asarray(op["eigenvalues"], dtype=float)
        if eig.shape != (N,):
            raise ConfigError(f"expected {N} eigenvalues, got shape {eig.shape}", "operator.eigenvalues")
    else:
        preset = op.get("preset", "heat")
        if preset == "heat":
            eig = heat_eigenvalues(N)
        elif preset == "zero":
            eig = np.zeros(N)
        else:
            raise ConfigError(f"unknown preset {preset!r}", "operator.preset")

    init = raw.get("initial", {})
    _check_keys(init, {"t_index", "eta"}, "initial", strict)
    t_index = _number(init.get("t_index", 0), "initial.t_index", int)
    if not 0 <= t_index < K:
        raise ConfigError(f"initial level must lie in 0..{K - 1}", "initial.t_index")
    eta = np.asarray(init.get("eta", np.zeros(N)), dtype=float)
    if eta.shape == ():
        eta = np.full(N, float(eta))
    if eta.shape != (N,):
        raise ConfigError(f"expected {N} entries, got shape {eta.shape}", "initial.eta")

    solver = raw.get("solver", {})
    _check_keys(solver, SOLVER_DEFAULTS, "solver", strict)
    solver = {**SOLVER_DEFAULTS, **solver}
    if solver["s_factor"] not in (1, 2):
        raise ConfigError("must be 1 or 2", "solver.s_factor")
    if solver["mode"] not in ("auto", "cg", "lstsq"):
        raise ConfigError(f"unknown solver mode {solver['mode']!r}", "solver.mode")
    checks = raw.get("checks", {})
    _check_keys(checks, CHECK_DEFAULTS, "checks", strict)
    checks = {**CHECK_DEFAULTS, **checks}

    if mode == "slq":
        _check_keys(raw.get("coefficients", {}), SLQ_COEFFS, "coefficients", strict)
        _check_keys(raw.get("weights", {}), WEIGHTS, "weights", strict)
        if "players" in raw and strict:
            raise ConfigError("only valid in game mode", "players")
    else:
        _check_keys(raw.get("coefficients", {}), GAME_COEFFS, "coefficients", strict)
        players = _require(raw, "players", "")
        if not isinstance(players, list) or len(players) != 2:
            raise ConfigError("expected a list of two player objects", "players")
        for i, p in enumerate(players):
            _check_keys(p, PLAYER_FIELDS, f"players[{i}]", strict)
        if "weights" in raw and strict:
            raise ConfigError("game weights belong under 'players'", "weights")

    cfg = ProblemConfig(
        raw=raw, mode=mode, t0=t0, T=T, K=K, backend=backend, N=N, m=m, eigenvalues=eig,
        t_index=t_index, eta=eta, solver=solver, checks=checks,
        seed=_number(raw.get("seed", 0), "seed", int),
    )
    # materialise once so every table is dimension-checked up front
    cfg.build()
    return cfg


def load_config(path, *, strict: bool = True) -> ProblemConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return parse_config(raw, strict=strict)


# table materialisation

def _shape_of(arr, shape, field):
    arr = np.asarray(arr, dtype=float)
    if arr.shape == () and shape:
        arr = arr * (np.eye(*shape) if len(shape) == 2 else np.ones(shape))
    if arr.shape != shape:
        raise ConfigError(f"expected node shape {shape}, got {arr.shape}", field)
    return arr


def _random_values(rng, n, shape, spec_):
    scale = float(spec_.get("scale", 1.0))
    X = scale * rng.standard_normal((n,) + shape)
    if spec_.get("psd") and len(shape) == 2 and shape[0] == shape[1]:
        X = np.einsum("kij,klj->kil", X, X) / shape[0]
    elif spec_.get("symmetric") and len(shape) == 2 and shape[0] == shape[1]:
        X = 0.5 * (X + np.swapaxes(X, 1, 2))
    shift = float(spec_.get("shift", 0.0))
    if shift:
        X = X + shift * (np.eye(shape[0]) if len(shape) == 2 else np.ones(shape))
    return X


def _levels_table(value, field, shape, tree: TreeSpace, rng) -> AdaptedProcess | None:
    K = tree.K
    if value is None:
        return None
    if not isinstance(value, dict):
        return AdaptedProcess.constant(tree, 0, K, _shape_of(value, shape, field))
    kind = value.get("kind")
    if kind == "constant":
        return AdaptedProcess.constant(tree, 0, K, _shape_of(_require(value, "value", field), shape, f"{field}.value"))
    if kind == "time-table":
        vals = _require(value, "values", field)
        if len(vals) != K:
            raise ConfigError(f"expected {K} per-level entries, got {len(vals)}", f"{field}.values")
        return AdaptedProcess.from_time_table(
            tree, 0, [_shape_of(v, shape, f"{field}.values[{k}]") for k, v in enumerate(vals)]
        )
    if kind == "node-table":
        vals = _require(value, "values", field)
        levels = []
        for k in range(K):
            paths = tree.paths(k)
            missing = [p for p in paths if p not in vals]
            if missing:
                raise ConfigError(
                    f"node-table needs {len(paths)} level-{k} nodes; missing e.g. {missing[0]!r}", f"{field}.values"
                )
            levels.append(np.array([_shape_of(vals[p], shape, f"{field}.values[{p!r}]") for p in paths]))
        extra = set(vals) - {p for k in range(K) for p in tree.paths(k)}
        if extra:
            raise ConfigError(f"node-table has {len(extra)} entries outside levels 0..{K - 1}", f"{field}.values")
        return AdaptedProcess(tree, 0, levels)
    if kind == "random":
        return AdaptedProcess(tree, 0, [_random_values(rng, tree.n_nodes(k), shape, value) for k in range(K)])
    raise ConfigError(f"unknown table kind {kind!r}", f"{field}.kind")


def _leaf_table(value, field, shape, tree: TreeSpace, rng) -> np.ndarray | None:
    K, n = tree.K, tree.n_leaves
    if value is None:
        return None
    if not isinstance(value, dict):
        return np.broadcast_to(_shape_of(value, shape, field), (n,) + shape).copy()
    kind = value.get("kind")
    if kind == "constant":
        return np.broadcast_to(_shape_of(_require(value, "value", field), shape, f"{field}.value"), (n,) + shape).copy()
    if kind == "node-table":
        vals = _require(value, "values", field)
        paths = tree.paths(K)
        if len(vals) != len(paths) or any(p not in vals for p in paths):
            raise ConfigError(f"leaf node-table needs exactly the {len(paths)} paths of length {K}", f"{field}.values")
        return np.array([_shape_of(vals[p], shape, f"{field}.values[{p!r}]") for p in paths])
    if kind == "random":
        return _random_values(rng, n, shape, value)
    raise ConfigError(f"kind {kind!r} is not available for terminal tables", f"{field}.kind")


def _build_slq(cfg: ProblemConfig, tree: TreeSpace, rng) -> LQProblemSpec:
    N, m = cfg.N, cfg.m
    shapes = {
        "A1": (N, N), "B": (N, m), "C": (N, N), "D": (N, m), "b": (N,), "sigma": (N,),
        "Q": (N, N), "R": (m, m), "S": (m, N), "q": (N,), "r": (m,),
    }
    coeffs = cfg.raw.get("coefficients", {})
    weights = cfg.raw.get("weights", {})
    tables = {}
    for name in ("A1", "B", "C", "D", "b", "sigma"):
        tables[name] = _levels_table(coeffs.get(name), f"coefficients.{name}", shapes[name], tree, rng)
    for name in ("Q", "R", "S", "q", "r"):
        tables[name] = _levels_table(weights.get(name), f"weights.{name}", shapes[name], tree, rng)
    tables["G"] = _leaf_table(weights.get("G"), "weights.G", (N, N), tree, rng)
    tables["g"] = _leaf_table(weights.get("g"), "weights.g", (N,), tree, rng)
    try:
        spec = make_problem(
            tree, cfg.eigenvalues, m, eta=cfg.eta, t_index=cfg.t_index,
            s_factor=float(cfg.solver["s_factor"]), **tables,
        )
    except ShapeError as exc:
        raise ConfigError(str(exc)) from None
    return symmetrized(spec) if cfg.solver["symmetrize"] else spec


def _build_game(cfg: ProblemConfig, tree: TreeSpace, rng) -> GameSpec:
    N, m = cfg.N, cfg.m
    coeffs = cfg.raw.get("coefficients", {})
    shapes = {
        "A1": (N, N), "C": (N, N), "b": (N,), "sigma": (N,),
        "B1": (N, m), "B2": (N, m), "D1": (N, m), "D2": (N, m),
    }
    tables = {k: _levels_table(coeffs.get(k), f"coefficients.{k}", s, tree, rng) for k, s in shapes.items()}
    pshapes = {
        "Q": (N, N), "S1": (m, N), "S2": (m, N), "R11": (m, m), "R12": (m, m), "R21": (m, m),
        "R22": (m, m), "q": (N,), "r1": (m,), "r2": (m,),
    }
    players = []
    for i, p in enumerate(cfg.raw["players"]):
        built = {}
        for name, shape in pshapes.items():
            if name in p:
                built[name] = _levels_table(p[name], f"players[{i}].{name}", shape, tree, rng)
        for name, shape in (("G", (N, N)), ("g", (N,))):
            if name in p:
                built[name] = _leaf_table(p[name], f"players[{i}].{name}", shape, tree, rng)
        players.append(built)
    try:
        return make_game(tree, cfg.eigenvalues, m, players=players, eta=cfg.eta, t_index=cfg.t_index, **tables)
    except ShapeError as exc:
        raise ConfigError(str(exc)) from None
