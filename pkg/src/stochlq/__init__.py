"""Open-loop stochastic LQ control and two-player Nash games on binary trees."""
from .backward import BackwardPair, duality_terms, solve_backward, verify_transposition
from .errors import (
    CapacityError,
    ConfigError,
    DomainError,
    IndefiniteError,
    InvalidGridError,
    NoEquilibriumError,
    NumericError,
    ShapeError,
    StochLQError,
)
from .forward import apriori_check, decompose_linear, solve_forward
from .game import GameSpec, make_game, nash_stationarity, player_cost, solve_nash, verify_nash
from .lq import (
    OperatorBundle,
    PsiSystem,
    check_finiteness,
    cost,
    frechet_gradient,
    optimality_residual,
    solve_open_loop,
)
from .model import LQProblemSpec, SpectralOperatorA, heat_preset, make_problem, validate_conditions
from .stochastic import (
    AdaptedProcess,
    TimeGrid,
    TreeSpace,
    build_chain,
    build_tree,
    conditional_expectation,
    martingale_representation,
)

__version__ = "0.1.0"

__all__ = [
    "AdaptedProcess",
    "BackwardPair",
    "CapacityError",
    "ConfigError",
    "DomainError",
    "GameSpec",
    "IndefiniteError",
    "InvalidGridError",
    "LQProblemSpec",
    "NoEquilibriumError",
    "NumericError",
    "OperatorBundle",
    "PsiSystem",
    "ShapeError",
    "SpectralOperatorA",
    "StochLQError",
    "TimeGrid",
    "TreeSpace",
    "apriori_check",
    "build_chain",
    "build_tree",
    "check_finiteness",
    "conditional_expectation",
    "cost",
    "decompose_linear",
    "duality_terms",
    "frechet_gradient",
    "heat_preset",
    "make_game",
    "make_problem",
    "martingale_representation",
    "nash_stationarity",
    "optimality_residual",
    "player_cost",
    "solve_backward",
    "solve_forward",
    "solve_nash",
    "solve_open_loop",
    "validate_conditions",
    "verify_nash",
    "verify_transposition",
]
