"""Optimal investment with a random endowment for a power-utility agent in a
Black-Scholes market: closed forms, Monte Carlo simulation and a
verification harness."""

from .closedform import (
    alpha,
    beta,
    chi,
    dual_utility,
    dual_value,
    endowment_price,
    inverse_marginal,
    kstar,
    lagrange_multiplier,
    merton_fraction,
    optimal_fraction,
    optimal_terminal_wealth,
    optimal_wealth,
    primal_value,
    shift_scale,
    solve_dual,
    strategy_coefficients,
    utility,
)
from .errors import (
    DomainError,
    EndowOptError,
    MemoryBudgetError,
    OverflowGuardError,
    StrategyError,
    ValidationError,
)
from .estimator import EndowmentPolicy, MertonPolicy
from .model import (
    AgentParams,
    EndowmentParams,
    MarketParams,
    ProblemSpec,
    make_spec,
    market_price_of_risk,
    validate,
)
from .simulate import GridConfig, PathEnsemble, Strategy, WealthPaths, generate_paths, integrate_wealth

__version__ = "0.1.0"

__all__ = [
    "AgentParams",
    "DomainError",
    "EndowmentPolicy",
    "EndowOptError",
    "EndowmentParams",
    "GridConfig",
    "MarketParams",
    "MemoryBudgetError",
    "MertonPolicy",
    "OverflowGuardError",
    "PathEnsemble",
    "ProblemSpec",
    "Strategy",
    "StrategyError",
    "ValidationError",
    "WealthPaths",
    "alpha",
    "beta",
    "chi",
    "dual_utility",
    "dual_value",
    "endowment_price",
    "generate_paths",
    "integrate_wealth",
    "inverse_marginal",
    "kstar",
    "lagrange_multiplier",
    "make_spec",
    "market_price_of_risk",
    "merton_fraction",
    "optimal_fraction",
    "optimal_terminal_wealth",
    "optimal_wealth",
    "primal_value",
    "shift_scale",
    "solve_dual",
    "strategy_coefficients",
    "utility",
    "validate",
]
