"""Closed-form solution of the power-utility investment problem with a
geometric Brownian endowment.

Notation used throughout:

* ``kappa = mu - r - eta*theta``: drift of the deflated endowment ``E H``.
* ``rho = (1-gamma)/gamma * (r + theta**2 / (2*gamma))``: exponent rate with
  ``E[H_t^{-(1-gamma)/gamma}] = exp(rho*t)``.

Every function accepts scalars or numpy arrays (broadcast together) and
returns a ``float`` for scalar input.  Exponents whose magnitude exceeds
:data:`EXP_GUARD` raise :class:`~endow_opt.errors.OverflowGuardError` rather
than propagating ``inf``.

``beta`` implements ``(exp(kappa*(T-t)) - 1)/kappa`` as written, so
``beta(T) == 0`` (not 1); this is what makes ``optimal_wealth`` at ``t=T``
coincide with the optimal terminal wealth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError, OverflowGuardError
from .model import ProblemSpec

EXP_GUARD = 700.0
# below this |kappa*tau| the two-term series is exact to double precision
SERIES_CUTOFF = 1e-12


def _out(x, *inputs):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 and all(np.ndim(i) == 0 for i in inputs):
        return float(x)
    return x


def _guard(exponent, what: str):
    exponent = np.asarray(exponent, dtype=float)
    if not np.all(np.isfinite(exponent)) or np.any(np.abs(exponent) > EXP_GUARD):
        worst = np.nanmax(np.abs(exponent)) if exponent.size else np.nan
        raise OverflowGuardError(
            f"exponent in {what} exceeds guard {EXP_GUARD:g} (|max| = {worst:.4g})"
        )
    return exponent


def _exp(exponent, what: str):
    return np.exp(_guard(exponent, what))


def _finite_or_raise(x, what: str):
    if not np.all(np.isfinite(x)):
        raise OverflowGuardError(f"non-finite result in {what}")
    return x


def _times(spec: ProblemSpec, t):
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)) or np.any(t < 0.0) or np.any(t > spec.T):
        raise DomainError(
            f"time must lie in [0, T={spec.T:g}]", code="TimeOutOfRange"
        )
    return t


def _positive(x, name: str, code: str):
    x = np.asarray(x, dtype=float)
    if not np.all(x > 0.0) or not np.all(np.isfinite(x)):
        raise DomainError(f"{name} must be finite and > 0", code=code)
    return x


def growth_ratio(kappa: float, tau):
    """Stable ``(exp(kappa*tau) - 1)/kappa`` including the ``kappa -> 0`` limit."""
    tau = np.asarray(tau, dtype=float)
    z = _guard(kappa * tau, "growth_ratio")
    if kappa == 0.0:
        return tau.copy()
    small = np.abs(z) < SERIES_CUTOFF
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(small, tau * (1.0 + 0.5 * z), np.expm1(z) / kappa)
    return _finite_or_raise(out, "growth_ratio")


def dual_rate(spec: ProblemSpec) -> float:
    g = spec.gamma
    return (1.0 - g) / g * (spec.r + spec.theta**2 / (2.0 * g))


# ---------------------------------------------------------------------------
# endowment price and martingale-representation coefficients


def endowment_price(spec: ProblemSpec, t):
    """Arbitrage-free price ``P_t = E[int_0^t E_s H_s ds]`` of the endowment."""
    t = _times(spec, t)
    return _out(spec.e0 * growth_ratio(spec.kappa, t), t)


def beta(spec: ProblemSpec, t):
    """Coefficient of ``E_t`` in the optimal wealth; ``beta(T) = 0``."""
    t = _times(spec, t)
    return _out(growth_ratio(spec.kappa, spec.T - t), t)


def alpha(spec: ProblemSpec, t):
    """``(x + P_T) exp(-rho t)``."""
    t = _times(spec, t)
    eff = effective_wealth(spec)
    return _out(_finite_or_raise(eff * _exp(-dual_rate(spec) * t, "alpha"), "alpha"), t)


def effective_wealth(spec: ProblemSpec) -> float:
    """Initial wealth plus the price of the whole endowment stream."""
    return spec.x0 + endowment_price(spec, spec.T)


# ---------------------------------------------------------------------------
# utility and its dual


def utility(spec: ProblemSpec, w):
    w = _positive(w, "wealth", "WealthNonPositive")
    g = spec.gamma
    with np.errstate(over="ignore"):
        out = np.power(w, 1.0 - g) / (1.0 - g)
    return _out(_finite_or_raise(out, "utility"), w)


def inverse_marginal(spec: ProblemSpec, y):
    """``I(y) = (U')^{-1}(y) = y^{-1/gamma}``."""
    y = _positive(y, "y", "DualArgNonPositive")
    with np.errstate(over="ignore"):
        out = np.power(y, -1.0 / spec.gamma)
    return _out(_finite_or_raise(out, "inverse_marginal"), y)


def dual_utility(spec: ProblemSpec, y):
    """Convex conjugate ``sup_w {U(w) - y w} = gamma/(1-gamma) y^{-(1-gamma)/gamma}``."""
    y = _positive(y, "y", "DualArgNonPositive")
    g = spec.gamma
    with np.errstate(over="ignore"):
        out = g / (1.0 - g) * np.power(y, -(1.0 - g) / g)
    return _out(_finite_or_raise(out, "dual_utility"), y)


# ---------------------------------------------------------------------------
# Lagrange multiplier and terminal wealth


def chi(spec: ProblemSpec, lam):
    """``E[H_T I(lam H_T)] = lam^{-1/gamma} exp(rho T)``; strictly decreasing."""
    lam = _positive(lam, "lam", "MultiplierNonPositive")
    expo = -np.log(lam) / spec.gamma + dual_rate(spec) * spec.T
    return _out(_exp(expo, "chi"), lam)


def lagrange_multiplier(spec: ProblemSpec) -> float:
    """Unique ``lam > 0`` with ``chi(lam) = x + P_T``."""
    g = spec.gamma
    expo = g * dual_rate(spec) * spec.T - g * np.log(effective_wealth(spec))
    return float(_exp(expo, "lagrange_multiplier"))


def optimal_terminal_wealth(spec: ProblemSpec, h_T):
    """Optimal terminal wealth as a function of the realised deflator ``H_T``."""
    h_T = _positive(h_T, "h_T", "DeflatorNonPositive")
    scale = effective_wealth(spec) * float(_exp(-dual_rate(spec) * spec.T, "optimal_terminal_wealth"))
    with np.errstate(over="ignore"):
        out = scale * np.power(h_T, -1.0 / spec.gamma)
    return _out(_finite_or_raise(out, "optimal_terminal_wealth"), h_T)


def optimal_wealth(spec: ProblemSpec, t, h_t, e_t):
    """Optimal wealth ``alpha(t) H_t^{-1/gamma} - beta(t) E_t``."""
    t = _times(spec, t)
    h_t = _positive(h_t, "h_t", "DeflatorNonPositive")
    e_t = _positive(e_t, "e_t", "EndowmentNonPositive")
    with np.errstate(over="ignore"):
        out = alpha(spec, t) * np.power(h_t, -1.0 / spec.gamma) - beta(spec, t) * e_t
    return _out(_finite_or_raise(out, "optimal_wealth"), t, h_t, e_t)


def kstar(spec: ProblemSpec, t, e_t, h_t):
    """Integrand of the optimal deflated gains against ``dW``."""
    t = _times(spec, t)
    e_t = _positive(e_t, "e_t", "EndowmentNonPositive")
    h_t = _positive(h_t, "h_t", "DeflatorNonPositive")
    g, th = spec.gamma, spec.theta
    with np.errstate(over="ignore"):
        out = (th - spec.eta) * beta(spec, t) * e_t * h_t + (1.0 - g) / g * th * alpha(
            spec, t
        ) * np.power(h_t, -(1.0 - g) / g)
    return _out(_finite_or_raise(out, "kstar"), t, e_t, h_t)


# ---------------------------------------------------------------------------
# strategy


def merton_fraction(spec: ProblemSpec) -> float:
    """``theta / (gamma sigma)``: optimal fraction without endowment."""
    return spec.theta / (spec.gamma * spec.sigma)


def shift_scale(spec: ProblemSpec) -> float:
    """``pi_M - eta/sigma``, written as ``(theta - gamma eta)/(gamma sigma)`` so
    it is exactly zero when ``theta == gamma*eta``."""
    return (spec.theta - spec.gamma * spec.eta) / (spec.gamma * spec.sigma)


def optimal_fraction(spec: ProblemSpec, t, wealth, endow):
    """Optimal risky fraction in feedback form.

    ``pi_M + beta(t) * shift_scale * endow / wealth``.  Undefined for
    non-positive wealth.
    """
    t = _times(spec, t)
    wealth = np.asarray(wealth, dtype=float)
    if not np.all(wealth > 0.0):
        raise DomainError("wealth must be > 0 for the optimal fraction", code="WealthNonPositive")
    endow = _positive(endow, "endow", "EndowmentNonPositive")
    out = merton_fraction(spec) + beta(spec, t) * shift_scale(spec) * (endow / wealth)
    return _out(_finite_or_raise(out, "optimal_fraction"), t, wealth, endow)


# ---------------------------------------------------------------------------
# values


def primal_value(spec: ProblemSpec) -> float:
    """Optimal expected utility ``E[U(xi*)]``.

    ``(x+P_T)^{1-gamma}/(1-gamma) * exp((1-gamma)(r + theta^2/(2 gamma)) T)``.
    """
    g = spec.gamma
    expo = (1.0 - g) * np.log(effective_wealth(spec)) + g * dual_rate(spec) * spec.T
    return float(_exp(expo, "primal_value") / (1.0 - g))


def dual_value(spec: ProblemSpec, lam) -> float:
    """Dual objective ``E[U~(lam H_T)] + lam (x + P_T)``."""
    lam = _positive(lam, "lam", "MultiplierNonPositive")
    g = spec.gamma
    expo = -(1.0 - g) / g * np.log(lam) + dual_rate(spec) * spec.T
    out = g / (1.0 - g) * _exp(expo, "dual_value") + lam * effective_wealth(spec)
    return _out(_finite_or_raise(out, "dual_value"), lam)


# ---------------------------------------------------------------------------
# bundles


@dataclass(frozen=True)
class DualSolution:
    lagrange_multiplier: float
    endow_price_T: float
    effective_wealth: float


def solve_dual(spec: ProblemSpec) -> DualSolution:
    p_T = endowment_price(spec, spec.T)
    return DualSolution(
        lagrange_multiplier=lagrange_multiplier(spec),
        endow_price_T=p_T,
        effective_wealth=spec.x0 + p_T,
    )


@dataclass(frozen=True)
class StrategyCoefficients:
    pi_merton: float
    shift_scale: float
    beta_fn: Callable
    alpha_fn: Callable


def strategy_coefficients(spec: ProblemSpec) -> StrategyCoefficients:
    return StrategyCoefficients(
        pi_merton=merton_fraction(spec),
        shift_scale=shift_scale(spec),
        beta_fn=lambda t: beta(spec, t),
        alpha_fn=lambda t: alpha(spec, t),
    )
