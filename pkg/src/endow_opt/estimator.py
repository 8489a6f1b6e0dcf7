"""scikit-learn style policy estimators.

A policy is "fitted" by validating its parameters and solving the dual
problem; ``predict`` maps state rows ``[t, wealth, endowment]`` to a risky
fraction.  Because the classes follow the ``BaseEstimator`` conventions they
work with ``clone``, ``get_params``/``set_params`` and grid utilities, and a
fitted policy can drive the simulator through
:func:`endow_opt.simulate.feedback`.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import closedform as cf
from .errors import DomainError
from .model import ProblemSpec, make_spec

STATE_COLUMNS = ("t", "wealth", "endowment")


def check_state(X, spec: ProblemSpec, *, positive_wealth: bool = True) -> np.ndarray:
    """Validate an ``(n, 3)`` state array ``[t, wealth, endowment]``."""
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if X.shape[1] != 3:
        raise ValueError(f"expected 3 columns {STATE_COLUMNS}, got {X.shape[1]}")
    t, w, e = X.T
    if np.any(t < 0.0) or np.any(t > spec.T):
        raise DomainError(f"t must lie in [0, {spec.T:g}]", code="TimeOutOfRange")
    if positive_wealth and np.any(w <= 0.0):
        raise DomainError("wealth must be > 0", code="WealthNonPositive")
    if np.any(e <= 0.0):
        raise DomainError("endowment must be > 0", code="EndowmentNonPositive")
    return X


class EndowmentPolicy(BaseEstimator):
    """Optimal risky-fraction policy for a power-utility agent with a
    geometric Brownian endowment.

    Parameters
    ----------
    r, lambda_excess, sigma : market parameters (annualised).
    mu, eta, e0 : endowment drift, volatility and initial rate.
    gamma, x0, horizon_T : risk aversion, initial wealth, horizon in years.

    Attributes
    ----------
    spec_ : ProblemSpec
    lagrange_multiplier_ : float
    endowment_price_ : float
        Price of the endowment over the whole horizon.
    pi_merton_, shift_scale_ : float
    """

    def __init__(
        self,
        r: float = 0.02,
        lambda_excess: float = 0.04,
        sigma: float = 0.2,
        mu: float = 0.03,
        eta: float = 0.1,
        e0: float = 0.5,
        gamma: float = 3.0,
        x0: float = 1.0,
        horizon_T: float = 10.0,
    ):
        self.r = r
        self.lambda_excess = lambda_excess
        self.sigma = sigma
        self.mu = mu
        self.eta = eta
        self.e0 = e0
        self.gamma = gamma
        self.x0 = x0
        self.horizon_T = horizon_T

    @classmethod
    def from_spec(cls, spec: ProblemSpec) -> "EndowmentPolicy":
        flat = {k: v for section in spec.to_dict().values() for k, v in section.items()}
        return cls(**flat)

    def fit(self, X=None, y=None):
        """Validate parameters and solve the dual problem.  ``X`` and ``y``
        are ignored (the policy is fully determined by its parameters)."""
        self.spec_ = make_spec(**self.get_params())
        dual = cf.solve_dual(self.spec_)
        self.lagrange_multiplier_ = dual.lagrange_multiplier
        self.endowment_price_ = dual.endow_price_T
        self.pi_merton_ = cf.merton_fraction(self.spec_)
        self.shift_scale_ = cf.shift_scale(self.spec_)
        self.n_features_in_ = 3
        return self

    def predict(self, X) -> np.ndarray:
        """Risky fraction for each state row ``[t, wealth, endowment]``."""
        check_is_fitted(self, "spec_")
        X = check_state(X, self.spec_)
        return np.asarray(cf.optimal_fraction(self.spec_, X[:, 0], X[:, 1], X[:, 2]))

    def optimal_wealth(self, X) -> np.ndarray:
        """Optimal wealth for rows ``[t, deflator, endowment]``."""
        check_is_fitted(self, "spec_")
        X = check_array(X, dtype=np.float64)
        return np.asarray(cf.optimal_wealth(self.spec_, X[:, 0], X[:, 1], X[:, 2]))

    def terminal_wealth(self, h_T) -> np.ndarray:
        check_is_fitted(self, "spec_")
        return np.asarray(cf.optimal_terminal_wealth(self.spec_, np.asarray(h_T, dtype=float)))


class MertonPolicy(EndowmentPolicy):
    """Ignores the endowment: always invests the Merton fraction."""

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "spec_")
        X = check_state(X, self.spec_)
        return np.full(X.shape[0], self.pi_merton_)
