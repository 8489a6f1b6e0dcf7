"""Parameter containers for the market, the endowment and the agent.

All rates are annualised and time is measured in years.  ``e0`` is an
endowment *rate*: it enters wealth as ``E_t dt``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping

from .errors import ValidationError

# field name -> prefix used in error codes
_CODE_NAMES = {
    "r": "Rate",
    "lambda_excess": "LambdaExcess",
    "sigma": "Sigma",
    "mu": "Mu",
    "eta": "Eta",
    "e0": "E0",
    "gamma": "Gamma",
    "x0": "X0",
    "horizon_T": "Horizon",
}


def _finite(obj: Any, section: str) -> None:
    for name, value in asdict(obj).items():
        try:
            ok = math.isfinite(value)
        except TypeError:
            ok = False
        if not ok or isinstance(value, bool):
            raise ValidationError(
                f"{section}.{name} must be a finite number, got {value!r}",
                code=f"{_CODE_NAMES[name]}NonFinite",
                field=f"{section}.{name}",
            )


def _positive(value: float, name: str, section: str) -> None:
    if not value > 0:
        raise ValidationError(
            f"{section}.{name} must be > 0, got {value!r}",
            code=f"{_CODE_NAMES[name]}NonPositive",
            field=f"{section}.{name}",
        )


@dataclass(frozen=True)
class MarketParams:
    """Black-Scholes market: risk-free rate, excess return, volatility."""

    r: float
    lambda_excess: float
    sigma: float

    def __post_init__(self):
        _finite(self, "market")
        _positive(self.sigma, "sigma", "market")


@dataclass(frozen=True)
class EndowmentParams:
    """Geometric Brownian endowment rate ``dE = mu E dt + eta E dW``."""

    mu: float
    eta: float
    e0: float

    def __post_init__(self):
        _finite(self, "endowment")
        _positive(self.eta, "eta", "endowment")
        _positive(self.e0, "e0", "endowment")


@dataclass(frozen=True)
class AgentParams:
    """CRRA agent: risk aversion ``gamma``, initial wealth, horizon."""

    gamma: float
    x0: float
    horizon_T: float

    def __post_init__(self):
        _finite(self, "agent")
        _positive(self.gamma, "gamma", "agent")
        if self.gamma == 1.0:
            raise ValidationError(
                "agent.gamma = 1 (log utility) is not supported; "
                "gamma must lie in (0, 1) or (1, inf)",
                code="GammaExcluded",
                field="agent.gamma",
            )
        _positive(self.x0, "x0", "agent")
        _positive(self.horizon_T, "horizon_T", "agent")


def market_price_of_risk(market: MarketParams) -> float:
    """Excess return per unit of volatility, ``lambda_excess / sigma``."""
    return market.lambda_excess / market.sigma


@dataclass(frozen=True)
class ProblemSpec:
    """Complete problem description with derived quantities.

    ``theta`` (market price of risk) and ``kappa = mu - r - eta*theta`` are
    computed once here so every consumer sees bit-identical values.
    """

    market: MarketParams
    endowment: EndowmentParams
    agent: AgentParams
    theta: float = field(init=False)
    kappa: float = field(init=False)

    def __post_init__(self):
        for name, cls in (
            ("market", MarketParams),
            ("endowment", EndowmentParams),
            ("agent", AgentParams),
        ):
            if not isinstance(getattr(self, name), cls):
                raise ValidationError(
                    f"{name} must be a {cls.__name__}", code="BadType", field=name
                )
        theta = market_price_of_risk(self.market)
        kappa = self.endowment.mu - self.market.r - self.endowment.eta * theta
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "kappa", kappa)

    # flat accessors; closed forms read these constantly
    @property
    def r(self) -> float:
        return self.market.r

    @property
    def sigma(self) -> float:
        return self.market.sigma

    @property
    def mu(self) -> float:
        return self.endowment.mu

    @property
    def eta(self) -> float:
        return self.endowment.eta

    @property
    def e0(self) -> float:
        return self.endowment.e0

    @property
    def gamma(self) -> float:
        return self.agent.gamma

    @property
    def x0(self) -> float:
        return self.agent.x0

    @property
    def T(self) -> float:
        return self.agent.horizon_T

    def to_dict(self) -> dict[str, dict[str, float]]:
        return {
            "market": asdict(self.market),
            "endowment": asdict(self.endowment),
            "agent": asdict(self.agent),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Mapping[str, float]]) -> "ProblemSpec":
        return validate(data["market"], data["endowment"], data["agent"])

    def replace(self, **changes: float) -> "ProblemSpec":
        """Copy with some flat parameters changed (``gamma=2.0``, ``e0=...``)."""
        d = self.to_dict()
        for key, value in changes.items():
            for section in d.values():
                if key in section:
                    section[key] = value
                    break
            else:
                raise ValidationError(f"unknown parameter {key!r}", code="UnknownKey", field=key)
        return ProblemSpec.from_dict(d)


def _build(cls, value, section):
    if isinstance(value, cls):
        return value
    if not isinstance(value, Mapping):
        raise ValidationError(f"{section} must be a mapping", code="BadType", field=section)
    names = set(cls.__dataclass_fields__)
    unknown = set(value) - names
    if unknown:
        key = sorted(unknown)[0]
        raise ValidationError(
            f"unknown key {section}.{key}", code="UnknownKey", field=f"{section}.{key}"
        )
    missing = names - set(value)
    if missing:
        key = sorted(missing)[0]
        raise ValidationError(
            f"missing key {section}.{key}", code="MissingKey", field=f"{section}.{key}"
        )
    return cls(**value)


def validate(market, endowment, agent) -> ProblemSpec:
    """Build a :class:`ProblemSpec` from parameter objects or plain mappings.

    Raises
    ------
    ValidationError
        With a field-specific ``code`` (``SigmaNonPositive``, ``GammaExcluded``,
        ``E0NonFinite``, ...) for the first offending input.
    """
    return ProblemSpec(
        _build(MarketParams, market, "market"),
        _build(EndowmentParams, endowment, "endowment"),
        _build(AgentParams, agent, "agent"),
    )


def make_spec(
    r: float = 0.02,
    lambda_excess: float = 0.04,
    sigma: float = 0.2,
    mu: float = 0.03,
    eta: float = 0.1,
    e0: float = 0.5,
    gamma: float = 3.0,
    x0: float = 1.0,
    horizon_T: float = 10.0,
) -> ProblemSpec:
    """Flat-keyword constructor; the defaults are the shipped example config."""
    return validate(
        MarketParams(r, lambda_excess, sigma),
        EndowmentParams(mu, eta, e0),
        AgentParams(gamma, x0, horizon_T),
    )
