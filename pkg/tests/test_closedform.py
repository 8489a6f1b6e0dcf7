"""Closed forms against frozen oracles, plus property-based invariants."""

import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from endow_opt import DomainError, OverflowGuardError, make_spec
from endow_opt import closedform as cf
from endow_opt import simulate as sm
from endow_opt import verify as vf

from oracles import FROZEN, mp_alpha, mp_growth, mp_price

ORACLES = json.loads(FROZEN.read_text())
ZERO = dict(r=0.0, lambda_excess=0.0, sigma=0.2, mu=0.0, eta=0.1, e0=1.0, gamma=2.0, x0=1.0, horizon_T=1.0)


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


# ---------------------------------------------------------------------------
# endowment price, beta, alpha


def test_price_kappa_zero_is_linear():
    spec = make_spec(**ZERO)
    assert spec.kappa == 0.0
    assert cf.endowment_price(spec, 0.5) == 0.5
    np.testing.assert_array_equal(cf.endowment_price(spec, np.array([0.0, 0.25, 1.0])), [0.0, 0.25, 1.0])


def test_price_at_zero():
    assert cf.endowment_price(make_spec(), 0.0) == 0.0


def test_price_matches_quadrature():
    o = ORACLES["price_kappa_0.1_t1"]
    spec = make_spec(**{**ZERO, "mu": 0.1})
    assert spec.kappa == 0.1
    assert rel(cf.endowment_price(spec, 1.0), o["quad"]) < 1e-12
    assert rel(o["quad"], o["mp"]) < 1e-12


def test_price_nondecreasing():
    spec = make_spec(mu=-0.2)
    p = cf.endowment_price(spec, np.linspace(0, spec.T, 201))
    assert np.all(np.diff(p) > 0)


def test_beta_kappa_zero():
    spec = make_spec(**{**ZERO, "horizon_T": 3.0})
    t = np.linspace(0, 3.0, 7)
    np.testing.assert_allclose(cf.beta(spec, t), 3.0 - t, rtol=1e-12, atol=0)


def test_beta_vanishes_at_horizon():
    for spec in (make_spec(), make_spec(**ZERO), make_spec(mu=0.5)):
        assert cf.beta(spec, spec.T) == 0.0


def test_beta_high_precision():
    o = ORACLES["beta_kappa_0.05_T2_t1"]
    spec = make_spec(**{**ZERO, "mu": 0.05, "horizon_T": 2.0})
    assert rel(cf.beta(spec, 1.0), o["mp"]) < 1e-14


def test_series_branch_matches_mpmath():
    # |kappa tau| below the cutoff goes through the two-term series
    for kappa in (1e-14, -3e-13, 5e-15):
        assert rel(cf.growth_ratio(kappa, 2.0), float(mp_growth(kappa, 2.0))) < 1e-15
    assert cf.growth_ratio(0.0, 2.5) == 2.5


def test_alpha_at_zero_is_effective_wealth():
    spec = make_spec()
    assert cf.alpha(spec, 0.0) == cf.effective_wealth(spec)


def test_alpha_constant_when_rates_vanish():
    spec = make_spec(**ZERO)
    np.testing.assert_array_equal(cf.alpha(spec, np.linspace(0, 1, 5)), cf.effective_wealth(spec))


def test_alpha_high_precision():
    o = ORACLES["alpha_gamma2"]
    spec = make_spec(r=0.02, lambda_excess=0.04, sigma=0.2, gamma=2.0, mu=0.05, horizon_T=1.0)
    spec = spec.replace(x0=2.0 - cf.endowment_price(spec, 1.0))
    eff = cf.effective_wealth(spec)
    assert rel(cf.alpha(spec, 1.0), float(mp_alpha(eff, 0.02, spec.theta, 2.0, 1.0))) < 1e-13
    assert rel(o["mp"], 2.0 * math.exp(0.5 * (0.02 + 0.01))) < 1e-15


# ---------------------------------------------------------------------------
# multiplier, chi, terminal wealth


def test_lagrange_zero_rates():
    assert cf.lagrange_multiplier(make_spec(**ZERO)) == pytest.approx(0.25, rel=1e-15)


def test_lagrange_unit_effective_wealth():
    spec = make_spec(e0=0.01, horizon_T=2.0)
    spec = spec.replace(x0=1.0 - cf.endowment_price(spec, spec.T))
    expected = math.exp((1 - spec.gamma) * (spec.r + spec.theta**2 / (2 * spec.gamma)) * spec.T)
    assert rel(cf.lagrange_multiplier(spec), expected) < 1e-12


def test_default_dual_solution_frozen():
    o = ORACLES["default"]
    spec = make_spec()
    sol = cf.solve_dual(spec)
    assert rel(sol.endow_price_T, o["endow_price_T"]) < 1e-13
    assert rel(sol.lagrange_multiplier, o["lagrange_multiplier"]) < 1e-12
    assert sol.effective_wealth == spec.x0 + sol.endow_price_T
    assert rel(sol.endow_price_T, float(mp_price(spec.e0, spec.kappa, spec.T))) < 1e-13


def test_chi_trivial_and_foc():
    assert cf.chi(make_spec(**ZERO), 1.0) == 1.0
    spec = make_spec()
    assert rel(cf.chi(spec, cf.lagrange_multiplier(spec)), cf.effective_wealth(spec)) < 1e-10


def test_chi_monte_carlo_oracle():
    o = ORACLES["chi_mc"]
    spec = make_spec(r=o["r"], lambda_excess=o["theta"] * 0.2, sigma=0.2, gamma=o["gamma"], horizon_T=o["T"])
    assert abs(cf.chi(spec, o["lam"]) - o["mean"]) <= 3 * o["se"]


def test_chi_rejects_nonpositive():
    with pytest.raises(DomainError):
        cf.chi(make_spec(), 0.0)


def test_utility_family():
    spec = make_spec(gamma=2.0)
    assert cf.utility(spec, 1.0) == -1.0
    for g in (0.5, 2.0, 7.0):
        s = make_spec(gamma=g)
        assert cf.utility(s, 1.0) == pytest.approx(1 / (1 - g))
        assert cf.inverse_marginal(s, 1.0) == 1.0
    with pytest.raises(DomainError):
        cf.utility(spec, 0.0)
    with pytest.raises(DomainError):
        cf.inverse_marginal(spec, -1.0)


@pytest.mark.parametrize("gamma", [0.3, 0.7, 2.0, 5.0])
def test_fenchel_young_grid(gamma):
    spec = make_spec(gamma=gamma)
    y = np.geomspace(1e-3, 1e3, 61)[:, None]
    w = np.geomspace(1e-3, 1e3, 61)[None, :]
    lhs = cf.dual_utility(spec, y)
    rhs = cf.utility(spec, w) - y * w
    assert np.all(lhs >= rhs - 1e-12 * np.abs(rhs))
    # equality at w = I(y): the conjugate is a maximum, not just a bound
    y1 = y[:, 0]
    at = cf.utility(spec, cf.inverse_marginal(spec, y1)) - y1 * cf.inverse_marginal(spec, y1)
    np.testing.assert_allclose(cf.dual_utility(spec, y1), at, rtol=1e-12)


def test_terminal_wealth_degenerate_market():
    spec = make_spec(**ZERO)
    np.testing.assert_allclose(cf.optimal_terminal_wealth(spec, np.array([1.0, 1.0])), cf.effective_wealth(spec),
                               rtol=1e-15)
    assert cf.optimal_terminal_wealth(spec, 1.0) == pytest.approx(cf.effective_wealth(spec), rel=1e-15)


def test_terminal_wealth_budget_oracle():
    o = ORACLES["default"]["budget_xi_H_mc"]
    spec = make_spec()
    assert abs(cf.effective_wealth(spec) - o["target"]) < 1e-12
    assert abs(o["mean"] - o["target"]) <= 3 * o["se"]
    # the package's own paths reproduce the identity too
    ens = sm.generate_paths(spec, sm.GridConfig(1, 100_000, 7))
    m, se, _ = vf.mean_se(cf.optimal_terminal_wealth(spec, ens.H[:, -1]) * ens.H[:, -1])
    assert abs(m - cf.effective_wealth(spec)) <= 3 * se


# ---------------------------------------------------------------------------
# optimal wealth, K*, strategy


def test_initial_wealth_consistency():
    spec = make_spec()
    assert rel(cf.optimal_wealth(spec, 0.0, 1.0, spec.e0), spec.x0) < 1e-12


def test_terminal_consistency():
    spec = make_spec()
    h = np.geomspace(0.05, 20.0, 17)
    np.testing.assert_allclose(cf.optimal_wealth(spec, spec.T, h, 3.0), cf.optimal_terminal_wealth(spec, h),
                               rtol=1e-12)


def test_optimal_wealth_positive_on_default_paths():
    spec = make_spec()
    ens = sm.generate_paths(spec, sm.GridConfig(64, 20_000, 11))
    x = cf.optimal_wealth(spec, ens.times[None, :], ens.H, ens.E)
    assert np.all(x > 0)


def test_kstar_special_cases():
    spec = make_spec(lambda_excess=0.0625, eta=0.125, sigma=0.5)  # theta = eta, dyadic so exact
    assert spec.theta == spec.eta
    g = spec.gamma
    t, e, h = 2.0, 0.7, 0.8
    expected = (1 - g) / g * spec.theta * cf.alpha(spec, t) * h ** (-(1 - g) / g)
    assert rel(cf.kstar(spec, t, e, h), expected) < 1e-14
    spec0 = make_spec(lambda_excess=0.0)
    assert rel(cf.kstar(spec0, t, e, h), -spec0.eta * cf.beta(spec0, t) * e * h) < 1e-14


def test_kstar_algebraic_identity_default():
    spec = make_spec()
    ens = sm.generate_paths(spec, sm.GridConfig(16, 2000, 5))
    t = ens.times[None, :-1]
    h, e = ens.H[:, :-1], ens.E[:, :-1]
    x = cf.optimal_wealth(spec, t, h, e)
    pi = cf.optimal_fraction(spec, t, x, e)
    lhs = spec.sigma * pi * x * h - spec.theta * x * h
    k = cf.kstar(spec, t, e, h)
    scale = np.abs(spec.sigma * pi * x * h) + np.abs(spec.theta * x * h)
    assert np.max(np.abs(lhs - k) / scale) < 1e-10


def test_shift_vanishes_on_boundary():
    # dyadic inputs so theta == gamma * eta holds exactly in binary
    spec = make_spec(lambda_excess=0.125, sigma=0.5, gamma=2.0, eta=0.125)
    assert cf.shift_scale(spec) == 0.0
    pi = cf.optimal_fraction(spec, np.array([0.0, 5.0]), np.array([0.1, 4.0]), np.array([2.0, 0.3]))
    np.testing.assert_array_equal(pi, cf.merton_fraction(spec))


def test_fraction_tends_to_merton():
    spec = make_spec()
    pis = [cf.optimal_fraction(spec, 1.0, 1.0, r) for r in (1e-2, 1e-5, 1e-9)]
    gaps = np.abs(np.array(pis) - cf.merton_fraction(spec))
    assert np.all(np.diff(gaps) < 0) and gaps[-1] < 1e-7


def test_fraction_hand_arithmetic():
    spec = make_spec(r=0.0, sigma=0.2, lambda_excess=0.04, gamma=2.0, eta=0.05, mu=0.01, horizon_T=3.0)
    assert cf.merton_fraction(spec) == pytest.approx(0.5, rel=1e-15)
    assert cf.shift_scale(spec) == pytest.approx(0.25, rel=1e-14)
    assert cf.beta(spec, 2.0) == pytest.approx(1.0, rel=1e-12)
    assert cf.optimal_fraction(spec, 2.0, 1.0, 0.4) == pytest.approx(0.6, rel=1e-12)


def test_fraction_rejects_nonpositive_wealth():
    with pytest.raises(DomainError) as exc:
        cf.optimal_fraction(make_spec(), 1.0, np.array([1.0, 0.0]), 1.0)
    assert exc.value.code == "WealthNonPositive"


def test_strategy_coefficients():
    spec = make_spec()
    c = cf.strategy_coefficients(spec)
    assert c.pi_merton == spec.theta / (spec.gamma * spec.sigma)
    assert c.shift_scale == pytest.approx(c.pi_merton - spec.eta / spec.sigma, rel=1e-14)
    b = c.beta_fn(np.linspace(0, spec.T, 50))
    assert np.all(np.diff(b) < 0) and np.all(b[:-1] > 0) and b[-1] == 0.0
    assert c.alpha_fn(0.0) == cf.effective_wealth(spec)


# ---------------------------------------------------------------------------
# values


def test_values_degenerate_market():
    spec = make_spec(**{**ZERO, "x0": 0.5, "e0": 0.5})
    assert cf.effective_wealth(spec) == 1.0
    assert cf.lagrange_multiplier(spec) == 1.0
    assert cf.primal_value(spec) == pytest.approx(1 / (1 - spec.gamma), rel=1e-15)
    assert cf.dual_value(spec, 1.0) == pytest.approx(spec.gamma / (1 - spec.gamma) + 1, rel=1e-15)


def test_primal_value_oracles():
    o = ORACLES["default"]
    v = cf.primal_value(make_spec())
    assert rel(v, o["primal_value_mp"]) < 1e-12
    assert rel(v, o["primal_value_gh"]) < 1e-10
    assert abs(v - o["primal_value_mc"]["mean"]) <= 3 * o["primal_value_mc"]["se"]


def test_strong_duality_and_argmin():
    spec = make_spec()
    lam = cf.lagrange_multiplier(spec)
    p = cf.primal_value(spec)
    assert abs(cf.dual_value(spec, lam) - p) <= 1e-10 * abs(p)
    assert rel(vf.dual_argmin(spec), lam) < 1e-6
    for f in (0.5, 0.9, 1.1, 2.0):
        assert cf.dual_value(spec, f * lam) > p


# ---------------------------------------------------------------------------
# guards


def test_overflow_is_typed():
    spec = make_spec(mu=1000.0)
    with pytest.raises(OverflowGuardError) as exc:
        cf.endowment_price(spec, spec.T)
    assert exc.value.code == "Overflow"
    with pytest.raises(OverflowGuardError):
        cf.lagrange_multiplier(spec)


def test_time_out_of_range():
    spec = make_spec()
    for t in (-1e-9, spec.T * 1.0001, math.nan):
        with pytest.raises(DomainError) as exc:
            cf.beta(spec, t)
        assert exc.value.code == "TimeOutOfRange"


# ---------------------------------------------------------------------------
# property-based invariants


@st.composite
def specs(draw):
    gamma = draw(st.floats(0.3, 10.0).filter(lambda g: abs(g - 1.0) >= 0.05))
    return make_spec(
        r=draw(st.floats(-0.01, 0.06)),
        lambda_excess=draw(st.floats(-0.08, 0.12)),
        sigma=draw(st.floats(0.1, 0.5)),
        mu=draw(st.floats(-0.05, 0.10)),
        eta=draw(st.floats(0.02, 0.5)),
        e0=draw(st.floats(0.01, 10.0)),
        gamma=gamma,
        x0=draw(st.floats(0.1, 100.0)),
        horizon_T=draw(st.floats(0.1, 30.0)),
    )


PROPS = settings(max_examples=150, deadline=None)


@PROPS
@given(specs())
def test_beta_strictly_decreasing_and_positive(spec):
    t = np.linspace(0.0, spec.T, 257)
    b = cf.beta(spec, t)
    assert np.all(np.diff(b) < 0)
    assert np.all(b[:-1] > 0) and b[-1] == 0.0


@PROPS
@given(specs(), st.floats(0.0, 1.0))
def test_beta_derivative(spec, frac):
    t = frac * spec.T
    h = 1e-6 * spec.T
    lo, hi = max(t - h, 0.0), min(t + h, spec.T)
    fd = (cf.beta(spec, hi) - cf.beta(spec, lo)) / (hi - lo)
    exact = -math.exp(spec.kappa * (spec.T - (hi + lo) / 2))
    assert abs(fd - exact) <= 1e-6 * abs(exact)


@PROPS
@given(specs())
def test_bridge_identity(spec):
    assert rel(cf.endowment_price(spec, spec.T), spec.e0 * cf.beta(spec, 0.0)) < 1e-12


@PROPS
@given(specs())
def test_initial_condition(spec):
    assert rel(cf.optimal_wealth(spec, 0.0, 1.0, spec.e0), spec.x0) < 1e-12 * max(1.0, cf.effective_wealth(spec) / spec.x0)


@PROPS
@given(specs(), st.floats(-3.0, 3.0), st.floats(0.01, 100.0))
def test_terminal_and_two_route_agreement(spec, log_h, e):
    h = math.exp(log_h)
    xi = cf.optimal_terminal_wealth(spec, h)
    assert rel(cf.inverse_marginal(spec, cf.lagrange_multiplier(spec) * h), xi) < 1e-12
    assert rel(cf.optimal_wealth(spec, spec.T, h, e), xi) < 1e-12


@PROPS
@given(specs(), st.floats(-4.0, 4.0), st.floats(-4.0, 4.0))
def test_chi_decreasing_and_weak_duality(spec, a, b):
    assume(abs(a - b) > 1e-3)
    lam = cf.lagrange_multiplier(spec)
    l1, l2 = lam * math.exp(min(a, b)), lam * math.exp(max(a, b))
    assert cf.chi(spec, l1) > cf.chi(spec, l2)
    p = cf.primal_value(spec)
    for l in (l1, l2):
        assert cf.dual_value(spec, l) >= p - 1e-12 * abs(p)
    assert abs(cf.dual_value(spec, lam) - p) <= 1e-10 * abs(p)
    assert rel(cf.chi(spec, lam), cf.effective_wealth(spec)) < 1e-10


@PROPS
@given(specs(), st.floats(0.0, 0.999), st.floats(0.01, 100.0), st.floats(0.01, 100.0))
def test_shift_sign_law(spec, frac, wealth, endow):
    t = frac * spec.T
    d = cf.optimal_fraction(spec, t, wealth, endow) - cf.merton_fraction(spec)
    assert np.sign(d) == np.sign(spec.theta - spec.gamma * spec.eta)
