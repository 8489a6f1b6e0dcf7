"""Independent oracles for the closed forms.

Nothing here imports ``endow_opt``.  The functions use high-precision
arithmetic (mpmath), adaptive quadrature (scipy) or plain Monte Carlo on a
generator unrelated to the package's Philox streams.  Running the module
regenerates ``data/oracles.json``; the tests compare against the frozen file
so a silent change in either side is caught.

    python3 tests/oracles.py
"""

from __future__ import annotations

import json
from pathlib import Path

import mpmath as mp
import numpy as np
from scipy import integrate

mp.mp.dps = 50
FROZEN = Path(__file__).parent / "data" / "oracles.json"
MC_PATHS = 100_000


def mp_growth(kappa, tau):
    """``(exp(kappa tau) - 1)/kappa`` with the kappa = 0 limit, in mpmath."""
    kappa, tau = mp.mpf(kappa), mp.mpf(tau)
    if kappa == 0:
        return tau
    return mp.expm1(kappa * tau) / kappa


def mp_rho(r, theta, gamma):
    r, theta, gamma = mp.mpf(r), mp.mpf(theta), mp.mpf(gamma)
    return (1 - gamma) / gamma * (r + theta**2 / (2 * gamma))


def mp_price(e0, kappa, t):
    return mp.mpf(e0) * mp_growth(kappa, t)


def mp_alpha(eff, r, theta, gamma, t):
    return mp.mpf(eff) * mp.exp(-mp_rho(r, theta, gamma) * mp.mpf(t))


def mp_lagrange(eff, r, theta, gamma, T):
    g = mp.mpf(gamma)
    return mp.exp((1 - g) * (mp.mpf(r) + mp.mpf(theta) ** 2 / (2 * g)) * mp.mpf(T)) * mp.mpf(eff) ** (-g)


def quad_price(e0, kappa, t):
    """Adaptive quadrature of ``int_0^t e0 exp(kappa s) ds``."""
    val, _ = integrate.quad(lambda s: e0 * np.exp(kappa * s), 0.0, t, epsabs=0.0, epsrel=1e-13, limit=200)
    return val


def deflator_terminal(rng, r, theta, T, n):
    w = rng.standard_normal(n) * np.sqrt(T)
    return np.exp(-(r + 0.5 * theta**2) * T - theta * w)


def mc_mean(samples):
    samples = np.asarray(samples, dtype=float)
    return float(samples.mean()), float(samples.std(ddof=1) / np.sqrt(samples.size))


def gauss_hermite_expectation(fn, n=200):
    """``E[fn(Z)]`` for standard normal ``Z`` by Gauss-Hermite quadrature."""
    x, w = np.polynomial.hermite_e.hermegauss(n)
    return float(np.sum(w * fn(x)) / np.sqrt(2.0 * np.pi))


# parameter sets shared with the tests ---------------------------------------

CHI_CASE = dict(lam=0.5, gamma=2.0, r=0.02, theta=0.2, T=1.0)
DEFAULT = dict(r=0.02, lambda_excess=0.04, sigma=0.2, mu=0.03, eta=0.1, e0=0.5, gamma=3.0, x0=1.0, horizon_T=10.0)


def default_effective_wealth():
    d = DEFAULT
    theta = d["lambda_excess"] / d["sigma"]
    kappa = d["mu"] - d["r"] - d["eta"] * theta
    return mp.mpf(d["x0"]) + mp_price(d["e0"], kappa, d["horizon_T"])


def build():
    out = {}
    out["price_kappa_0.1_t1"] = {"e0": 1.0, "kappa": 0.1, "t": 1.0, "quad": quad_price(1.0, 0.1, 1.0),
                                 "mp": float(mp_price(1.0, 0.1, 1.0))}
    out["beta_kappa_0.05_T2_t1"] = {"kappa": 0.05, "T": 2.0, "t": 1.0, "mp": float(mp_growth(0.05, 1.0))}
    out["alpha_gamma2"] = {"gamma": 2.0, "r": 0.02, "theta": 0.2, "eff": 2.0, "t": 1.0,
                           "mp": float(mp_alpha(2.0, 0.02, 0.2, 2.0, 1.0))}

    d = DEFAULT
    theta = d["lambda_excess"] / d["sigma"]
    eff = default_effective_wealth()
    rho = mp_rho(d["r"], theta, d["gamma"])
    g, T = d["gamma"], d["horizon_T"]
    out["default"] = {
        "endow_price_T": float(eff - d["x0"]),
        "lagrange_multiplier": float(mp_lagrange(eff, d["r"], theta, g, T)),
        "primal_value_mp": float(eff ** (1 - g) / (1 - g) * mp.exp(g * rho * T)),
    }

    # E[U(xi*)] via Gauss-Hermite over W_T; xi* written from scratch
    def u_xi(z):
        h = np.exp(-(d["r"] + 0.5 * theta**2) * T - theta * np.sqrt(T) * z)
        xi = float(eff) * np.exp(-float(rho) * T) * h ** (-1.0 / g)
        return xi ** (1.0 - g) / (1.0 - g)

    out["default"]["primal_value_gh"] = gauss_hermite_expectation(u_xi)

    rng = np.random.default_rng(987654321)
    h = deflator_terminal(rng, d["r"], theta, T, MC_PATHS)
    xi = float(eff) * np.exp(-float(rho) * T) * h ** (-1.0 / g)
    m, se = mc_mean(xi ** (1.0 - g) / (1.0 - g))
    out["default"]["primal_value_mc"] = {"mean": m, "se": se, "n": MC_PATHS}
    m, se = mc_mean(xi * h)
    out["default"]["budget_xi_H_mc"] = {"mean": m, "se": se, "n": MC_PATHS, "target": float(eff)}

    c = CHI_CASE
    rng = np.random.default_rng(13579)
    h = deflator_terminal(rng, c["r"], c["theta"], c["T"], MC_PATHS)
    m, se = mc_mean(h * (c["lam"] * h) ** (-1.0 / c["gamma"]))
    out["chi_mc"] = {**c, "mean": m, "se": se, "n": MC_PATHS}
    return out


if __name__ == "__main__":
    data = build()
    FROZEN.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    print(json.dumps(data, indent=2, sort_keys=True))
