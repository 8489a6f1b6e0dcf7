"""Statistical and algebraic certification of the closed-form solution.

Statistical checks report an :class:`Estimate` whose pass criterion is
``k * SE`` with ``k = 3``; exact checks report a :class:`Residual` against a
relative tolerance.  Each check is split into a per-path *samples* step and a
*reduce* step so :func:`run_battery` can stream large ensembles in path chunks
and still produce exactly the numbers the single-ensemble functions produce.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from . import closedform as cf
from . import simulate as sm
from .errors import CheckError, DomainError, ValidationError
from .model import ProblemSpec

K_SE = 3.0
ALGEBRAIC_TOL = 1e-10
MAX_EXCLUDED_FRACTION = 0.01
MIN_EFFECTIVE_FRACTION = 0.5
MIN_ORDER = 0.4
ARGMIN_TOL = 1e-6
DOMINANCE_LABEL = "dominance over challenger family"


@dataclass
class Estimate:
    """Monte Carlo estimate with its pass/fail verdict."""

    value: float
    std_error: float
    n_effective: int
    passed: bool
    criterion: str
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _clean({"type": "estimate", **asdict(self)})


@dataclass
class Residual:
    """Exact (non-statistical) residual against a tolerance."""

    value: float
    tolerance: float
    passed: bool
    criterion: str
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _clean({"type": "residual", **asdict(self)})


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def mean_se(samples: np.ndarray) -> tuple[float, float, int]:
    """Sample mean, standard error and count (fixed summation order)."""
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    if n == 0:
        raise CheckError("no valid paths")
    m = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return m, se, n


def _exclusion_ok(n_eff: int, n_total: int) -> bool:
    if n_total == 0:
        return False
    excluded = n_total - n_eff
    return excluded <= MAX_EXCLUDED_FRACTION * n_total and n_eff >= MIN_EFFECTIVE_FRACTION * n_total


def utility_floor(spec: ProblemSpec) -> float:
    """Smallest wealth at which ``U`` is finite, never below the smallest normal."""
    tiny = float(np.finfo(float).tiny)
    g = spec.gamma
    if g <= 1.0:
        return tiny
    # need w^{1-g} <= big (the power itself stays finite) and
    # w^{1-g}/(g-1) <= big, i.e. w^{1-g} <= big * min(1, g-1)
    big = float(np.finfo(float).max) * 0.5
    cap = math.log(big) + min(0.0, math.log(g - 1.0))
    return max(tiny, math.exp(-cap / (g - 1.0)) * (1.0 + 1e-12))


def utility_samples(spec: ProblemSpec, wealth: np.ndarray) -> tuple[np.ndarray, int]:
    """``U(wealth)`` with underflowing wealth floored; returns (values, n_floored)."""
    floor = utility_floor(spec)
    low = wealth < floor
    return cf.utility(spec, np.maximum(wealth, floor)), int(low.sum())


def grid_index(ensemble: sm.PathEnsemble, t: float) -> int:
    k = int(round(t / ensemble.dt))
    if k < 0 or k > ensemble.n_steps or abs(ensemble.times[k] - t) > 1e-12 * max(ensemble.spec.T, 1.0):
        raise DomainError(f"t={t!r} is not a grid time", code="TimeNotOnGrid")
    return k


# ---------------------------------------------------------------------------
# budget constraint


def _budget_samples(ens: sm.PathEnsemble, wealth: sm.WealthPaths, ks: Sequence[int]) -> dict:
    integral = ens.deflated_endowment_integral()
    out = {}
    for k in ks:
        ok = wealth.valid | (wealth.first_violation_index > k)
        y = wealth.X[:, k] * ens.H[:, k] - integral[:, k]
        out[k] = np.where(ok, y, np.nan)
    return out


def _budget_reduce(spec: ProblemSpec, y: np.ndarray, k: int, t: float, martingale: bool, name: str) -> Estimate:
    x0 = spec.x0
    ok = np.isfinite(y)
    if not ok.any():
        raise CheckError(f"budget check for {name}: all paths invalid")
    if k == 0:
        n = int(ok.sum())
        return Estimate(x0, 0.0, n, True, "Y_0 = x0 exactly", {"strategy": name, "t": t})
    m, se, n = mean_se(y[ok])
    passed = m <= x0 + K_SE * se
    crit = "E[Y_t] <= x0 + 3 SE"
    if martingale:
        passed = passed and abs(m - x0) <= K_SE * se
        crit += " and |E[Y_t] - x0| <= 3 SE"
    passed = passed and _exclusion_ok(n, y.size)
    return Estimate(m, se, n, bool(passed), crit,
                    {"strategy": name, "t": t, "x0": x0, "n_excluded": y.size - n})


def budget_check(
    spec: ProblemSpec,
    ensemble: sm.PathEnsemble,
    strategy: sm.Strategy,
    t: float,
    *,
    wealth: sm.WealthPaths | None = None,
) -> Estimate:
    """Monte Carlo estimate of ``E[X_t H_t - int_0^t E H ds]`` against ``x0``.

    Passes iff the estimate is at most ``x0 + 3 SE``; for the optimal strategy
    it must also be within ``3 SE`` of ``x0``.  ``wealth`` may be passed to
    reuse an existing integration.
    """
    k = grid_index(ensemble, t)
    if wealth is None:
        wealth = sm.integrate_wealth(spec, ensemble, strategy)
    y = _budget_samples(ensemble, wealth, [k])[k]
    return _budget_reduce(spec, y, k, float(ensemble.times[k]), strategy.kind == "optimal", strategy.name)


# ---------------------------------------------------------------------------
# first-order condition and duality


def foc_check(spec: ProblemSpec, *, lambda_scale: float = 1.0) -> Residual:
    lam = cf.lagrange_multiplier(spec) * lambda_scale
    eff = cf.effective_wealth(spec)
    res = abs(cf.chi(spec, lam) - eff) / eff
    return Residual(res, ALGEBRAIC_TOL, res <= ALGEBRAIC_TOL, "|chi(lam*) - (x+P_T)|/(x+P_T) <= 1e-10",
                    {"lagrange_multiplier": lam, "lambda_scale": lambda_scale})


def dual_argmin(spec: ProblemSpec) -> float:
    """Numerical minimiser of ``dual_value`` over ``lam`` (bounded Brent in log space)."""
    u0 = math.log(cf.lagrange_multiplier(spec))

    def f(u):
        return cf.dual_value(spec, math.exp(u))

    res = minimize_scalar(f, bounds=(u0 - 5.0, u0 + 5.0), method="bounded",
                          options={"xatol": 1e-11, "maxiter": 500})
    return math.exp(res.x)


def duality_gap(spec: ProblemSpec, *, lambda_scale: float = 1.0) -> Residual:
    """Closed-form duality residual ``dual_value(lam*) - primal_value``.

    Also confirms the argmin of the dual by numerical minimisation and strict
    weak duality at ``0.5 lam*`` and ``2 lam*``.
    """
    lam_star = cf.lagrange_multiplier(spec)
    lam = lam_star * lambda_scale
    primal = cf.primal_value(spec)
    dual = cf.dual_value(spec, lam)
    rel = abs(dual - primal) / abs(primal)
    argmin = dual_argmin(spec)
    argmin_rel = abs(argmin - lam) / lam
    off = {f"{s:g}": cf.dual_value(spec, s * lam_star) - primal for s in (0.5, 2.0)}
    passed = rel <= ALGEBRAIC_TOL and argmin_rel <= ARGMIN_TOL and all(v > 0 for v in off.values())
    return Residual(
        rel, ALGEBRAIC_TOL, bool(passed),
        "|dual(lam*) - primal|/|primal| <= 1e-10; numerical argmin within 1e-6; dual(0.5 lam*), dual(2 lam*) > primal",
        {"primal": primal, "dual": dual, "lagrange_multiplier": lam, "lambda_scale": lambda_scale,
         "numerical_argmin": argmin, "argmin_rel_error": argmin_rel, "weak_duality_excess": off},
    )


def _duality_samples(spec: ProblemSpec, h_T: np.ndarray, lam: float) -> dict:
    xi = cf.optimal_terminal_wealth(spec, h_T)
    u, _ = utility_samples(spec, xi)
    d = cf.dual_utility(spec, lam * h_T) + lam * cf.effective_wealth(spec)
    return {"primal": u, "dual": d}


def _duality_reduce(spec: ProblemSpec, s: dict, lam: float) -> Estimate:
    p, p_se, n = mean_se(s["primal"])
    d, d_se, _ = mean_se(s["dual"])
    g, g_se, _ = mean_se(s["dual"] - s["primal"])
    p_cf, d_cf = cf.primal_value(spec), cf.dual_value(spec, lam)
    ok = (abs(g) <= K_SE * g_se + 1e-12 * abs(p_cf)
          and abs(p - p_cf) <= K_SE * p_se
          and abs(d - d_cf) <= K_SE * d_se)
    return Estimate(
        g, g_se, n, bool(ok),
        "|MC dual - MC primal| <= 3 SE; each within 3 SE of its closed form",
        {"primal_mc": p, "primal_se": p_se, "dual_mc": d, "dual_se": d_se,
         "primal_closed_form": p_cf, "dual_closed_form": d_cf, "lagrange_multiplier": lam},
    )


def duality_gap_mc(spec: ProblemSpec, ensemble: sm.PathEnsemble, *, lambda_scale: float = 1.0) -> Estimate:
    lam = cf.lagrange_multiplier(spec) * lambda_scale
    return _duality_reduce(spec, _duality_samples(spec, ensemble.H[:, -1], lam), lam)


# ---------------------------------------------------------------------------
# replication


@dataclass
class Rung:
    n_steps: int
    rms_rel_error: float
    n_effective: int
    n_violations: int
    order: float | None = None


def _check_ladder(ladder: Sequence[int]) -> str | None:
    ladder = list(ladder)
    if len(ladder) < 2:
        return "ladder needs at least two rungs"
    if any(b <= a for a, b in zip(ladder, ladder[1:])):
        return "ladder is not strictly increasing"
    if any(ladder[-1] % n for n in ladder):
        return "every rung must divide the finest rung"
    return None


def _replication_block(spec, grid, ladder, a, b):
    fine = sm.generate_paths(spec, grid, base_steps=ladder[-1], paths=(a, b), threads=1)
    opt = sm.optimal(spec)
    out = []
    for n in ladder:
        ens = fine if n == fine.n_steps else fine.coarsen(n)
        w = sm.integrate_wealth(spec, ens, opt, threads=1)
        xi = cf.optimal_terminal_wealth(spec, ens.H[:, -1])
        out.append(np.where(w.valid, (w.terminal - xi) / xi, np.nan))
    return out


def replication_check(
    spec: ProblemSpec,
    ladder: Sequence[int] = (64, 128, 256, 512),
    *,
    n_paths: int = 20000,
    seed: int = 0,
    bound: float | None = None,
    threads: int | None = 1,
    chunk_paths: int = sm.DEFAULT_CHUNK_PATHS,
) -> Residual:
    """Euler replication of the optimal terminal wealth along a refinement ladder.

    All rungs share Brownian paths (coarse increments are sums of the finest).
    The value is the relative RMS terminal error at the finest rung.  Passes
    iff errors strictly decrease, every successive order is ``>= 0.4``,
    exclusions stay below 1% and, when given, the finest error is ``<= bound``.
    """
    ladder = [int(n) for n in ladder]
    problem = _check_ladder(ladder)
    if problem:
        return Residual(math.nan, bound if bound is not None else math.nan, False,
                        "valid ladder", {"ladder": ladder, "error": problem})
    grid = sm.GridConfig(ladder[-1], n_paths, seed)
    parts = sm.map_chunks(lambda a, b: _replication_block(spec, grid, ladder, a, b),
                          n_paths, chunk_paths, sm.resolve_threads(threads))
    rungs: list[Rung] = []
    for i, n in enumerate(ladder):
        rel = np.concatenate([p[i] for p in parts])
        ok = np.isfinite(rel)
        n_eff = int(ok.sum())
        err = float(np.sqrt(np.mean(rel[ok] ** 2))) if n_eff else math.nan
        rung = Rung(n, err, n_eff, int(n_paths - n_eff))
        if rungs:
            prev = rungs[-1]
            rung.order = math.log(prev.rms_rel_error / err) / math.log(n / prev.n_steps)
        rungs.append(rung)
    errs = [r.rms_rel_error for r in rungs]
    decreasing = all(b < a for a, b in zip(errs, errs[1:]))
    orders_ok = all(r.order is not None and r.order >= MIN_ORDER for r in rungs[1:])
    excl_ok = all(_exclusion_ok(r.n_effective, n_paths) for r in rungs)
    bound_ok = bound is None or errs[-1] <= bound
    passed = decreasing and orders_ok and excl_ok and bound_ok
    return Residual(
        errs[-1], bound if bound is not None else math.nan, bool(passed),
        "errors strictly decreasing; order >= 0.4 per doubling; finest error <= bound",
        {"ladder": ladder, "n_paths": n_paths, "seed": seed, "rungs": [asdict(r) for r in rungs],
         "strictly_decreasing": decreasing, "orders_ok": orders_ok},
    )


def convergence_study(spec: ProblemSpec, ladder: Sequence[int] = (64, 128, 256, 512), **kwargs) -> list[dict]:
    """Table of ``(n_steps, error, order)`` rows; an invalid ladder yields a
    single row flagged ``failed``."""
    res = replication_check(spec, ladder, **kwargs)
    if "rungs" not in res.details:
        return [{"n_steps": None, "error": None, "order": None, "failed": True,
                 "reason": res.details.get("error")}]
    return [{"n_steps": r["n_steps"], "error": r["rms_rel_error"], "order": r["order"],
             "failed": not res.passed} for r in res.details["rungs"]]


# ---------------------------------------------------------------------------
# martingale representation


def probe_increments(seed: int, path_index: Iterable[int], n: int, delta: float) -> np.ndarray:
    """N(0, delta) draws from a per-path probe substream disjoint from the
    path-generation stream (counter word 2 set to 1)."""
    idx = list(path_index)
    out = np.empty((len(idx), n))
    for row, p in enumerate(idx):
        gen = np.random.Generator(np.random.Philox(key=seed, counter=(int(p) << 192) | (1 << 128)))
        out[row] = gen.standard_normal(n)
    return out * math.sqrt(delta)


def _mstar(spec, t, E, H):
    g = spec.gamma
    return cf.alpha(spec, t) * np.power(H, -(1.0 - g) / g) - cf.beta(spec, t) * E * H


def _kstar_samples(spec: ProblemSpec, ens: sm.PathEnsemble, ks: Sequence[int], delta: float) -> dict:
    th, sig = spec.theta, spec.sigma
    dws = probe_increments(ens.grid.seed, ens.path_index, len(ks), delta)
    alg_max = 0.0
    n_skipped = 0
    xs, dms = [], []
    for j, k in enumerate(ks):
        t = float(ens.times[k])
        E, H = ens.E[:, k], ens.H[:, k]
        K = cf.kstar(spec, t, E, H)
        X = cf.optimal_wealth(spec, t, H, E)
        pos = X > 0.0
        n_skipped += int((~pos).sum())
        if pos.any():
            pi = cf.optimal_fraction(spec, t, X[pos], E[pos])
            a, b = sig * pi * X[pos] * H[pos], th * X[pos] * H[pos]
            rel = np.abs(a - b - K[pos]) / (np.abs(a) + np.abs(b))
            alg_max = max(alg_max, float(rel.max()))
        # probe step of length delta from the exact conditional law
        dw = dws[:, j]
        E2 = E * np.exp((spec.mu - 0.5 * spec.eta**2) * delta + spec.eta * dw)
        H2 = H * np.exp(-(spec.r + 0.5 * th**2) * delta - th * dw)
        dm = (_mstar(spec, t + delta, E2, H2) - _mstar(spec, t, E, H)
              - 0.5 * delta * (E * H + E2 * H2))
        xs.append(K * dw)
        dms.append(dm)
    h_T = ens.H[:, -1]
    m_T = cf.optimal_terminal_wealth(spec, h_T) * h_T - ens.deflated_endowment_integral()[:, -1]
    return {"x": np.column_stack(xs), "dm": np.column_stack(dms), "m_T": m_T,
            "alg_max": np.array([alg_max]), "n_skipped": np.array([n_skipped])}


def _kstar_reduce(spec: ProblemSpec, s: dict, times: Sequence[float], delta: float) -> Estimate:
    x, dm = s["x"].ravel(), s["dm"].ravel()
    sxx = float(np.sum(x * x))
    slope = float(np.sum(x * dm)) / sxx
    resid = dm - slope * x
    # heteroscedasticity-robust (HC0) standard error
    slope_se = float(math.sqrt(np.sum(x * x * resid * resid)) / sxx)
    per_time = []
    for j, t in enumerate(times):
        xj, dj = s["x"][:, j], s["dm"][:, j]
        sj = float(np.sum(xj * dj) / np.sum(xj * xj))
        per_time.append({"t": t, "slope": sj})
    drift, drift_se, n = mean_se(s["m_T"] - spec.x0)
    alg_max = float(np.max(s["alg_max"]))
    ok_slope = abs(slope - 1.0) <= K_SE * slope_se
    ok_drift = abs(drift) <= K_SE * drift_se
    ok_alg = alg_max <= ALGEBRAIC_TOL
    return Estimate(
        slope, slope_se, n, bool(ok_slope and ok_drift and ok_alg),
        "|slope - 1| <= 3 SE (robust); |E[M*_T] - x0| <= 3 SE; algebraic identity <= 1e-10",
        {"algebraic_max_rel": alg_max, "algebraic_points_skipped": int(np.sum(s["n_skipped"])),
         "drift": drift, "drift_se": drift_se, "probe_delta": delta, "per_time": per_time},
    )


def _probe_indices(ens: sm.PathEnsemble, fractions: Sequence[float]) -> list[int]:
    ks = []
    for f in fractions:
        k = grid_index(ens, f * ens.spec.T)
        if k >= ens.n_steps:
            raise DomainError("probe times must be < T", code="TimeOutOfRange")
        ks.append(k)
    return ks


def kstar_identity_check(
    spec: ProblemSpec,
    ensemble: sm.PathEnsemble,
    *,
    probe_fractions: Sequence[float] = (0.0, 0.25, 0.5, 0.75),
    probe_delta: float | None = None,
) -> Estimate:
    """Certify ``dM* = K* dW``.

    (a) algebraic: ``sigma pi* X* H - theta X* H = K*`` at the probe grid times;
    (b) statistical: over a short probe step ``delta`` (default ``1e-6 T``)
    drawn from the exact conditional law, the increment of ``M*`` regressed on
    ``K* dW`` has unit slope; and ``E[M*_T] = x0`` on the grid.
    """
    delta = 1e-6 * spec.T if probe_delta is None else probe_delta
    ks = _probe_indices(ensemble, probe_fractions)
    s = _kstar_samples(spec, ensemble, ks, delta)
    return _kstar_reduce(spec, s, [float(ensemble.times[k]) for k in ks], delta)


# ---------------------------------------------------------------------------
# dominance


def default_challengers(spec: ProblemSpec) -> list[sm.Strategy]:
    pm = cf.merton_fraction(spec)
    opt = sm.optimal(spec)
    return [
        sm.merton(spec),
        sm.constant(0.0),
        sm.constant(pm + 0.25),
        sm.constant(pm - 0.25),
        sm.perturbed(spec, opt, 0.2, "scale-shift"),
        sm.perturbed(spec, opt, -0.2, "scale-shift"),
    ]


def _terminal_utility(spec, wealth: sm.WealthPaths) -> tuple[np.ndarray, int]:
    x = wealth.terminal
    ok = wealth.valid
    u = np.full(x.shape, np.nan)
    vals, floored = utility_samples(spec, x[ok]) if ok.any() else (np.empty(0), 0)
    u[ok] = vals
    return u, floored


def _dominance_reduce(u_opt: np.ndarray, u_ch: np.ndarray, name: str,
                      floored: tuple[int, int] = (0, 0)) -> Estimate:
    ok = np.isfinite(u_opt) & np.isfinite(u_ch)
    n_total = u_opt.size
    if not ok.any():
        raise CheckError(f"dominance vs {name}: all paths invalid")
    diff = u_opt[ok] - u_ch[ok]
    m, se, n = mean_se(diff)
    passed = m >= -K_SE * se and _exclusion_ok(n, n_total)
    return Estimate(
        m, se, n, bool(passed), "E[U(X*_T)] - E[U(X^c_T)] >= -3 SE (common random numbers)",
        {"challenger": name, "label": DOMINANCE_LABEL, "significant_gain": bool(m > K_SE * se),
         "n_excluded_optimal": int((~np.isfinite(u_opt)).sum()),
         "n_excluded_challenger": int((~np.isfinite(u_ch)).sum()),
         "n_floored_optimal": floored[0], "n_floored_challenger": floored[1],
         "mean_utility_optimal": float(np.mean(u_opt[ok])),
         "mean_utility_challenger": float(np.mean(u_ch[ok]))},
    )


def dominance_test(
    spec: ProblemSpec,
    ensemble: sm.PathEnsemble,
    challenger: sm.Strategy,
    *,
    reference: sm.WealthPaths | None = None,
) -> Estimate:
    """Common-random-numbers estimate of the welfare gain of the optimal
    strategy over ``challenger`` (both Euler-integrated on ``ensemble``)."""
    if reference is None:
        reference = sm.integrate_wealth(spec, ensemble, sm.optimal(spec))
    u_opt, f_opt = _terminal_utility(spec, reference)
    u_ch, f_ch = _terminal_utility(spec, sm.integrate_wealth(spec, ensemble, challenger))
    return _dominance_reduce(u_opt, u_ch, challenger.name, (f_opt, f_ch))


def _suite_block(spec, grid, strategies, a, b):
    ens = sm.generate_paths(spec, grid, paths=(a, b), threads=1)
    return ens, [sm.integrate_wealth(spec, ens, s, threads=1) for s in strategies]


def budget_suite(
    spec: ProblemSpec,
    grid: sm.GridConfig,
    strategies: Sequence[sm.Strategy],
    times: Sequence[float],
    *,
    threads: int | None = 1,
    chunk_paths: int = sm.DEFAULT_CHUNK_PATHS,
) -> dict[str, Estimate]:
    """Budget checks for several strategies and grid times, streamed over
    path chunks so large ensembles never sit in memory at once."""
    probe = np.linspace(0.0, spec.T, grid.n_steps + 1)
    ks = []
    for t in times:
        k = int(round(t / spec.T * grid.n_steps))
        if abs(probe[k] - t) > 1e-12 * max(spec.T, 1.0):
            raise DomainError(f"t={t!r} is not a grid time", code="TimeNotOnGrid")
        ks.append(k)

    def block(a, b):
        ens, wealth = _suite_block(spec, grid, strategies, a, b)
        return [_budget_samples(ens, w, ks) for w in wealth]

    parts = sm.map_chunks(block, grid.n_paths, chunk_paths, sm.resolve_threads(threads))
    out = {}
    for i, s in enumerate(strategies):
        for k in ks:
            y = np.concatenate([p[i][k] for p in parts])
            out[f"budget[{s.name}, t={probe[k]:g}]"] = _budget_reduce(
                spec, y, k, float(probe[k]), s.kind == "optimal", s.name)
    return out


def dominance_suite(
    spec: ProblemSpec,
    grid: sm.GridConfig,
    challengers: Sequence[sm.Strategy] | None = None,
    *,
    threads: int | None = 1,
    chunk_paths: int = sm.DEFAULT_CHUNK_PATHS,
) -> dict[str, Estimate]:
    """Streamed :func:`dominance_test` over a challenger family (default:
    :func:`default_challengers`)."""
    challengers = list(default_challengers(spec) if challengers is None else challengers)
    strategies = [sm.optimal(spec), *challengers]

    def block(a, b):
        _, wealth = _suite_block(spec, grid, strategies, a, b)
        return [_terminal_utility(spec, w) for w in wealth]

    parts = sm.map_chunks(block, grid.n_paths, chunk_paths, sm.resolve_threads(threads))
    u_opt = np.concatenate([p[0][0] for p in parts])
    f_opt = sum(p[0][1] for p in parts)
    out = {}
    for i, ch in enumerate(challengers, start=1):
        u = np.concatenate([p[i][0] for p in parts])
        f = sum(p[i][1] for p in parts)
        out[f"dominance[{ch.name}]"] = _dominance_reduce(u_opt, u, ch.name, (f_opt, f))
    return out


# ---------------------------------------------------------------------------
# battery


@dataclass
class VerifyOptions:
    budget_fractions: tuple = (0.25, 0.5, 1.0)
    budget_strategies: tuple = ({"kind": "optimal"}, {"kind": "merton"},
                                {"kind": "constant", "value": 0.0}, {"kind": "constant", "value": 2.0})
    ladder: tuple = (64, 128, 256, 512)
    replication_paths: int = 20000
    replication_bound: float | None = 0.01
    probe_fractions: tuple = (0.0, 0.25, 0.5, 0.75)
    probe_delta: float | None = None
    challengers: tuple | None = None
    lambda_scale: float = 1.0
    chunk_paths: int = sm.DEFAULT_CHUNK_PATHS

    def to_dict(self) -> dict:
        return _clean(asdict(self))


@dataclass
class VerificationReport:
    spec: dict
    grid: dict
    options: dict
    checks: dict
    passed: bool
    rng: str
    labels: dict = field(default_factory=lambda: {"dominance": DOMINANCE_LABEL})

    def to_dict(self) -> dict:
        return _clean(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=False)

    def failed_checks(self) -> list[str]:
        return sorted(k for k, v in self.checks.items() if not v.get("passed"))


def _battery_block(spec, grid, opts, strategies, budget_ks, probe_ks, delta, lam, a, b):
    ens = sm.generate_paths(spec, grid, paths=(a, b), threads=1)
    wealth = {key: sm.integrate_wealth(spec, ens, s, threads=1) for key, s in strategies.items()}
    out = {"budget": {key: _budget_samples(ens, wealth[key], budget_ks) for key in opts["budget_keys"]},
           "utility": {}, "floored": {}}
    for key in opts["utility_keys"]:
        u, f = _terminal_utility(spec, wealth[key])
        out["utility"][key] = u
        out["floored"][key] = f
    out["duality"] = _duality_samples(spec, ens.H[:, -1], lam)
    out["kstar"] = _kstar_samples(spec, ens, probe_ks, delta)
    return out


def _strategy_key(d: dict) -> str:
    return json.dumps(d, sort_keys=True)


def run_battery(
    spec: ProblemSpec,
    grid: sm.GridConfig,
    options: VerifyOptions | None = None,
    *,
    threads: int | None = 1,
) -> VerificationReport:
    """Run every check on one streamed ensemble plus the replication ladder.

    Results depend only on ``(spec, grid, options)``: chunk boundaries are
    fixed by ``options.chunk_paths`` and reductions run in path order.
    """
    opts = options or VerifyOptions()
    threads = sm.resolve_threads(threads)
    lam = cf.lagrange_multiplier(spec) * opts.lambda_scale
    delta = 1e-6 * spec.T if opts.probe_delta is None else opts.probe_delta

    times = np.linspace(0.0, spec.T, grid.n_steps + 1)
    budget_ks = []
    for f in opts.budget_fractions:
        k = f * grid.n_steps
        if not (0 <= f <= 1) or abs(k - round(k)) > 1e-9:
            raise ValidationError(f"budget fraction {f} is not on the grid",
                                  code="TimeNotOnGrid", field="verify.budget_fractions")
        budget_ks.append(int(round(k)))
    probe_ks = []
    for f in opts.probe_fractions:
        k = f * grid.n_steps
        if not (0 <= f < 1) or abs(k - round(k)) > 1e-9:
            raise ValidationError(f"probe fraction {f} is not a grid time < T",
                                  code="TimeNotOnGrid", field="verify.probe_fractions")
        probe_ks.append(int(round(k)))

    strategies: dict[str, sm.Strategy] = {}
    budget_keys = []
    for d in opts.budget_strategies:
        key = _strategy_key(d)
        strategies[key] = sm.strategy_from_dict(spec, d)
        budget_keys.append(key)
    opt_key = _strategy_key({"kind": "optimal"})
    strategies.setdefault(opt_key, sm.optimal(spec))
    challengers = (list(opts.challengers) if opts.challengers is not None
                   else [s.to_dict() for s in default_challengers(spec)])
    ch_keys = []
    for d in challengers:
        d = {k: v for k, v in d.items() if k != "name"} if d.get("kind") != "table" else d
        key = _strategy_key(d)
        strategies.setdefault(key, sm.strategy_from_dict(spec, d))
        ch_keys.append(key)
    meta = {"budget_keys": budget_keys, "utility_keys": [opt_key] + ch_keys}

    parts = sm.map_chunks(
        lambda a, b: _battery_block(spec, grid, meta, strategies, budget_ks, probe_ks, delta, lam, a, b),
        grid.n_paths, opts.chunk_paths, threads,
    )

    checks: dict[str, dict] = {}
    for key in budget_keys:
        s = strategies[key]
        for k in budget_ks:
            y = np.concatenate([p["budget"][key][k] for p in parts])
            est = _budget_reduce(spec, y, k, float(times[k]), s.kind == "optimal", s.name)
            checks[f"budget[{s.name}, t={times[k]:g}]"] = est.to_dict()

    checks["foc"] = foc_check(spec, lambda_scale=opts.lambda_scale).to_dict()
    checks["duality_closed_form"] = duality_gap(spec, lambda_scale=opts.lambda_scale).to_dict()
    dual_s = {k: np.concatenate([p["duality"][k] for p in parts]) for k in ("primal", "dual")}
    checks["duality_mc"] = _duality_reduce(spec, dual_s, lam).to_dict()
    # foc / duality are tied to the exact multiplier; tampering must show up there
    if opts.lambda_scale != 1.0:
        checks["duality_mc"]["details"]["tampered"] = True

    ks = {k: np.concatenate([p["kstar"][k] for p in parts]) for k in parts[0]["kstar"]}
    checks["kstar_identity"] = _kstar_reduce(spec, ks, [float(times[k]) for k in probe_ks], delta).to_dict()

    u_opt = np.concatenate([p["utility"][opt_key] for p in parts])
    f_opt = sum(p["floored"][opt_key] for p in parts)
    for key in ch_keys:
        u = np.concatenate([p["utility"][key] for p in parts])
        f = sum(p["floored"][key] for p in parts)
        est = _dominance_reduce(u_opt, u, strategies[key].name, (f_opt, f))
        checks[f"dominance[{strategies[key].name}]"] = est.to_dict()

    rep_paths = min(opts.replication_paths, grid.n_paths)
    checks["replication"] = replication_check(
        spec, opts.ladder, n_paths=rep_paths, seed=grid.seed, bound=opts.replication_bound,
        threads=threads, chunk_paths=opts.chunk_paths,
    ).to_dict()

    passed = all(c["passed"] for c in checks.values())
    return VerificationReport(spec.to_dict(), grid.to_dict(), opts.to_dict(), checks, passed, sm.rng_identity())
