"""Path generation and wealth integration.

State processes (W, E, H, Z, S1) are sampled exactly on the grid from their
log-space solutions; only the wealth SDE is discretised (Euler-Maruyama).

Random numbers come from a per-path Philox substream: path ``p`` of seed
``s`` draws from ``Philox(key=s, counter=p << 192)``.  A path's increments
therefore depend only on ``(seed, p, base_steps)``, never on chunking or on
the number of worker threads.
"""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import closedform as cf
from .errors import (
    DomainError,
    MemoryBudgetError,
    OverflowGuardError,
    StrategyError,
    ValidationError,
)
from .model import ProblemSpec

log = logging.getLogger(__name__)

DEFAULT_CHUNK_PATHS = 8192
# number of (n_paths, n_steps+1) float64 arrays held by an ensemble
_ENSEMBLE_ARRAYS = 7


def _default_memory_budget() -> int:
    mb = os.environ.get("ENDOW_OPT_MEMORY_MB")
    return int(mb) * 2**20 if mb else 2 * 2**30


def rng_identity() -> str:
    """Identity string recorded in every report."""
    return (
        f"numpy {np.__version__} Philox4x64-10; key=seed, counter=path<<192; "
        "Generator.standard_normal (ziggurat); v1"
    )


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get("ENDOW_OPT_THREADS")
        threads = int(env) if env else 1
    return max(1, int(threads))


def map_chunks(fn: Callable[[int, int], object], n: int, chunk: int, threads: int = 1) -> list:
    """Apply ``fn(start, stop)`` over fixed-size chunks; results in chunk order."""
    bounds = [(a, min(a + chunk, n)) for a in range(0, n, chunk)]
    if threads <= 1 or len(bounds) <= 1:
        return [fn(a, b) for a, b in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda ab: fn(*ab), bounds))


@dataclass(frozen=True)
class GridConfig:
    """Uniform time grid and ensemble size."""

    n_steps: int
    n_paths: int
    seed: int = 0

    def __post_init__(self):
        for name in ("n_steps", "n_paths"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                raise ValidationError(
                    f"grid.{name} must be an integer >= 1, got {v!r}",
                    code=f"{name.title().replace('_', '')}Invalid",
                    field=f"grid.{name}",
                )
        s = self.seed
        if isinstance(s, bool) or not isinstance(s, (int, np.integer)) or not 0 <= s < 2**64:
            raise ValidationError(
                f"grid.seed must be an integer in [0, 2**64), got {s!r}",
                code="SeedInvalid",
                field="grid.seed",
            )

    def to_dict(self) -> dict:
        return {"n_steps": int(self.n_steps), "n_paths": int(self.n_paths), "seed": int(self.seed)}


def brownian_increments(seed: int, paths: Iterable[int], n_steps: int, dt: float) -> np.ndarray:
    """Rows of i.i.d. N(0, dt) increments, one substream per path index."""
    paths = list(paths)
    out = np.empty((len(paths), n_steps))
    sd = np.sqrt(dt)
    for row, p in enumerate(paths):
        gen = np.random.Generator(np.random.Philox(key=seed, counter=int(p) << 192))
        out[row] = gen.standard_normal(n_steps)
    out *= sd
    return out


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Exact samples of ``(W, E, H, Z, S1)`` on a uniform grid.

    Arrays have shape ``(n_paths, n_steps + 1)`` except ``dW`` which is
    ``(n_paths, n_steps)``.  ``path_index`` holds the global index of each row.
    """

    spec: ProblemSpec
    grid: GridConfig
    base_steps: int
    path_index: np.ndarray
    times: np.ndarray
    dW: np.ndarray
    W: np.ndarray
    E: np.ndarray
    H: np.ndarray
    Z: np.ndarray
    S1: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.W.shape[0]

    @property
    def n_steps(self) -> int:
        return self.dW.shape[1]

    @property
    def dt(self) -> float:
        return self.spec.T / self.n_steps

    def rows(self, start: int, stop: int) -> "PathEnsemble":
        """View on a contiguous block of paths."""
        sl = slice(start, stop)
        return PathEnsemble(
            self.spec, self.grid, self.base_steps, self.path_index[sl], self.times,
            self.dW[sl], self.W[sl], self.E[sl], self.H[sl], self.Z[sl], self.S1[sl],
        )

    def coarsen(self, n_steps: int) -> "PathEnsemble":
        """Same Brownian paths observed on a coarser grid (sums of increments)."""
        if n_steps < 1 or self.n_steps % n_steps:
            raise ValidationError(
                f"n_steps={n_steps} does not divide {self.n_steps}",
                code="LadderInvalid", field="n_steps",
            )
        factor = self.n_steps // n_steps
        dW = self.dW.reshape(self.n_paths, n_steps, factor).sum(axis=2)
        grid = GridConfig(n_steps, self.grid.n_paths, self.grid.seed)
        return _assemble(self.spec, grid, self.base_steps, self.path_index, dW)

    def deflated_endowment_integral(self) -> np.ndarray:
        """Cumulative trapezoid approximation of ``int_0^t E_s H_s ds``."""
        eh = self.E * self.H
        out = np.zeros_like(eh)
        np.cumsum(0.5 * (eh[:, 1:] + eh[:, :-1]) * self.dt, axis=1, out=out[:, 1:])
        return out


def _state_exponent(a: float, b: float, times: np.ndarray, W: np.ndarray, what: str):
    expo = a * times + b * W
    if np.any(np.abs(expo) > cf.EXP_GUARD):
        raise OverflowGuardError(f"state process {what} exponent exceeds guard")
    return np.exp(expo)


def _assemble(spec, grid, base_steps, path_index, dW) -> PathEnsemble:
    n, N = dW.shape
    times = np.linspace(0.0, spec.T, N + 1)
    W = np.zeros((n, N + 1))
    np.cumsum(dW, axis=1, out=W[:, 1:])
    th = spec.theta
    E = spec.e0 * _state_exponent(spec.mu - 0.5 * spec.eta**2, spec.eta, times, W, "E")
    H = _state_exponent(-(spec.r + 0.5 * th**2), -th, times, W, "H")
    Z = _state_exponent(-0.5 * th**2, -th, times, W, "Z")
    S1 = _state_exponent(
        spec.r + spec.market.lambda_excess - 0.5 * spec.sigma**2, spec.sigma, times, W, "S1"
    )
    return PathEnsemble(spec, grid, base_steps, path_index, times, dW, W, E, H, Z, S1)


def generate_paths(
    spec: ProblemSpec,
    grid: GridConfig,
    *,
    base_steps: int | None = None,
    paths: tuple[int, int] | None = None,
    threads: int | None = 1,
    memory_budget: int | None = None,
) -> PathEnsemble:
    """Generate an ensemble for ``grid``.

    Parameters
    ----------
    base_steps : resolution at which increments are drawn; must be a multiple
        of ``grid.n_steps``.  Ensembles sharing ``(seed, base_steps)`` share
        Brownian paths, which is how refinement ladders are built.
    paths : ``(start, stop)`` global path indices; defaults to all paths.
    """
    base_steps = grid.n_steps if base_steps is None else int(base_steps)
    if base_steps < grid.n_steps or base_steps % grid.n_steps:
        raise ValidationError(
            f"base_steps={base_steps} must be a multiple of n_steps={grid.n_steps}",
            code="BaseStepsInvalid", field="base_steps",
        )
    start, stop = (0, grid.n_paths) if paths is None else paths
    if not 0 <= start < stop <= grid.n_paths:
        raise ValidationError(f"bad path range {paths!r}", code="PathRangeInvalid", field="paths")
    n = stop - start
    budget = _default_memory_budget() if memory_budget is None else memory_budget
    need = 8 * n * ((grid.n_steps + 1) * _ENSEMBLE_ARRAYS + base_steps)
    if need > budget:
        raise MemoryBudgetError(
            f"ensemble of {n} paths x {grid.n_steps} steps needs ~{need / 2**20:.0f} MiB, "
            f"budget is {budget / 2**20:.0f} MiB; generate in path chunks"
        )
    dt_base = spec.T / base_steps
    parts = map_chunks(
        lambda a, b: brownian_increments(grid.seed, range(start + a, start + b), base_steps, dt_base),
        n, DEFAULT_CHUNK_PATHS, resolve_threads(threads),
    )
    dW = np.concatenate(parts, axis=0)
    if base_steps != grid.n_steps:
        dW = dW.reshape(n, grid.n_steps, base_steps // grid.n_steps).sum(axis=2)
    return _assemble(spec, grid, base_steps, np.arange(start, stop), dW)


# ---------------------------------------------------------------------------
# strategies


@dataclass(frozen=True, eq=False)
class Strategy:
    """Feedback rule ``(t, wealth, endow) -> risky fraction``.

    ``rule`` is vectorised over wealth/endowment arrays at a scalar time.
    Build instances with the module-level constructors below.
    """

    kind: str
    name: str
    rule: Callable[[float, np.ndarray, np.ndarray], np.ndarray] = field(repr=False)
    params: dict = field(default_factory=dict)

    def __call__(self, t: float, wealth, endow) -> np.ndarray:
        wealth = np.asarray(wealth, dtype=float)
        out = self.rule(t, wealth, np.asarray(endow, dtype=float))
        return np.broadcast_to(np.asarray(out, dtype=float), wealth.shape)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "name": self.name, **self.params}


def constant(c: float) -> Strategy:
    c = float(c)
    return Strategy("constant", f"constant({c:g})", lambda t, x, e: np.full_like(x, c), {"value": c})


def merton(spec: ProblemSpec) -> Strategy:
    pm = cf.merton_fraction(spec)
    return Strategy("merton", "merton", lambda t, x, e: np.full_like(x, pm))


def optimal(spec: ProblemSpec) -> Strategy:
    pm, s = cf.merton_fraction(spec), cf.shift_scale(spec)

    def rule(t, x, e):
        if not np.all(x > 0.0):
            raise DomainError("wealth must be > 0", code="WealthNonPositive")
        return pm + cf.beta(spec, t) * s * (e / x)

    return Strategy("optimal", "optimal", rule)


PERTURB_MODES = ("additive", "scale-shift")


def perturbed(spec: ProblemSpec, base: Strategy, eps: float, mode: str = "scale-shift") -> Strategy:
    """Perturb ``base``.

    ``additive``: ``base + eps``.  ``scale-shift``: scale the deviation from the
    Merton fraction by ``1 + eps`` (for the optimal base this scales the
    endowment shift term).
    """
    eps = float(eps)
    if mode == "additive":
        rule = lambda t, x, e: base(t, x, e) + eps  # noqa: E731
    elif mode == "scale-shift":
        pm = cf.merton_fraction(spec)
        rule = lambda t, x, e: pm + (1.0 + eps) * (base(t, x, e) - pm)  # noqa: E731
    else:
        raise ValidationError(f"unknown perturbation mode {mode!r}", code="ModeInvalid", field="mode")
    return Strategy(
        "perturbed", f"perturbed({base.name},{eps:+g},{mode})", rule,
        {"base": base.to_dict(), "eps": eps, "mode": mode},
    )


def table(times: Sequence[float], fractions: Sequence[float], name: str = "table") -> Strategy:
    """Piecewise-constant schedule: ``fractions[i]`` applies on ``[times[i], times[i+1])``."""
    ts = np.asarray(times, dtype=float)
    fs = np.asarray(fractions, dtype=float)
    if ts.ndim != 1 or ts.shape != fs.shape or ts.size == 0:
        raise ValidationError("table needs equal-length non-empty times and fractions",
                              code="TableInvalid", field="strategy.times")
    if np.any(np.diff(ts) <= 0) or not (np.all(np.isfinite(ts)) and np.all(np.isfinite(fs))):
        raise ValidationError("table times must be finite and strictly increasing",
                              code="TableInvalid", field="strategy.times")

    def rule(t, x, e):
        i = max(int(np.searchsorted(ts, t, side="right")) - 1, 0)
        return np.full_like(x, fs[i])

    return Strategy("table", name, rule, {"times": ts.tolist(), "fractions": fs.tolist()})


def feedback(fn: Callable, name: str = "external") -> Strategy:
    """Wrap an external rule, e.g. the ``predict`` of a fitted policy estimator.

    ``fn`` receives a ``(n, 3)`` array of rows ``[t, wealth, endowment]``.
    """

    def rule(t, x, e):
        return np.asarray(fn(np.column_stack([np.full_like(x, t), x, e])), dtype=float)

    return Strategy("external", name, rule)


def strategy_from_dict(spec: ProblemSpec, d: dict) -> Strategy:
    kind = d.get("kind")
    if kind == "constant":
        return constant(d["value"])
    if kind == "merton":
        return merton(spec)
    if kind == "optimal":
        return optimal(spec)
    if kind == "perturbed":
        return perturbed(spec, strategy_from_dict(spec, d["base"]), d["eps"], d.get("mode", "scale-shift"))
    if kind == "table":
        return table(d["times"], d["fractions"], d.get("name", "table"))
    raise ValidationError(f"unknown strategy kind {kind!r}", code="StrategyInvalid", field="strategy.kind")


# ---------------------------------------------------------------------------
# wealth


@dataclass(frozen=True, eq=False)
class WealthPaths:
    """Wealth trajectories of one strategy over an ensemble.

    Paths whose wealth reaches ``<= 0`` are frozen at ``nan`` from the first
    violating grid index on and must be excluded from utility estimates.
    """

    strategy: str
    X: np.ndarray
    positivity_violated: np.ndarray
    first_violation_index: np.ndarray

    @property
    def terminal(self) -> np.ndarray:
        return self.X[:, -1]

    @property
    def valid(self) -> np.ndarray:
        return ~self.positivity_violated

    @property
    def n_violations(self) -> int:
        return int(self.positivity_violated.sum())


def _locate_failure(strategy, t, x, e, alive):
    for i in np.flatnonzero(alive):
        try:
            v = strategy(t, x[i : i + 1], e[i : i + 1])
        except Exception:
            return int(i)
        if not np.all(np.isfinite(v)):
            return int(i)
    return None


def _integrate_block(spec: ProblemSpec, ens: PathEnsemble, strategy: Strategy) -> WealthPaths:
    n, N = ens.n_paths, ens.n_steps
    dt = ens.dt
    r, lam, sig = spec.r, spec.market.lambda_excess, spec.sigma
    X = np.empty((n, N + 1))
    X[:, 0] = spec.x0
    alive = np.ones(n, dtype=bool)
    first = np.full(n, -1, dtype=np.int64)
    for k in range(N):
        t = float(ens.times[k])
        x = X[:, k]
        e = ens.E[:, k]
        all_alive = alive.all()
        try:
            if all_alive:
                pi = strategy(t, x, e)
            else:
                pi = np.full(n, np.nan)
                pi[alive] = strategy(t, x[alive], e[alive])
            bad = alive & ~np.isfinite(pi)
            if bad.any():
                raise FloatingPointError("non-finite risky fraction")
        except Exception as exc:
            row = _locate_failure(strategy, t, x, e, alive)
            idx = int(ens.path_index[row]) if row is not None else None
            raise StrategyError(
                f"strategy {strategy.name!r} failed at t={t:g} on path {idx}: {exc}", path_index=idx
            ) from exc
        x_next = x + ((r + lam * pi) * x + e) * dt + sig * pi * x * ens.dW[:, k]
        newly = alive & ~(x_next > 0.0)
        if newly.any():
            first[newly] = k + 1
            alive &= ~newly
        x_next[~alive] = np.nan
        X[:, k + 1] = x_next
    return WealthPaths(strategy.name, X, ~alive, first)


def _concat(parts: list[WealthPaths]) -> WealthPaths:
    if len(parts) == 1:
        return parts[0]
    return WealthPaths(
        parts[0].strategy,
        np.concatenate([p.X for p in parts]),
        np.concatenate([p.positivity_violated for p in parts]),
        np.concatenate([p.first_violation_index for p in parts]),
    )


def integrate_wealth(
    spec: ProblemSpec, ensemble: PathEnsemble, strategy: Strategy, *, threads: int | None = 1
) -> WealthPaths:
    """Euler-Maruyama integration of the self-financing wealth SDE with
    endowment income, driven by the ensemble's increments."""
    if ensemble.spec != spec:
        raise ValidationError("ensemble was generated for a different spec", code="SpecMismatch")
    parts = map_chunks(
        lambda a, b: _integrate_block(spec, ensemble.rows(a, b), strategy),
        ensemble.n_paths, DEFAULT_CHUNK_PATHS, resolve_threads(threads),
    )
    out = _concat(parts)
    if out.n_violations:
        log.warning("%s: %d path(s) hit non-positive wealth", strategy.name, out.n_violations)
    return out


def exact_optimal_wealth_path(spec: ProblemSpec, ensemble: PathEnsemble) -> WealthPaths:
    """Closed-form optimal wealth evaluated at every grid point."""
    X = cf.optimal_wealth(spec, ensemble.times[None, :], ensemble.H, ensemble.E)
    bad = ~(X > 0.0)
    violated = bad.any(axis=1)
    first = np.where(violated, bad.argmax(axis=1), -1)
    if violated.any():
        cols = np.arange(X.shape[1])[None, :]
        X = np.where(violated[:, None] & (cols >= first[:, None]), np.nan, X)
    return WealthPaths("optimal(exact)", X, violated, first)


PATH_CSV_HEADER = ("path", "t", "W", "E", "H", "X")


def write_path_csv(
    fh, ensemble: PathEnsemble, wealth: WealthPaths, max_paths: int | None = None, *, header: bool = True
) -> int:
    """Write ``path,t,W,E,H,X`` rows; returns the number of paths written.

    Floats use ``repr`` (shortest round-trip, locale independent).
    """
    w = csv.writer(fh, lineterminator="\n")
    if header:
        w.writerow(PATH_CSV_HEADER)
    n = ensemble.n_paths if max_paths is None else min(max_paths, ensemble.n_paths)
    t = ensemble.times
    for i in range(n):
        p = int(ensemble.path_index[i])
        for k in range(t.size):
            w.writerow([p, repr(float(t[k])), repr(float(ensemble.W[i, k])), repr(float(ensemble.E[i, k])),
                        repr(float(ensemble.H[i, k])), repr(float(wealth.X[i, k]))])
    return n
