"""Command line interface.

    endow-opt {price|strategy|simulate|verify|sweep} --config FILE
              [--out FILE] [--format json|csv] [--threads N] [--seed S]

Exit codes: 0 success, 1 validation error, 2 check failure, 3 I/O error,
4 overflow.  ``ENDOW_OPT_THREADS`` is used when ``--threads`` is absent.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import sys
from dataclasses import replace

import numpy as np

from . import closedform as cf
from . import simulate as sm
from . import verify as vf
from .config import RunConfig
from .errors import (
    EXIT_CHECK_FAILED,
    EXIT_IO,
    EXIT_OK,
    EndowOptError,
    ValidationError,
)

log = logging.getLogger("endow_opt")

SWEEP_AXES = ("gamma", "eta", "theta", "e0", "horizon_T")
QUANTILES = (0.01, 0.05, 0.5, 0.95, 0.99)


def _dumps(obj) -> str:
    return json.dumps(vf._clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _envelope(cfg: RunConfig, command: str) -> dict:
    return {"command": command, "spec": cfg.spec.to_dict(), "grid": cfg.grid.to_dict(),
            "rng": sm.rng_identity()}


# ---------------------------------------------------------------------------
# subcommands; each returns (text, exit_code)


def cmd_price(cfg: RunConfig, fmt: str = "json", threads: int = 1):
    spec = cfg.spec
    times = np.linspace(0.0, spec.T, cfg.section("price")["n_times"])
    prices = cf.endowment_price(spec, times)
    p_T = cf.endowment_price(spec, spec.T)
    if fmt == "csv":
        return _csv(["t", "P_t"], zip(times, prices)), EXIT_OK
    rows = [{"t": float(t), "P_t": float(p)} for t, p in zip(times, prices)]
    return _dumps({**_envelope(cfg, "price"), "P_T": p_T, "kappa": spec.kappa, "rows": rows}), EXIT_OK


def strategy_table(cfg: RunConfig) -> list[dict]:
    spec = cfg.spec
    opts = cfg.section("strategy")
    times = opts["times"] if opts["times"] is not None else np.linspace(0.0, spec.T, 6).tolist()
    pm, s = cf.merton_fraction(spec), cf.shift_scale(spec)
    rows = []
    for t in times:
        b = cf.beta(spec, t)
        for ratio in opts["ratios"]:
            if ratio < 0:
                raise ValidationError("ratios must be >= 0", code="RatioNegative", field="strategy.ratios")
            # ratio = endowment / wealth; evaluate at unit wealth
            pi = cf.optimal_fraction(spec, t, 1.0, ratio) if ratio > 0 else pm
            rows.append({"t": float(t), "ratio": float(ratio), "pi_star": pi,
                         "pi_merton": pm, "shift_scale": s, "beta": b})
    return rows


def cmd_strategy(cfg: RunConfig, fmt: str = "json", threads: int = 1):
    rows = strategy_table(cfg)
    if fmt == "csv":
        cols = ["t", "ratio", "pi_star", "pi_merton", "shift_scale", "beta"]
        return _csv(cols, ([r[c] for c in cols] for r in rows)), EXIT_OK
    return _dumps({**_envelope(cfg, "strategy"), "pi_merton": cf.merton_fraction(cfg.spec),
                   "shift_scale": cf.shift_scale(cfg.spec), "rows": rows}), EXIT_OK


def _simulate_block(spec, grid, strategy, dump_n, a, b):
    ens = sm.generate_paths(spec, grid, paths=(a, b), threads=1)
    w = sm.integrate_wealth(spec, ens, strategy, threads=1)
    out = {"terminal": w.terminal.copy(), "violated": w.positivity_violated.copy(), "dump": ""}
    if strategy.kind == "optimal":
        xi = cf.optimal_terminal_wealth(spec, ens.H[:, -1])
        out["rel"] = np.where(w.valid, (w.terminal - xi) / xi, np.nan)
    if a < dump_n:
        buf = io.StringIO()
        sm.write_path_csv(buf, ens, w, dump_n - a, header=False)
        out["dump"] = buf.getvalue()
    return out


def run_simulation(cfg: RunConfig, threads: int = 1) -> tuple[dict, str]:
    """Chunked simulation; returns (summary, path-dump CSV text)."""
    spec, grid = cfg.spec, cfg.grid
    opts = cfg.section("simulate")
    strategy = sm.strategy_from_dict(spec, opts["strategy"])
    dump_n = min(opts["dump_paths"], grid.n_paths)
    parts = sm.map_chunks(
        lambda a, b: _simulate_block(spec, grid, strategy, dump_n, a, b),
        grid.n_paths, cfg.section("verify")["chunk_paths"], threads,
    )
    terminal = np.concatenate([p["terminal"] for p in parts])
    violated = np.concatenate([p["violated"] for p in parts])
    valid = terminal[~violated]
    dump = ",".join(sm.PATH_CSV_HEADER) + "\n" + "".join(p["dump"] for p in parts)
    summary = {**_envelope(cfg, "simulate"), "strategy": strategy.to_dict(),
               "n_violations": int(violated.sum()),
               "violation_fraction": float(violated.mean())}
    if valid.size:
        u, floored = vf.utility_samples(spec, valid)
        m, se, n = vf.mean_se(u)
        summary["terminal_wealth"] = {
            "mean": float(valid.mean()), "std": float(valid.std(ddof=1)) if valid.size > 1 else 0.0,
            "min": float(valid.min()), "max": float(valid.max()),
            "quantiles": {f"{q:g}": float(v) for q, v in zip(QUANTILES, np.quantile(valid, QUANTILES))},
        }
        summary["expected_utility"] = {"value": m, "std_error": se, "n_effective": n, "n_floored": floored}
    if strategy.kind == "optimal":
        rel = np.concatenate([p["rel"] for p in parts])
        rel = rel[np.isfinite(rel)]
        summary["replication_rms_rel"] = float(np.sqrt(np.mean(rel**2))) if rel.size else None
        summary["closed_form_expected_utility"] = cf.primal_value(spec)
    summary["dump_paths"] = dump_n
    return summary, dump


def cmd_simulate(cfg: RunConfig, fmt: str = "json", threads: int = 1):
    summary, dump = run_simulation(cfg, threads)
    path = cfg.section("simulate")["dump_path"]
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(dump)
        summary["dump_file"] = path
    if fmt == "csv":
        return dump, EXIT_OK
    return _dumps(summary), EXIT_OK


def cmd_verify(cfg: RunConfig, fmt: str = "json", threads: int = 1):
    report = vf.run_battery(cfg.spec, cfg.grid, cfg.verify_options(), threads=threads)
    code = EXIT_OK if report.passed else EXIT_CHECK_FAILED
    if not report.passed:
        log.error("failed checks: %s", ", ".join(report.failed_checks()))
    if fmt == "csv":
        rows = [(name, c["passed"], c["value"], c.get("std_error", "")) for name, c in sorted(report.checks.items())]
        return _csv(["check", "passed", "value", "std_error"], rows), code
    return report.to_json() + "\n", code


def sweep_rows(cfg: RunConfig) -> list[dict]:
    """Long-format rows ``{gamma, eta, theta, e0, horizon_T, metric, value}``."""
    opts = cfg.section("sweep")
    axes = opts["axes"]
    if not axes:
        raise ValidationError("sweep needs at least one axis", code="EmptyAxis", field="sweep.axes")
    for name, values in axes.items():
        if not values:
            raise ValidationError(f"sweep axis {name!r} is empty", code="EmptyAxis", field=f"sweep.axes.{name}")
    names = [a for a in SWEEP_AXES if a in axes]
    base = cfg.spec
    welfare = opts["welfare"]
    rows = []
    for combo in itertools.product(*(axes[a] for a in names)):
        point = dict(zip(names, combo))
        changes = {k: v for k, v in point.items() if k != "theta"}
        if "theta" in point:
            changes["lambda_excess"] = point["theta"] * base.sigma
        spec = base.replace(**changes) if changes else base
        pm, s = cf.merton_fraction(spec), cf.shift_scale(spec)
        b0 = cf.beta(spec, 0.0)
        metrics = {
            "pi_merton": pm,
            "shift_scale": s,
            "beta0": b0,
            "shift_t0": b0 * s * spec.e0 / spec.x0,
            "endow_price_T": cf.endowment_price(spec, spec.T),
            "primal_value": cf.primal_value(spec),
        }
        if welfare is not None:
            grid = sm.GridConfig(welfare.get("n_steps", 128), welfare.get("n_paths", 20000), welfare.get("seed", 0))
            ens = sm.generate_paths(spec, grid)
            est = vf.dominance_test(spec, ens, sm.merton(spec))
            metrics["welfare_gap_vs_merton"] = est.value
            metrics["welfare_gap_se"] = est.std_error
        key = {"gamma": spec.gamma, "eta": spec.eta, "theta": spec.theta, "e0": spec.e0, "horizon_T": spec.T}
        for metric, value in metrics.items():
            rows.append({**key, "metric": metric, "value": float(value)})
    return rows


def cmd_sweep(cfg: RunConfig, fmt: str = "csv", threads: int = 1):
    rows = sweep_rows(cfg)
    if fmt == "csv":
        cols = [*SWEEP_AXES, "metric", "value"]
        return _csv(cols, ([r[c] for c in cols] for r in rows)), EXIT_OK
    return _dumps({**_envelope(cfg, "sweep"), "rows": rows}), EXIT_OK


COMMANDS = {
    "price": cmd_price,
    "strategy": cmd_strategy,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="endow-opt", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--format", choices=("json", "csv"), default=None,
                   help="output format (default: csv for sweep, json otherwise)")
    p.add_argument("--threads", type=int, default=None, help="worker cap; results do not depend on it")
    p.add_argument("--seed", type=int, default=None, help="override grid.seed")
    p.add_argument("--debug-lambda-scale", type=float, default=None,
                   help=argparse.SUPPRESS)
    p.add_argument("--log-level", default="WARNING")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            print(f"error[IO]: cannot read config {args.config}: {exc}", file=sys.stderr)
            return EXIT_IO
        cfg = RunConfig.from_json(text)
        if args.seed is not None:
            cfg = replace(cfg, grid=sm.GridConfig(cfg.grid.n_steps, cfg.grid.n_paths, args.seed))
        if args.debug_lambda_scale is not None:
            cfg.sections["verify"]["debug_lambda_scale"] = args.debug_lambda_scale
        threads = sm.resolve_threads(args.threads)
        fmt = args.format or ("csv" if args.command == "sweep" else "json")
        text, code = COMMANDS[args.command](cfg, fmt, threads)
    except EndowOptError as exc:
        where = f" {exc.field}:" if getattr(exc, "field", None) else ""
        print(f"error[{exc.code}]{where} {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error[IO]: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        if args.out:
            with open(args.out, "w", newline="") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
    except OSError as exc:
        print(f"error[IO]: cannot write {args.out}: {exc}", file=sys.stderr)
        return EXIT_IO
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
