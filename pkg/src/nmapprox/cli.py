"""Command-line front end.

Every command writes a CSV table (fixed header per command, RFC 4180, 17
significant digits) to ``--out`` when given, and prints one JSON summary on
standard output with the effective configuration, the rows and, when an
r-grid has at least two points, a log-log rate fit.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 budget exceeded.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .distribution import ModelParams, derive, log_pmf
from .divergences import (
    bulk_exit_frequency,
    hellinger_jittered_vs_gaussian,
    bulk_tail_bound,
    tv_jittered_vs_gaussian,
)
from .errors import BudgetExceededError, InvalidParameterError, NMApproxError, NumericalError, OutOfBulkError
from .expansion import BulkSpec, evaluate_expansion, residual_sweep
from .lecam import ExperimentFamily, ParameterSet, deficiency_upper, stabilized_distance_check, theta_grid
from .moments import (
    MomentIndex,
    all_indices,
    brute_force_moment,
    central_moment_formula,
    moment_box_limit,
    truncated_moment_bound_check,
    truncation_bound,
)
from .rates import fit_rate

__all__ = ["main", "HEADERS", "COMMANDS", "ExperimentConfig", "parse_r_grid"]

COMMANDS = ("pmf", "expansion", "rate-fit", "moments", "hellinger", "tv", "lecam", "tail-bound")

HEADERS = {
    "pmf": ("r", "p", "k", "log_pmf", "pmf"),
    "expansion": ("r", "k", "log_ratio_exact", "f_term", "s_term", "residual", "normalized_residual"),
    "rate-fit": ("r", "terms", "n_points", "max_residual", "normalized_residual", "argmax_k"),
    "moments": (
        "r", "indices", "formula", "brute_force", "abs_diff", "tolerance", "agrees",
        "bound_lhs", "bound_rhs", "bound_holds",
    ),
    "hellinger": ("r", "method", "value", "std_error", "n", "h2", "quadrature_error", "clipped"),
    "tv": ("r", "method", "value", "std_error", "n", "quadrature_error"),
    "lecam": ("r", "kernel", "sup_tv", "estimator_error", "argmax_p", "h_q_qtilde", "stabilized_proxy"),
    "tail-bound": ("r", "gamma", "bound", "exit_frequency", "std_error", "n"),
}

DEFAULTS: dict[str, Any] = {
    "d": None,
    "r": None,
    "r_grid": None,
    "p": None,
    "p_grid": None,
    "k": None,
    "gamma": 1.0,
    "budget": None,
    "seed": 0,
    "method": "quadrature",
    "out": None,
    "threads": None,
    "b": 0.25,
    "grid_n": 5,
    "terms": "full",
    "kernel": "both",
}

DEFAULT_BUDGET = {
    "pmf": 50_000_000,
    "expansion": 50_000_000,
    "rate-fit": 100_000,
    "moments": 50_000_000,
    "hellinger": 1_000_000,
    "tv": 1_000_000,
    "lecam": 20_000_000,
    "tail-bound": 100_000,
}

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_BUDGET = 4


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    r_grid: tuple[float, ...]
    p: tuple[float, ...] | None
    p_grid: tuple[tuple[float, ...], ...] | None
    k: tuple[tuple[int, ...], ...] | None
    gamma: float
    budget: int
    seed: int
    method: str
    out: str | None
    threads: int | None
    b: float
    grid_n: int
    terms: str
    kernel: str
    d: int | None = None
    extras: dict[str, Any] = field(default_factory=dict, compare=False)

    def echo(self) -> dict[str, Any]:
        # Thread count and output path do not change results, so they are not echoed.
        return {
            "command": self.command,
            "d": self.d,
            "r_grid": list(self.r_grid),
            "p": list(self.p) if self.p is not None else None,
            "p_grid": [list(v) for v in self.p_grid] if self.p_grid is not None else None,
            "k": [list(v) for v in self.k] if self.k is not None else None,
            "gamma": self.gamma,
            "budget": self.budget,
            "seed": self.seed,
            "method": self.method,
            "b": self.b,
            "grid_n": self.grid_n,
            "terms": self.terms,
            "kernel": self.kernel,
        }

    def model(self, r: float) -> ModelParams:
        if self.p is None:
            raise ConfigError(f"command {self.command!r} needs --p")
        return ModelParams(r, self.p)


def parse_r_grid(text: str) -> tuple[float, ...]:
    """``lo:hi:factor`` -> ``lo, lo*factor, ...`` up to ``hi`` (inclusive)."""
    try:
        lo, hi, factor = (float(v) for v in text.split(":"))
    except ValueError:
        raise ConfigError(f"--r-grid must look like lo:hi:factor, got {text!r}") from None
    if not (lo > 0 and hi >= lo and factor > 1):
        raise ConfigError("--r-grid needs 0 < lo <= hi and factor > 1")
    out = []
    i = 0
    while True:
        v = lo * factor**i
        if v > hi * (1 + 1e-12):
            break
        out.append(v)
        i += 1
    return tuple(out)


def _floats(text, name: str) -> tuple[float, ...]:
    if isinstance(text, (list, tuple)):
        vals = text
    else:
        vals = [v for v in str(text).split(",") if v.strip()]
    try:
        return tuple(float(v) for v in vals)
    except (TypeError, ValueError):
        raise ConfigError(f"--{name} must be a comma-separated list of numbers") from None


def _points(text, name: str, conv: Callable) -> tuple[tuple, ...]:
    if isinstance(text, (list, tuple)):
        groups = [g if isinstance(g, (list, tuple)) else [g] for g in text]
    else:
        groups = [[v for v in g.split(",") if v.strip()] for g in str(text).split(";") if g.strip()]
    try:
        return tuple(tuple(conv(v) for v in g) for g in groups)
    except (TypeError, ValueError):
        raise ConfigError(f"--{name} must be ';'-separated points of ','-separated numbers") from None


def _int_coord(v) -> int:
    f = float(v)
    if f != round(f):
        raise ValueError(v)
    return int(round(f))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nmapprox", description="Negative multinomial approximation experiments.")
    ap.add_argument("command", choices=COMMANDS)
    s = argparse.SUPPRESS
    ap.add_argument("--config", default=None, help="JSON file with option values (flags take precedence)")
    ap.add_argument("--d", type=int, default=s, help="dimension (checked against --p)")
    ap.add_argument("--r", type=float, default=s, help="single stopping parameter")
    ap.add_argument("--r-grid", dest="r_grid", default=s, help="geometric grid lo:hi:factor")
    ap.add_argument("--p", default=s, help="cell probabilities v1,v2,...")
    ap.add_argument("--p-grid", dest="p_grid", default=s, help="parameter grid for lecam: p1;p2;... each v1,v2")
    ap.add_argument("--k", default=s, help="lattice point(s): k1,k2;k1,k2")
    ap.add_argument("--gamma", type=float, default=s)
    ap.add_argument("--budget", type=float, default=s, help="draws, cells or summands allowed")
    ap.add_argument("--seed", type=int, default=s)
    ap.add_argument("--method", choices=("quadrature", "mc", "both"), default=s)
    ap.add_argument("--out", default=s, help="CSV output path")
    ap.add_argument("--threads", type=int, default=s, help="worker threads (default: all cores)")
    ap.add_argument("--b", type=float, default=s, help="lower bound on min(p0, p) for lecam grids")
    ap.add_argument("--grid-n", dest="grid_n", type=int, default=s, help="grid points per axis for lecam")
    ap.add_argument("--terms", choices=("full", "no-S", "none"), default=s)
    ap.add_argument("--kernel", choices=("T1", "T2", "both"), default=s)
    return ap


def _load_config_file(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    data = {k.replace("-", "_"): v for k, v in data.items()}
    unknown = set(data) - set(DEFAULTS) - {"command"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return data


def resolve_config(argv: Sequence[str] | None) -> ExperimentConfig:
    ns = build_parser().parse_args(argv)
    flags = {k: v for k, v in vars(ns).items() if k not in ("command", "config")}
    file_vals = _load_config_file(ns.config)
    if "command" in file_vals and file_vals.pop("command") != ns.command:
        raise ConfigError("config file command does not match the command line")
    merged = {**DEFAULTS, **file_vals, **flags}
    command = ns.command

    if merged["r_grid"] is not None:
        rg = merged["r_grid"]
        r_grid = tuple(float(v) for v in rg) if isinstance(rg, list) else parse_r_grid(str(rg))
    elif merged["r"] is not None:
        r_grid = (float(merged["r"]),)
    else:
        raise ConfigError("give --r or --r-grid")
    if any(not (math.isfinite(r) and r > 0) for r in r_grid):
        raise ConfigError("r values must be positive")
    if any(b <= a for a, b in zip(r_grid, r_grid[1:])):
        raise ConfigError("r grid must be strictly increasing")
    if command == "rate-fit" and len(r_grid) < 2:
        raise ConfigError("rate-fit needs an r grid with at least two entries")

    p = _floats(merged["p"], "p") if merged["p"] is not None else None
    p_grid = _points(merged["p_grid"], "p-grid", float) if merged["p_grid"] is not None else None
    k = _points(merged["k"], "k", _int_coord) if merged["k"] is not None else None
    d = merged["d"]
    if d is not None:
        d = int(d)
        if p is not None and len(p) != d:
            raise ConfigError(f"--d={d} but --p has {len(p)} entries")
    budget = merged["budget"] if merged["budget"] is not None else DEFAULT_BUDGET[command]
    if not (float(budget) >= 1 and float(budget) == int(float(budget))):
        raise ConfigError("budget must be a positive integer")
    gamma = float(merged["gamma"])
    if not gamma > 0:
        raise ConfigError("gamma must be positive")
    return ExperimentConfig(
        command=command,
        r_grid=r_grid,
        p=p,
        p_grid=p_grid,
        k=k,
        gamma=gamma,
        budget=int(float(budget)),
        seed=int(merged["seed"]),
        method=str(merged["method"]),
        out=merged["out"],
        threads=merged["threads"],
        b=float(merged["b"]),
        grid_n=int(merged["grid_n"]),
        terms=str(merged["terms"]),
        kernel=str(merged["kernel"]),
        d=d,
    )


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, (tuple, list)):
        return ";".join(_fmt(x) for x in v)
    return str(v)


def render_csv(command: str, rows: list[dict[str, Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    header = HEADERS[command]
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(row.get(h)) for h in header])
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if math.isfinite(f) else None
    return v


def _fit_summary(pairs: list[tuple[float, float]]) -> dict[str, Any] | None:
    if len(pairs) < 2:
        return None
    fit = fit_rate(pairs)
    return {
        "slope": fit.slope,
        "intercept": fit.intercept,
        "r_squared": fit.r_squared,
        "slope_stderr": fit.slope_stderr,
        "ci95": list(fit.ci95),
    }


# Commands -----------------------------------------------------------------


def cmd_pmf(cfg: ExperimentConfig):
    if cfg.k is None:
        raise ConfigError("pmf needs --k")
    rows = []
    for r in cfg.r_grid:
        m = cfg.model(r)
        for k in cfg.k:
            lp = log_pmf(m, k)
            rows.append({"r": r, "p": m.p, "k": k, "log_pmf": lp, "pmf": math.exp(lp)})
    return rows, {"log_pmf": rows[0]["log_pmf"] if len(rows) == 1 else None}


def cmd_expansion(cfg: ExperimentConfig):
    if cfg.k is None:
        raise ConfigError("expansion needs --k")
    rows = []
    spec = BulkSpec(cfg.gamma)
    for r in cfg.r_grid:
        m = cfg.model(r)
        for k in cfg.k:
            e = evaluate_expansion(m, spec, k)
            rows.append(
                {
                    "r": r,
                    "k": k,
                    "log_ratio_exact": e.log_ratio_exact,
                    "f_term": e.f_term,
                    "s_term": e.s_term,
                    "residual": e.residual,
                    "normalized_residual": e.normalized_residual,
                }
            )
    return rows, {}


def cmd_rate_fit(cfg: ExperimentConfig):
    spec = BulkSpec(cfg.gamma)
    rows = []
    for r in cfg.r_grid:
        sw = residual_sweep(cfg.model(r), spec, terms=cfg.terms, max_points=cfg.budget, seed=cfg.seed)
        rows.append(
            {
                "r": r,
                "terms": cfg.terms,
                "n_points": sw.n_points,
                "max_residual": sw.max_residual,
                "normalized_residual": sw.max_normalized,
                "argmax_k": sw.argmax_normalized,
            }
        )
    return rows, {"fit": _fit_summary([(row["r"], row["normalized_residual"]) for row in rows])}


def cmd_moments(cfg: ExperimentConfig):
    spec = BulkSpec(cfg.gamma)
    rows = []
    gaps = []
    all_agree = True
    all_hold = True
    for r in cfg.r_grid:
        m = cfg.model(r)
        derived = derive(m)
        for order in (1, 2, 3, 4):
            idxs = all_indices(m.d, order) if order < 4 else [MomentIndex((i,) * 4) for i in range(1, m.d + 1)]
            limit = moment_box_limit(m, order)
            for idx in idxs:
                formula = central_moment_formula(derived, r, idx)
                brute = brute_force_moment(m, idx, limit, budget=cfg.budget)
                diff = abs(brute - formula)
                row = {"r": r, "indices": idx.indices, "formula": formula, "brute_force": brute, "abs_diff": diff}
                if order < 4:
                    tol = max(1e-6, truncation_bound(m, idx, limit))
                    row.update(tolerance=tol, agrees=diff <= tol)
                    all_agree &= diff <= tol
                    bc = truncated_moment_bound_check(m, idx, spec, limit)
                    row.update(bound_lhs=bc.lhs, bound_rhs=bc.rhs, bound_holds=bc.holds)
                    all_hold &= bc.holds
                elif idx.indices[0] == 1:
                    gaps.append((r, diff))
                rows.append(row)
    fit = _fit_summary(gaps) if all(g > 0 for _, g in gaps) else None
    return rows, {"all_agree": all_agree, "all_bounds_hold": all_hold, "fourth_moment_gap_fit": fit}


def _methods(cfg: ExperimentConfig) -> list[str]:
    return ["quadrature", "mc"] if cfg.method == "both" else [cfg.method]


def cmd_hellinger(cfg: ExperimentConfig):
    rows = []
    for r in cfg.r_grid:
        m = cfg.model(r)
        for method in _methods(cfg):
            if method == "quadrature":
                est = hellinger_jittered_vs_gaussian(m, threads=cfg.threads)
            else:
                est = hellinger_jittered_vs_gaussian(m, "mc", budget=cfg.budget, seed=cfg.seed, threads=cfg.threads)
            rows.append(
                {
                    "r": r,
                    "method": method,
                    "value": est.value,
                    "std_error": est.std_error,
                    "n": est.n,
                    "h2": est.extras.get("h2"),
                    "quadrature_error": est.extras.get("quadrature_error"),
                    "clipped": est.extras.get("clipped"),
                }
            )
    return rows, _per_method_summary(cfg, rows)


def cmd_tv(cfg: ExperimentConfig):
    rows = []
    for r in cfg.r_grid:
        m = cfg.model(r)
        for method in _methods(cfg):
            if method == "quadrature":
                est = tv_jittered_vs_gaussian(m, threads=cfg.threads)
            else:
                est = tv_jittered_vs_gaussian(m, "mc", budget=cfg.budget, seed=cfg.seed, threads=cfg.threads)
            rows.append(
                {
                    "r": r,
                    "method": method,
                    "value": est.value,
                    "std_error": est.std_error,
                    "n": est.n,
                    "quadrature_error": est.extras.get("quadrature_error"),
                }
            )
    return rows, _per_method_summary(cfg, rows)


def _per_method_summary(cfg: ExperimentConfig, rows) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for method in _methods(cfg):
        sel = [(row["r"], row["value"]) for row in rows if row["method"] == method]
        out[f"fit_{method}"] = _fit_summary(sel) if all(v > 0 for _, v in sel) else None
    if cfg.method == "both":
        z = []
        for r in cfg.r_grid:
            a, b = (row for row in rows if row["r"] == r)
            se = math.hypot(a["std_error"], b["std_error"])
            z.append(abs(a["value"] - b["value"]) / se if se > 0 else float("inf"))
        out["max_cross_method_z"] = max(z)
    return out


def cmd_lecam(cfg: ExperimentConfig):
    if cfg.p_grid is not None:
        pset = ParameterSet(cfg.b, tuple(ModelParams(1.0, p) for p in cfg.p_grid))
    else:
        if cfg.d is None:
            raise ConfigError("lecam needs --p-grid or --d")
        pset = theta_grid(cfg.b, cfg.d, cfg.grid_n)
    kernels = ["T1", "T2"] if cfg.kernel == "both" else [cfg.kernel]
    rows = []
    for r in cfg.r_grid:
        nm = ExperimentFamily("nm", pset, r)
        gauss = ExperimentFamily("gaussian-matched", pset, r)
        for kernel in kernels:
            src, dst = (nm, gauss) if kernel == "T1" else (gauss, nm)
            est = deficiency_upper(src, dst, kernel, budget=cfg.budget, seed=cfg.seed, threads=cfg.threads)
            h, proxy = stabilized_distance_check(est.sup_attained_at, r, pset)
            rows.append(
                {
                    "r": r,
                    "kernel": kernel,
                    "sup_tv": est.value,
                    "estimator_error": est.estimator_error,
                    "argmax_p": est.sup_attained_at.p,
                    "h_q_qtilde": h,
                    "stabilized_proxy": proxy,
                }
            )
    summary = {}
    for kernel in kernels:
        sel = [(row["r"], row["sup_tv"]) for row in rows if row["kernel"] == kernel]
        summary[f"fit_{kernel}"] = _fit_summary(sel) if all(v > 0 for _, v in sel) else None
    return rows, summary


def cmd_tail_bound(cfg: ExperimentConfig):
    rows = []
    for r in cfg.r_grid:
        m = cfg.model(r)
        freq, se = bulk_exit_frequency(m, cfg.gamma, cfg.budget, cfg.seed, threads=cfg.threads)
        rows.append(
            {
                "r": r,
                "gamma": cfg.gamma,
                "bound": bulk_tail_bound(m),
                "exit_frequency": freq,
                "std_error": se,
                "n": cfg.budget,
            }
        )
    return rows, {"bound_holds": all(row["exit_frequency"] <= row["bound"] + 3 * row["std_error"] for row in rows)}


RUNNERS = {
    "pmf": cmd_pmf,
    "expansion": cmd_expansion,
    "rate-fit": cmd_rate_fit,
    "moments": cmd_moments,
    "hellinger": cmd_hellinger,
    "tv": cmd_tv,
    "lecam": cmd_lecam,
    "tail-bound": cmd_tail_bound,
}


def run(cfg: ExperimentConfig) -> tuple[str, dict[str, Any]]:
    """Execute one command; return the CSV text and the JSON summary object."""
    rows, extra = RUNNERS[cfg.command](cfg)
    summary = {"config": cfg.echo(), "header": list(HEADERS[cfg.command]), "rows": rows, **extra}
    return render_csv(cfg.command, rows), _jsonable(summary)


def _diagnose(exc: BaseException) -> str:
    module = getattr(exc, "module", None) or "nmapprox.cli"
    return f"nmapprox: error [{module}]: {exc}"


def main(argv: Sequence[str] | None = None) -> int:
    try:
        cfg = resolve_config(argv)
        csv_text, summary = run(cfg)
    except SystemExit as exc:  # argparse usage errors
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    except ConfigError as exc:
        print(_diagnose(exc), file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExceededError as exc:
        print(_diagnose(exc), file=sys.stderr)
        return EXIT_BUDGET
    except (NumericalError, OutOfBulkError) as exc:
        print(_diagnose(exc), file=sys.stderr)
        return EXIT_NUMERIC
    except (InvalidParameterError, NMApproxError) as exc:
        print(_diagnose(exc), file=sys.stderr)
        return EXIT_CONFIG
    except IndexError as exc:
        print(_diagnose(exc), file=sys.stderr)
        return EXIT_CONFIG
    if cfg.out is not None:
        with open(cfg.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(csv_text)
    sys.stdout.write(json.dumps(summary, indent=2, sort_keys=False) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
