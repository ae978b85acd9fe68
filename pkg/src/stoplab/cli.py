"""Command-line driver for reproducible stopping-problem experiments.

Commands: solve | smoothfit | regularity | lagrange | all.  Configuration is
a flat key = value file plus per-key command-line overrides; every run is
deterministic under a fixed config (seed included), and all artifacts (CSV
tables, self-contained SVG plots) are byte-identical across repeats.

Exit codes: 0 success, 1 numerical failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .diagnostics import green_scan, stable_boundary_check
from .flowsim import GbmParams
from .putsolver import (
    Boundary,
    ExtractionError,
    FdConfig,
    SolverError,
    ValueGrid,
    extract_boundary,
    price_put_fd,
)
from .smoothfit import (
    ResolutionError,
    lagrange_check,
    lipschitz_bound_check,
    lipschitz_constant,
    space_fit_limit,
    time_fit_limit,
)

__all__ = ["RunConfig", "load_config", "main"]


@dataclass
class RunConfig:
    """Flat experiment configuration; every key can come from the config file
    or a --key value override."""

    strike: float = 100.0
    r: float = 0.05
    sigma: float = 0.2
    horizon: float = 1.0
    n_time: int = 500
    n_space: int = 2000
    x_min: float | None = None
    x_max: float | None = None
    fit_tol: float | None = None
    psor_tol: float | None = None
    n_paths: int = 20_000
    dt: float = 1e-4
    seed: int = 0
    bridge: bool = True
    scan_t: float = 0.5
    n_terms: int = 8
    eta0: float = 0.1
    eps_list: tuple[float, ...] = (0.01, 0.02, 0.05, 0.1)
    fit_terms: int = 4
    fit_times: tuple[float, ...] = (0.1, 0.3, 0.5, 0.7, 0.9)
    lagrange_t: float = 0.5
    lagrange_x: tuple[float, ...] = (95.0, 102.0, 110.0, 125.0)
    lip_eps: tuple[float, ...] = (0.01, 0.02, 0.05)
    out: str = "out"

    def params(self) -> GbmParams:
        return GbmParams(r=self.r, sigma=self.sigma, strike=self.strike, horizon=self.horizon)

    def fd_config(self) -> FdConfig:
        return FdConfig(
            n_time=self.n_time,
            n_space=self.n_space,
            x_min=self.x_min,
            x_max=self.x_max,
            fit_tol=self.fit_tol,
            psor_tol=self.psor_tol,
        )


class ConfigError(ValueError):
    """Bad configuration: unknown key, unparsable value, or missing file."""


def _coerce(key: str, text: str):
    hints = {f.name: f.type for f in fields(RunConfig)}
    if key not in hints:
        raise ConfigError(f"unknown configuration key: {key!r}")
    hint = hints[key]
    text = text.strip()
    try:
        if hint.startswith("tuple"):
            return tuple(float(p) for p in text.split(",") if p.strip())
        if hint == "bool":
            if text.lower() in ("true", "1", "yes", "on"):
                return True
            if text.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if hint == "int":
            return int(text)
        if hint == "str":
            return text
        # float and float | None
        if text.lower() == "none":
            return None
        return float(text)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"cannot parse value for {key!r}: {text!r}") from exc


def load_config(path: str | Path) -> dict:
    """Parse a flat key = value config file; '#' starts a comment."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    out: dict = {}
    for lineno, line in enumerate(p.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{p}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        out[key] = _coerce(key, value)
    return out


def _build_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if args.config is not None:
        values.update(load_config(args.config))
    for f in fields(RunConfig):
        raw = getattr(args, f.name, None)
        if raw is not None:
            values[f.name] = _coerce(f.name, raw) if isinstance(raw, str) else raw
    if getattr(args, "out_flag", None) is not None:
        values["out"] = args.out_flag
    if getattr(args, "seed_flag", None) is not None:
        values["seed"] = int(args.seed_flag)
    return RunConfig(**values)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.12g}"


def _write_csv(path: Path, header: str, rows) -> None:
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _savefig(fig, path: Path) -> None:
    # Fixed hash salt and no date metadata: identical configs give
    # byte-identical SVG artifacts.
    import matplotlib

    matplotlib.rcParams["svg.hashsalt"] = "stoplab"
    fig.savefig(path, format="svg", metadata={"Date": None})


def _solve(cfg: RunConfig) -> tuple[ValueGrid, Boundary]:
    grid = price_put_fd(cfg.params(), cfg.fd_config())
    boundary = extract_boundary(grid)
    return grid, boundary


def cmd_solve(cfg: RunConfig, out: Path, report: dict) -> None:
    """Solve the put and write value.csv / boundary.csv."""
    grid, boundary = _solve(cfg)
    nt, nx = len(grid.t_grid), len(grid.x_grid)
    t_col = np.repeat(grid.t_grid, nx)
    x_col = np.tile(grid.x_grid, nt)
    rows = zip(t_col, x_col, grid.values.ravel(), grid.exercise.ravel().astype(int))
    _write_csv(out / "value.csv", "t,x,V,exercise", rows)
    _write_csv(out / "boundary.csv", "t,b", zip(boundary.t_grid, boundary.b))
    report["solve"] = {
        "value_at_strike": grid.value_at(0.0, cfg.strike),
        "boundary_at_0": float(boundary.b[0]),
        "boundary_at_horizon": float(boundary.b[-1]),
        "pre_projection_violation": boundary.pre_projection_violation,
    }


def cmd_smoothfit(cfg: RunConfig, out: Path, report: dict) -> None:
    """Boundary derivative limits at the configured times; CSV plus SVG."""
    grid, boundary = _solve(cfg)
    rows = []
    entries = []
    for t in cfg.fit_times:
        b_t = float(boundary(t))
        for kind, fit in (
            ("space", space_fit_limit(grid, boundary, (t, b_t), n_terms=cfg.fit_terms, eta0=cfg.eta0)),
            ("time", time_fit_limit(grid, boundary, (t, b_t), n_terms=cfg.fit_terms, eta0=cfg.eta0)),
        ):
            for n, x_n, est in zip(fit.n_values, fit.x_n, fit.estimates):
                rows.append((t, kind, n, x_n, est, fit.extrapolated, fit.target, fit.discrepancy))
            entries.append(
                {
                    "t": t,
                    "kind": kind,
                    "extrapolated": fit.extrapolated,
                    "target": fit.target,
                    "discrepancy": fit.discrepancy,
                    "rate": fit.rate,
                    "c": fit.c_bound,
                }
            )
    with open(out / "smoothfit.csv", "w") as fh:
        fh.write("t,kind,n,x_n,estimate,extrapolated,target,discrepancy\n")
        for t, kind, n, x_n, est, extr, target, disc in rows:
            fh.write(
                f"{_fmt(t)},{kind},{int(n)},{_fmt(x_n)},{_fmt(est)},{_fmt(extr)},{_fmt(target)},{_fmt(disc)}\n"
            )
    report["smoothfit"] = entries

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    for kind, ax, target in (("space", axes[0], -1.0), ("time", axes[1], 0.0)):
        for t in cfg.fit_times:
            pts = [(n, est) for (tt, kk, n, _, est, *_rest) in rows if tt == t and kk == kind]
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"t={t:g}")
        ax.axhline(target, color="k", lw=0.8, ls="--")
        ax.set_xlabel("approach index n")
        ax.set_ylabel(f"{kind} derivative estimate")
        ax.legend(fontsize=7)
    fig.tight_layout()
    _savefig(fig, out / "smoothfit.svg")
    plt.close(fig)


def cmd_regularity(cfg: RunConfig, out: Path, report: dict) -> None:
    """Entry-time tail scan and the region-vs-interior hitting comparison."""
    grid, boundary = _solve(cfg)
    t = cfg.scan_t
    b_t = float(boundary(t))
    scan = green_scan(
        boundary,
        cfg.params(),
        (t, b_t),
        n_terms=cfg.n_terms,
        eps_list=cfg.eps_list,
        n_paths=cfg.n_paths,
        dt=cfg.dt,
        seed=cfg.seed,
        eta0=cfg.eta0,
        bridge=cfg.bridge,
    )
    rows = []
    for i, n in enumerate(scan.n_values):
        for j, eps in enumerate(scan.eps_list):
            rows.append((n, scan.x_n[i], eps, scan.p_hat[i, j], scan.se[i, j], scan.mean_tau[i]))
    _write_csv(out / "green_scan.csv", "n,x_n,eps,p_hat,se,mean_tau", rows)

    stable = stable_boundary_check(
        boundary, cfg.params(), (t, b_t), n_paths=cfg.n_paths, dt=cfg.dt, seed=cfg.seed
    )
    _write_csv(
        out / "stable.csv",
        "t,delta,threshold,budget,fraction_exceeding,mean_difference,passed",
        [
            (
                stable.t,
                stable.delta,
                stable.threshold,
                stable.budget,
                stable.fraction_exceeding,
                stable.mean_difference,
                stable.passed,
            )
        ],
    )
    report["regularity"] = {
        "monotone": scan.monotone,
        "final_p_hat": {f"{eps:g}": float(scan.p_hat[-1, j]) for j, eps in enumerate(scan.eps_list)},
        "stable_fraction_exceeding": stable.fraction_exceeding,
        "stable_passed": stable.passed,
    }

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for j, eps in enumerate(scan.eps_list):
        ax.errorbar(scan.n_values, scan.p_hat[:, j], yerr=scan.se[:, j], marker="o", label=f"eps={eps:g}")
    ax.set_xlabel("approach index n")
    ax.set_ylabel("P(tau >= eps)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    _savefig(fig, out / "green_scan.svg")
    plt.close(fig)


def cmd_lagrange(cfg: RunConfig, out: Path, report: dict) -> None:
    """Local-time identity checks and the time-increment bound."""
    grid, boundary = _solve(cfg)
    params = cfg.params()
    t = cfg.lagrange_t
    c = lipschitz_constant(params, t)
    rows = []
    entries = []
    for x in cfg.lagrange_x:
        rep = lagrange_check(grid, boundary, params, (t, x), cfg.n_paths, cfg.dt, cfg.seed)
        rows.append((rep.t, rep.x, rep.lhs, rep.rhs, rep.se, rep.z_score, c))
        entries.append({"t": rep.t, "x": rep.x, "lhs": rep.lhs, "rhs": rep.rhs, "se": rep.se, "z": rep.z_score})
    _write_csv(out / "lagrange.csv", "t,x,lhs,rhs,se,z,c", rows)

    bound = lipschitz_bound_check(grid, params, t, cfg.lip_eps, c=c)
    _write_csv(
        out / "lipschitz.csv",
        "t,eps,c,slack,n_violations,worst_margin",
        [(bound.t, eps, bound.c, bound.slack, bound.n_violations, bound.worst_margin) for eps in bound.eps_list],
    )
    report["lagrange"] = {
        "points": entries,
        "c": c,
        "lipschitz_violations": bound.n_violations,
        "worst_margin": bound.worst_margin,
    }


_COMMANDS = {
    "solve": (cmd_solve,),
    "smoothfit": (cmd_smoothfit,),
    "regularity": (cmd_regularity,),
    "lagrange": (cmd_lagrange,),
    "all": (cmd_solve, cmd_smoothfit, cmd_regularity, cmd_lagrange),
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stoplab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="flat key = value configuration file")
        p.add_argument("--out", dest="out_flag", default=None, help="output directory")
        p.add_argument("--seed", dest="seed_flag", default=None, type=int, help="master seed")
        p.add_argument("--json", action="store_true", help="print a machine-readable report to stdout")
        for f in fields(RunConfig):
            if f.name in ("out", "seed"):
                continue
            p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, default=None, metavar="V")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _build_config(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        report: dict = {"command": args.command, "config": {f.name: getattr(cfg, f.name) for f in fields(RunConfig)}}
        for step in _COMMANDS[args.command]:
            step(cfg, out, report)
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, ExtractionError, ResolutionError, RuntimeError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    if args.json:
        json.dump(report, sys.stdout, indent=2, default=_json_default)
        print()
    else:
        for key, val in report.items():
            if key in ("command", "config"):
                continue
            print(f"{key}: {json.dumps(val, default=_json_default)}")
    return 0


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


if __name__ == "__main__":
    sys.exit(main())
