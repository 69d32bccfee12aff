"""``fracplap`` command-line entry point.

Exit status: 0 when every non-vacuous assertion passes, 1 when one fails,
2 on configuration or runtime errors.
"""
from __future__ import annotations

import argparse
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import operator as op_mod
from .config import COMMANDS, ConfigError, RunConfig, parse_config
from .core import (ExteriorRule, Field, Grid, ball, half_space, make_allen_cahn, make_fisher_kpp,
                   perforated_shells, perforated_slabs, periodic_tangential, read_field_csv, strip,
                   write_field_csv)
from .operator import QuadratureConfig, eval_field
from .solvers import (Instability, NonConvergence, NotSlidable, ProblemSpec, SignViolation,
                      SolveConfig, dense_eigen, eigen_principal, slide_compare, solve_steady,
                      tau_zero_estimate)
from .verify import SUITES, SuiteReport, run_all

__all__ = ["main", "dispatch", "EXIT_OK", "EXIT_FAIL", "EXIT_ERROR"]

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2

_RUNTIME_ERRORS = (ConfigError, ValueError, NonConvergence, Instability, SignViolation,
                   NotSlidable, OSError)


# ---------------------------------------------------------------------------
# builders

def _quadrature(cfg: RunConfig) -> QuadratureConfig:
    op = cfg.operator
    return QuadratureConfig(op.get("delta_split", 1.0), op.get("tail_radius"), op.get("cell_rule", "gauss"))


def _nonlinearity(cfg: RunConfig):
    return make_fisher_kpp() if cfg.nonlinearity.get("kind") == "fisher_kpp" else make_allen_cahn()


def _grid(cfg: RunConfig, default: Grid) -> Grid:
    g = cfg.grid
    if "counts" not in g and "origin" not in g:
        if "h" in g or "length" in g:
            h = g.get("h", default.h)
            length = g.get("length", (default.counts[0] - 1) * default.h)
            return Grid(default.origin, h, (int(round(length / h)) + 1,) * default.dim)
        return default
    origin = g.get("origin", default.origin)
    counts = g.get("counts", default.counts)
    if len(counts) == 1 and len(origin) > 1:
        counts = counts * len(origin)
    return Grid(origin, g.get("h", default.h), counts, g.get("truncation_radius"))


def _domain(cfg: RunConfig, dim: int, default: str = "half_space"):
    d = cfg.domain
    kind = d.get("kind", default)
    if kind == "half_space":
        return half_space(dim)
    if kind == "ball":
        return ball(d.get("center", (0.0,) * dim), d.get("radius", 1.0))
    if kind == "strip":
        return strip(d.get("height", 1.0), dim)
    if kind == "perforated_slabs":
        return perforated_slabs(dim)
    if kind == "perforated_shells":
        return perforated_shells(dim)
    if kind == "whole":
        return None
    raise ConfigError(f"unknown domain kind {kind!r}", *cfg.positions.get(("domain", "kind"), (None, None)), kind)


def _solve_config(cfg: RunConfig) -> SolveConfig:
    s = cfg.solver
    return SolveConfig(s.get("dt", 1.0), s.get("tol", 1e-6), s.get("max_iters", 200_000), s.get("damping", 1.0))


def _problem(cfg: RunConfig) -> ProblemSpec:
    params = cfg.params()
    nl = _nonlinearity(cfg)
    tol_far = cfg.solver.get("tol_far", 1e-3)
    default = Grid((0.0,) * params.n, 0.05 if params.n == 1 else 0.25, (801,) if params.n == 1 else (64, 64))
    grid = _grid(cfg, default)
    omega = _domain(cfg, grid.dim)
    if omega is None:
        raise ConfigError("solve needs a domain other than 'whole'")
    if "exterior" in cfg.solver:
        ext = ExteriorRule.from_text(cfg.solver["exterior"])
    else:
        ext = periodic_tangential(0.0, nl.mu - tol_far)
    nodes = grid.nodes()
    inside = omega.contains(nodes)
    vals = np.empty(grid.size)
    vals[~inside] = ext.outside_values(nodes[~inside], grid)
    init = cfg.solver.get("init", "ramp")
    if init == "ramp":
        dist = omega.distance(nodes[inside])
        vals[inside] = np.clip(dist / 4.0, 0.0, 1.0) * (nl.mu - tol_far)
    elif init == "zero":
        vals[inside] = 0.0
    elif init == "noise":
        dist = omega.distance(nodes[inside])
        rng = np.random.default_rng(cfg.seed)
        ramp = np.clip(dist / 4.0, 0.0, 1.0) * (nl.mu - tol_far)
        vals[inside] = np.clip(ramp + 0.1 * rng.uniform(-1, 1, ramp.shape), 0.0, nl.mu - tol_far)
    else:
        raise ConfigError(f"unknown init {init!r}", *cfg.positions.get(("solver", "init"), (None, None)), init)
    return ProblemSpec(params, grid, omega, nl, ext, Field(grid, vals.reshape(grid.counts), ext),
                       _quadrature(cfg))


# ---------------------------------------------------------------------------
# commands; each returns (report body, exit status)

def _write_residuals(path: Path, residuals) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("iteration, residual\n")
        for k, r in enumerate(residuals):
            fh.write(f"{k}, {format(float(r), '.17g')}\n")


def _cmd_eval(cfg: RunConfig, out: Path):
    path = Path(cfg.field)
    if not path.exists():
        raise OSError(f"input field {path} does not exist")
    u = read_field_csv(path)
    params = cfg.params()
    region = _domain(cfg, u.grid.dim, default="whole")
    res = eval_field(u, params, _quadrature(cfg), region)
    write_field_csv(res, out / "field_operator.csv")
    vals = res.values[np.isfinite(res.values)]
    body = {"input": str(path), "nodes": int(vals.size),
            "max_abs": float(np.max(np.abs(vals))) if vals.size else 0.0,
            "artifacts": ["field_operator.csv"]}
    return body, EXIT_OK


def _cmd_solve(cfg: RunConfig, out: Path):
    pr = _problem(cfg)
    res = solve_steady(pr, _solve_config(cfg))
    write_field_csv(res.field, out / "field_solution.csv")
    _write_residuals(out / "residuals.csv", res.residuals)
    rep = SuiteReport("solve", {"tol": _solve_config(cfg).tol})
    free = pr.free_mask
    vals = res.field.values[free]
    rep.check("final residual", "plumbing", res.residual, _solve_config(cfg).tol, "<=")
    rep.check("residual monotone after 10 iterations", "plumbing", float(res.monotone_after(10)), 1.0, ">=")
    rep.check("min interior u", "claim:bounds-0-mu", float(np.min(vals)), 1e-12, ">")
    rep.check("max interior u", "claim:bounds-0-mu", float(np.max(vals)), pr.nl.mu - 1e-12, "<")
    body = {"iterations": res.iterations, "restarts": res.restarts,
            "residual_history": [float(r) for r in res.residuals],
            "dt_trace": [float(d) for d in res.dt_trace],
            "tol_far": cfg.solver.get("tol_far", 1e-3), "exterior": pr.exterior.to_text(),
            "suite": rep.to_dict(), "artifacts": ["field_solution.csv"], "tables": ["residuals.csv"]}
    return body, EXIT_OK if rep.passed else EXIT_FAIL


def _cmd_eigen(cfg: RunConfig, out: Path):
    params = cfg.params()
    default = Grid((-2.0,) * params.n, 2.0 ** -7 if params.n == 1 else 2.0 ** -4,
                   (513,) * params.n if params.n == 1 else (65, 65))
    grid = _grid(cfg, default)
    center = cfg.domain.get("center", (0.0,) * grid.dim)
    radius = cfg.domain.get("radius", 1.0)
    scfg = SolveConfig(1.0, cfg.solver.get("tol", 1e-8), cfg.solver.get("max_iters", 200_000),
                       cfg.solver.get("damping", 1.0))
    q = _quadrature(cfg)
    res = eigen_principal(params, grid, scfg, q, center, radius)
    write_field_csv(res.eigenfield, out / "field_eigen.csv")
    rep = SuiteReport("eigen", {"center": list(center), "radius": radius, "tol": scfg.tol})
    vals = res.eigenfield.values
    inside = ball(center, radius).node_mask(grid)
    rep.check("min eigenfield in ball", "claim:principal-eigenpair", float(np.min(vals[inside])), 0.0, ">")
    rep.check("peak value", "claim:principal-eigenpair", abs(float(np.max(vals)) - 1.0), 1e-15, "<=")
    body = {"lambda1": res.lambda1, "iterations": res.iterations, "residual": res.residual,
            "artifacts": ["field_eigen.csv"]}
    if params.p == 2.0:
        lam, _ = dense_eigen(params, grid, q, center, radius)
        body["lambda1_dense"] = lam
        rep.check("relative gap to dense eigensolve", "plumbing", abs(res.lambda1 - lam) / lam, 1e-6, "<=")
    body["suite"] = rep.to_dict()
    return body, EXIT_OK if rep.passed else EXIT_FAIL


def _cmd_slide(cfg: RunConfig, out: Path):
    if cfg.field:
        path = Path(cfg.field)
        if not path.exists():
            raise OSError(f"input field {path} does not exist")
        u = read_field_csv(path)
        body = {"input": str(path)}
    else:
        res = solve_steady(_problem(cfg), _solve_config(cfg))
        u = res.field
        write_field_csv(u, out / "field_solution.csv")
        body = {"input": "solved", "iterations": res.iterations}
    v = cfg.verify
    direction = v.get("direction", (0.0,) * (u.grid.dim - 1) + (1.0,))
    tau = v.get("tau", u.grid.h)
    tol = v.get("slide_tol", 1e-8)
    w, sup, node = slide_compare(u, tau, direction)
    write_field_csv(w, out / "field_w.csv")
    rep = SuiteReport("slide", {"tau": tau, "direction": list(direction), "tol": tol,
                                "tau_definition": "smallest grid step (discrete stand-in)"})
    rep.check("sup w_tau", "claim:sliding", sup, tol, "<=")
    tau_max = v.get("tau_max")
    if tau_max is not None:
        try:
            body["tau0_estimate"] = tau_zero_estimate(u, direction, tau_max, tol)
        except NotSlidable as exc:
            body["tau0_estimate"] = None
            rep.note = str(exc)
            rep.check("slidable up to tau_max", "claim:sliding", 0.0, 1.0, ">=")
    body.update(sup=sup, argsup=list(node), suite=rep.to_dict(),
                artifacts=sorted(p.name for p in out.glob("field_*.csv")))
    return body, EXIT_OK if rep.passed else EXIT_FAIL


def _cmd_verify(cfg: RunConfig, out: Path):
    params = cfg.params()
    if params.n != 1:
        raise ConfigError("the verify pipeline runs the 1D half-line problem; set n = 1")
    suites = cfg.verify.get("suites", tuple(SUITES))
    g = cfg.grid
    agg = run_all(list(suites), p=params.p, s=params.s, h=g.get("h", 0.05), length=g.get("length", 40.0),
                  tol=cfg.solver.get("tol", 1e-6), nl=_nonlinearity(cfg), seed=cfg.seed)
    body = agg.to_dict()
    body["artifacts"] = []
    return body, EXIT_OK if agg.passed else EXIT_FAIL


_COMMANDS = {"eval": _cmd_eval, "solve": _cmd_solve, "eigen": _cmd_eigen,
             "slide": _cmd_slide, "verify": _cmd_verify}


def _write_report(out: Path, cfg: RunConfig | None, body: dict, status: int) -> None:
    report = {"command": cfg.command if cfg else None, "seed": cfg.seed if cfg else None,
              "config_sha256": cfg.sha256 if cfg else None, "exit_status": status,
              "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds")}
    report.update(body)
    (out / "report.json").write_text(json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def dispatch(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_ERROR
    op_mod.set_threads(cfg.threads)
    try:
        body, status = _COMMANDS[cfg.command](cfg, out)
    except _RUNTIME_ERRORS as exc:
        kind = type(exc).__name__
        print(f"error: {kind}: {exc}", file=sys.stderr)
        _write_report(out, cfg, {"error": {"kind": kind, "message": str(exc)}}, EXIT_ERROR)
        return EXIT_ERROR
    _write_report(out, cfg, body, status)
    return status


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fracplap", description=__doc__.splitlines()[0])
    parser.add_argument("command", nargs="?", choices=COMMANDS,
                        help="overrides the config's top-level 'command'")
    parser.add_argument("--config", required=True, help="path to a sectioned key = value config")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--threads", type=int, help="worker threads (0 = one per CPU)")
    parser.add_argument("--seed", type=int, help="random seed")
    args = parser.parse_args(argv)
    try:
        text = Path(args.config).read_text(encoding="utf-8")
        cfg = parse_config(text, command=args.command)
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.out is not None:
        cfg.out = args.out
    if args.threads is not None:
        if args.threads < 0:
            print("error: threads must be >= 0", file=sys.stderr)
            return EXIT_ERROR
        cfg.threads = args.threads
    if args.seed is not None:
        cfg.seed = args.seed
    return dispatch(cfg)


if __name__ == "__main__":
    sys.exit(main())
