"""Executable checks of the sign, comparison, monotonicity and scaling claims.

Each check first tests its hypotheses on the discrete data.  When they fail
the report is *vacuous*: the conclusion is not asserted either way.  The
conclusion is measured against a threshold ten times looser than the
hypothesis tolerance so discretisation noise cannot produce circular failures.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field as dc_field
from typing import Callable, Sequence

import numpy as np

from .barriers import BarrierHandle, build_subsolution, sample
from .core import DomainSpec, Field, OperatorParams, custom_domain, validate_nonlinearity
from .operator import QuadratureConfig, eval_field, g_power, near_part, operator_for

__all__ = [
    "Assertion", "SuiteReport", "AggregateReport", "DensityResult", "HypothesisViolated",
    "DichotomyViolated", "check_density_condition", "check_max_principle", "check_strong_max",
    "check_comparison", "check_bound_below", "check_asymptotic", "check_monotonicity",
    "check_1d_reduction", "check_g_inequality", "check_perturbation_lemma", "check_sliding",
    "check_uniqueness", "run_all", "SUITES",
]


class HypothesisViolated(ValueError):
    """Raised by strict callers when a check's hypotheses fail at ``node``."""

    def __init__(self, message: str, node=None):
        super().__init__(message)
        self.node = node


class DichotomyViolated(ValueError):
    def __init__(self, message: str, nodes=()):
        super().__init__(message)
        self.nodes = list(nodes)


def _clean(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        if not np.isfinite(v):
            return str(v)
        return v
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.ndarray):
        return [_clean(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    return v


@dataclass
class Assertion:
    claim: str
    anchor: str
    measured: float
    threshold: float
    relation: str                      # "<=", ">=", "<", ">"
    passed: bool = dc_field(init=False)

    def __post_init__(self):
        m, t = float(self.measured), float(self.threshold)
        self.passed = bool({"<=": m <= t, ">=": m >= t, "<": m < t, ">": m > t}[self.relation])


@dataclass
class SuiteReport:
    suite: str
    hypotheses: dict = dc_field(default_factory=dict)
    assertions: list = dc_field(default_factory=list)
    artifacts: list = dc_field(default_factory=list)
    vacuous: bool = False
    note: str = ""
    details: dict = dc_field(default_factory=dict)

    def check(self, claim: str, anchor: str, measured, threshold, relation: str) -> Assertion:
        a = Assertion(claim, anchor, float(measured), float(threshold), relation)
        self.assertions.append(a)
        return a

    def mark_vacuous(self, why: str) -> "SuiteReport":
        self.vacuous = True
        self.note = why
        return self

    @property
    def passed(self) -> bool:
        return self.vacuous or all(a.passed for a in self.assertions)

    def assertion(self, claim: str) -> Assertion:
        for a in self.assertions:
            if a.claim == claim:
                return a
        raise KeyError(claim)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        out["status"] = "vacuous" if self.vacuous else ("pass" if self.passed else "fail")
        return _clean(out)


@dataclass
class AggregateReport:
    reports: list = dc_field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)

    def to_dict(self) -> dict:
        rs = sorted(self.reports, key=lambda r: r.suite)
        return {"suites": [r.to_dict() for r in rs], "passed": self.passed,
                "anchors": sorted({a.anchor for r in rs for a in r.assertions})}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


# ---------------------------------------------------------------------------
# measure density of the complement

@dataclass
class DensityResult:
    j: list
    ratios: list
    stderr: list
    liminf: float
    liminf_stderr: float
    seed: int


def check_density_condition(sigma: DomainSpec, x, r: float, j_range: Sequence[int],
                            samples: int = 10_000, seed: int = 0) -> DensityResult:
    """Monte-Carlo fraction of each dyadic annulus B_{2^(j+1) r}(x) \\ B_{2^j r}(x) lying in sigma.

    The liminf estimate is the minimum over the upper half of ``j_range``.
    """
    if samples < 10_000:
        raise ValueError("at least 10^4 samples per annulus are required")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = sigma.dim
    rng = np.random.default_rng(seed)
    js = list(j_range)
    ratios, errs = [], []
    for j in js:
        a, b = 2.0 ** j * r, 2.0 ** (j + 1) * r
        # radius with density proportional to rho^(n-1) on [a, b]
        u = rng.random(samples)
        rho = (a ** n + u * (b ** n - a ** n)) ** (1.0 / n)
        d = rng.standard_normal((samples, n))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        pts = x + rho[:, None] * d
        frac = float(np.mean(sigma.contains(pts)))
        ratios.append(frac)
        errs.append(float(np.sqrt(max(frac * (1 - frac), 1.0 / samples) / samples)))
    tail = range(len(js) // 2, len(js))
    k = min(tail, key=lambda i: ratios[i])
    return DensityResult(js, ratios, errs, ratios[k], errs[k], seed)


# ---------------------------------------------------------------------------
# sign and comparison principles

def _exterior_upper(fld: Field) -> float:
    lo, hi = fld.exterior.bounds()
    if fld.exterior.kind == "prescribed":
        g = fld.grid
        shell = np.concatenate([g.nodes() + g.h * (g.upper - g.lower).max(), g.nodes() - g.h])
        hi = float(np.max(fld.exterior.outside_values(shell, g)))
    return hi


def _node_list(grid, mask) -> list:
    idx = np.argwhere(mask)
    return [list(map(float, grid.lower + grid.h * k)) for k in idx[:5]]


def check_max_principle(u: Field, c_field: Field, D: DomainSpec, params: OperatorParams,
                        q: QuadratureConfig | None = None, tol: float = 1e-6,
                        strict: bool = False) -> SuiteReport:
    """If L u + c u <= 0 on D, u <= 0 off D and c >= 0, then u <= 0 in D."""
    rep = SuiteReport("max_principle", {"tol": tol, "domain": D.describe(),
                                        "params": asdict(params)})
    g = u.grid
    in_d = D.node_mask(g)
    if not np.any(in_d):
        return rep.mark_vacuous("D contains no grid nodes")
    lu = eval_field(u, params, q, D).values
    lhs = lu + c_field.values * u.values
    worst = float(np.max(lhs[in_d]))
    off = u.values[~in_d]
    off_max = max(float(np.max(off)) if off.size else -np.inf, _exterior_upper(u))
    c_min = float(np.min(c_field.values))
    rep.hypotheses.update(operator_plus_cu_max=worst, outside_max=off_max, c_min=c_min)
    sig = D.complement()
    dens = check_density_condition(sig, g.center, g.h, range(0, 10), seed=0)
    rep.details["complement_density"] = asdict(dens)
    bad = None
    if worst > tol:
        bad = ("L u + c u exceeds tol in D", in_d & (lhs > tol))
    elif off_max > tol:
        bad = ("u exceeds tol outside D", ~in_d & (u.values > tol))
    elif c_min < 0:
        bad = ("c takes negative values", c_field.values < 0)
    if bad is not None:
        nodes = _node_list(g, bad[1])
        rep.details["failing_nodes"] = nodes
        if strict:
            raise HypothesisViolated(bad[0], nodes[0] if nodes else None)
        return rep.mark_vacuous(bad[0])
    rep.check("sup of u over D", "claim:max-principle", float(np.max(u.values[in_d])), 10 * tol, "<=")
    return rep


def check_strong_max(u: Field, v: Field, D: DomainSpec, tol: float = 1e-6,
                     strict: bool = False) -> SuiteReport:
    """For ordered solutions u >= v: either u > v in D or u == v."""
    rep = SuiteReport("strong_max", {"tol": tol, "domain": D.describe()})
    diff = u.values - v.values
    rep.hypotheses["min_u_minus_v"] = float(np.min(diff))
    if np.min(diff) < -tol:
        if strict:
            raise HypothesisViolated("u < v - tol somewhere")
        return rep.mark_vacuous("u >= v - tol fails")
    in_d = D.node_mask(u.grid)
    if not np.any(in_d):
        return rep.mark_vacuous("D contains no grid nodes")
    gap_min = float(np.min(diff[in_d]))
    sup = float(np.max(np.abs(diff)))
    if gap_min > tol:
        rep.details["branch"] = "strict"
        rep.check("min of u - v over D", "claim:strong-max", gap_min, tol, ">")
    else:
        rep.details["branch"] = "equal"
        a = rep.check("sup |u - v|", "claim:strong-max", sup, 10 * tol, "<=")
        if not a.passed:
            nodes = _node_list(u.grid, in_d & (diff <= tol))
            rep.details["offending_nodes"] = nodes
            if strict:
                raise DichotomyViolated("neither strict nor identical", nodes)
    return rep


def check_comparison(u: Field, v: Field, gamma: DomainSpec, params: OperatorParams,
                     q: QuadratureConfig | None = None, tol: float = 1e-6,
                     rhs: np.ndarray | None = None, strict: bool = False) -> SuiteReport:
    """If L u >= L v on Gamma and u >= v off Gamma, then u >= v on Gamma.

    ``rhs`` optionally replaces the computed ``L u`` (e.g. by ``f(u)`` for a
    converged solution, which equals it up to the solver tolerance).
    """
    rep = SuiteReport("comparison", {"tol": tol, "domain": gamma.describe()})
    g = u.grid
    in_g = gamma.node_mask(g)
    if not np.any(in_g):
        return rep.mark_vacuous("Gamma contains no grid nodes")
    lu = eval_field(u, params, q, gamma).values if rhs is None else np.asarray(rhs).reshape(g.counts)
    lv = eval_field(v, params, q, gamma).values
    op_gap = float(np.min((lu - lv)[in_g]))
    diff = u.values - v.values
    off = diff[~in_g]
    off_min = float(np.min(off)) if off.size else np.inf
    # exterior data compared on a shell of points just outside the box
    shell = np.concatenate([g.nodes() - g.h, g.nodes() + g.h * g.counts[-1]])
    outside = ~np.all((shell >= g.lower) & (shell <= g.upper), axis=1)
    shell = shell[outside]
    ext_min = float(np.min(u(shell) - v(shell))) if len(shell) else np.inf
    rep.hypotheses.update(operator_gap_min=op_gap, outside_gap_min=min(off_min, ext_min))
    if op_gap < -tol or min(off_min, ext_min) < -tol:
        why = "L u >= L v - tol fails on Gamma" if op_gap < -tol else "u >= v - tol fails off Gamma"
        if strict:
            raise HypothesisViolated(why)
        return rep.mark_vacuous(why)
    rep.check("min of u - v over Gamma", "claim:comparison", float(np.min(diff[in_g])), -10 * tol, ">=")
    return rep


def check_bound_below(u: Field, omega: DomainSpec, R0: float, eps1: float) -> SuiteReport:
    """Interior positivity: u > eps1 at nodes deeper than R0 inside omega."""
    rep = SuiteReport("bound_below", {"R0": R0, "eps1": eps1, "domain": omega.describe()})
    g = u.grid
    nodes = g.nodes()
    deep = omega.contains(nodes) & (omega.distance(nodes) > R0)
    if not np.any(deep):
        rep.details["empty_node_set"] = True
        return rep.mark_vacuous("no nodes farther than R0 from the boundary")
    m = float(np.min(u.flat[deep]))
    rep.details["max_passing_eps1"] = m
    rep.check("min of u beyond R0", "claim:interior-lower-bound", m, eps1, ">")
    return rep


def check_asymptotic(u: Field, omega: DomainSpec, eps_levels: Sequence[float], mu: float = 1.0) -> SuiteReport:
    """Distance d(eps) past which |mu - u| <= eps; must exist and shrink as eps grows."""
    rep = SuiteReport("asymptotic", {"eps_levels": list(eps_levels), "mu": mu,
                                     "domain": omega.describe()})
    nodes = u.grid.nodes()
    inside = omega.contains(nodes)
    dist = omega.distance(nodes[inside])
    dev = np.abs(mu - u.flat[inside])
    order = np.argsort(dist, kind="stable")
    dist, dev = dist[order], dev[order]
    tail_max = np.maximum.accumulate(dev[::-1])[::-1]
    profile = {}
    for eps in eps_levels:
        ok = np.flatnonzero(tail_max <= eps)
        d = float(dist[ok[0]]) if ok.size else float("inf")
        if ok.size and ok[0] == 0:
            d = 0.0
        profile[eps] = d
        rep.check(f"d({eps:g}) finite", "claim:asymptotic-limit", d, float("inf"), "<")
    levels = sorted(profile)
    worst = max((profile[a] - profile[b] for a, b in zip(levels[1:], levels[:-1])), default=0.0)
    if np.isfinite(worst) or not levels:
        rep.check("d(eps) nonincreasing in eps", "claim:asymptotic-limit", worst, 0.0, "<=")
    rep.details["profile"] = {format(k, "g"): v for k, v in profile.items()}
    return rep


def check_monotonicity(u: Field, direction, omega: DomainSpec | None = None, tol: float = 1e-9,
                       fraction: float = 0.95) -> SuiteReport:
    """Forward differences along ``direction`` are >= -tol everywhere and > tol for most pairs."""
    rep = SuiteReport("monotonicity", {"tol": tol, "fraction": fraction,
                                       "direction": list(np.atleast_1d(direction))})
    g = u.grid
    d = np.atleast_1d(np.asarray(direction, dtype=float))
    k = np.rint(d / np.max(np.abs(d))).astype(int)
    if np.any(np.abs(d / np.max(np.abs(d)) - k) > 1e-9):
        raise ValueError("direction must be a lattice direction")
    vals = u.values
    src = tuple(slice(max(0, -kk), g.counts[a] - max(0, kk)) for a, kk in enumerate(k))
    dst = tuple(slice(max(0, kk), g.counts[a] - max(0, -kk)) for a, kk in enumerate(k))
    diff = vals[dst] - vals[src]
    keep = np.ones(diff.shape, dtype=bool)
    if omega is not None:
        inside = omega.node_mask(g)
        keep = inside[dst] & inside[src]
    dv = diff[keep]
    if dv.size == 0:
        return rep.mark_vacuous("no interior node pairs")
    rep.check("min forward difference", "claim:monotone-in-xn", float(np.min(dv)), -tol, ">=")
    rep.check("fraction strictly increasing", "claim:monotone-in-xn",
              float(np.mean(dv > tol)), fraction, ">=")
    return rep


def check_1d_reduction(u: Field, tol: float = 1e-5) -> SuiteReport:
    """2D half-plane solution depends on x_n only: tangential spread of every slice <= 10 tol."""
    if u.grid.dim != 2:
        raise ValueError("reduction check needs a 2D field")
    rep = SuiteReport("reduction_1d", {"tol": tol})
    spread = np.max(u.values, axis=0) - np.min(u.values, axis=0)
    rep.details["worst_slice"] = int(np.argmax(spread))
    rep.check("max cross-slice variation", "claim:depends-on-xn-only", float(np.max(spread)), 10 * tol, "<=")
    return rep


def check_g_inequality(p_samples: Sequence[float] = (2.0, 2.5, 3.0, 4.0, 6.0),
                       t_samples: int = 100_000, seed: int = 0, slack: float = 1e-12) -> SuiteReport:
    """G(t1 + t2) <= 2^(p-2) (G(t1) + G(t2)) whenever t1 + t2 > 0.

    Slack is relative to 2^(p-2) (|G(t1)| + |G(t2)|).
    """
    rep = SuiteReport("g_inequality", {"p_samples": list(p_samples), "t_samples": t_samples,
                                       "seed": seed, "slack": slack})
    rng = np.random.default_rng(seed)
    # mix of O(1) values and widely spread magnitudes
    mags = 10.0 ** rng.uniform(-6, 6, size=(t_samples, 2))
    signs = rng.choice([-1.0, 1.0], size=(t_samples, 2))
    t = np.where(rng.random((t_samples, 1)) < 0.5, rng.uniform(-5, 5, (t_samples, 2)), signs * mags)
    t = np.where((t[:, :1] + t[:, 1:]) > 0, t, -t)          # reflect into t1 + t2 > 0
    t = t[(t[:, 0] + t[:, 1]) > 0]
    t1, t2 = t[:, 0], t[:, 1]
    for p in p_samples:
        c = 2.0 ** (p - 2)
        lhs = g_power(t1 + t2, p)
        rhs = c * (g_power(t1, p) + g_power(t2, p))
        scale = c * (np.abs(g_power(t1, p)) + np.abs(g_power(t2, p)))
        excess = (lhs - rhs) / scale
        rep.check(f"violations p={p:g}", "claim:g-inequality", int(np.sum(excess > slack)), 0, "<=")
        eq = abs(g_power(2.0, p) - c * 2.0) / (2 * c)
        rep.check(f"equality at (1,1) p={p:g}", "claim:g-inequality", eq, slack, "<=")
        rep.details[f"max_relative_excess_p{p:g}"] = float(np.max(excess))
    return rep


def check_perturbation_lemma(u: Field, bump: BarrierHandle, params: OperatorParams, x,
                             eps_grid: Sequence[float], near_deltas: Sequence[int],
                             far_deltas: Sequence[int], q: QuadratureConfig | None = None) -> SuiteReport:
    """Split the gap |L(u + eps Phi)(x) - L u(x)| at radius delta and test both pieces.

    ``near_deltas`` (in grid steps, all well inside the bump) give the
    exponent of the near piece, expected p(1-s).  ``far_deltas`` (beyond
    the bump support) give the far slope C_delta, expected ~ delta^(-sp).
    The gap is also fitted per delta as a(delta) eps + c(delta), with
    c(delta) ~ b delta^(p(1-s)).
    """
    q = q or QuadratureConfig()
    g = u.grid
    h = g.h
    pa = params.p * (1.0 - params.s)
    b = sample(bump, g)
    rep = SuiteReport("perturbation", {"eps_grid": list(eps_grid), "near_deltas": list(near_deltas),
                                       "far_deltas": list(far_deltas), "bump": asdict(bump),
                                       "x": list(np.atleast_1d(x))})
    eps = np.asarray(eps_grid, dtype=float)
    deltas = sorted(set(near_deltas) | set(far_deltas))
    gaps, nears, fars = {}, {}, {}
    for m in deltas:
        qm = QuadratureConfig(m, q.tail_radius, q.cell_rule)
        base = float(operator_for(g, params, qm, u.exterior).apply(u.flat, [g.flat_index(x)])[0])
        base_near = near_part(u, params, qm, x)
        row = []
        for e in eps:
            v = u.with_values(u.values + e * b.values)
            tot = float(operator_for(g, params, qm, u.exterior).apply(v.flat, [g.flat_index(x)])[0])
            nr = near_part(v, params, qm, x) - base_near
            row.append((tot - base, nr))
        arr = np.array(row)
        gaps[m] = np.abs(arr[:, 0])
        nears[m] = arr[:, 1]
        fars[m] = arr[:, 0] - arr[:, 1]

    # near piece: exponent in delta at the largest eps
    dn = np.array(sorted(near_deltas), dtype=float) * h
    k_big = int(np.argmax(eps))
    near_abs = np.array([abs(nears[m][k_big]) for m in sorted(near_deltas)])
    slope = float(np.polyfit(np.log(dn), np.log(near_abs), 1)[0])
    rep.details["near_exponent"] = slope
    rep.check("near exponent / p(1-s)", "claim:perturbation-near-term", slope / pa, 0.7, ">=")
    rep.check("near exponent / p(1-s) upper", "claim:perturbation-near-term", slope / pa, 1.3, "<=")

    # far piece: slope in eps per delta, compared with delta^(-sp)
    c_delta = {m: float(np.dot(eps, np.abs(fars[m])) / np.dot(eps, eps)) for m in deltas}
    rep.details["C_delta"] = {str(m): c for m, c in c_delta.items()}
    norm = np.array([c_delta[m] * (m * h) ** params.sp for m in sorted(far_deltas)])
    rep.check("spread of C_delta delta^sp", "claim:perturbation-far-term",
              float(norm.max() / norm.min()), 3.0, "<=")
    ordered = [c_delta[m] for m in deltas]
    rep.check("C_delta increases as delta shrinks", "claim:perturbation-far-term",
              float(np.max(np.diff(ordered))) if len(ordered) > 1 else -1.0, 0.0, "<=")

    # full model a(delta) eps + b delta^(p(1-s))
    resid = 0.0
    cvals, dvals = [], []
    fits = {}
    for m in deltas:
        a_m, c_m = np.polyfit(eps, gaps[m], 1)
        fits[m] = a_m
        cvals.append(c_m)
        dvals.append((m * h) ** pa)
    dvals = np.array(dvals)
    b_fit = float(np.dot(dvals, cvals) / np.dot(dvals, dvals))
    scale = max(float(np.max(gaps[m])) for m in deltas)
    for m, dv in zip(deltas, dvals):
        model = fits[m] * eps + b_fit * dv
        resid = max(resid, float(np.max(np.abs(model - gaps[m]))))
    rep.details["b"] = b_fit
    rep.details["a"] = {str(m): float(v) for m, v in fits.items()}
    rep.check("model residual / gap scale", "claim:perturbation-bound",
              resid / scale if scale > 0 else 0.0, 0.10, "<=")
    return rep


def check_sliding(u: Field, direction, tau_max: float, tol: float = 1e-8) -> SuiteReport:
    """Sliding comparison: w_tau <= 0 for every grid step up to tau_max; tau_0 is one step."""
    from .solvers import NotSlidable, tau_zero_estimate, slide_compare
    rep = SuiteReport("sliding", {"tau_max": tau_max, "tol": tol,
                                  "direction": list(np.atleast_1d(direction)),
                                  "tau_definition": "smallest grid step (discrete stand-in)"})
    step = u.grid.h * float(np.linalg.norm(np.atleast_1d(direction)))
    try:
        tau0 = tau_zero_estimate(u, direction, tau_max, tol)
    except NotSlidable as exc:
        rep.note = str(exc)
        tau0 = float("inf")
    _, sup_h, node = slide_compare(u, step, direction)
    rep.details["argsup_at_step"] = list(node)
    rep.check("sup w at one step", "claim:sliding", sup_h, tol, "<=")
    rep.check("tau_0 estimate / step", "claim:sliding", tau0 / step, 1.0 + 1e-9, "<=")
    return rep


def check_uniqueness(u: Field, v: Field, tol: float) -> SuiteReport:
    rep = SuiteReport("uniqueness", {"tol": tol})
    rep.check("sup |u - v| between inits", "claim:uniqueness",
              float(np.max(np.abs(u.values - v.values))), 10 * tol, "<=")
    return rep


# ---------------------------------------------------------------------------
# pipeline

def _half_line_context(p: float, s: float, h: float, length: float, tol: float, nl=None):
    from .solvers import SolveConfig, half_line_problem, solve_steady
    cfg = SolveConfig(tol=tol)
    pr_a = half_line_problem(p=p, s=s, h=h, length=length, nl=nl, init="ramp")
    pr_b = half_line_problem(p=p, s=s, h=h, length=length, nl=nl, init="zero")
    res_a = solve_steady(pr_a, cfg)
    res_b = solve_steady(pr_b, cfg)
    return {"problem": pr_a, "result": res_a, "result_zero_init": res_b, "tol": tol}


def _suite_g(ctx):
    return check_g_inequality(seed=ctx.get("seed", 0))


def _suite_density(ctx):
    from .core import ball, half_space, perforated_slabs
    seed = ctx.get("seed", 0)
    rep = SuiteReport("density", {"samples": 10_000, "seed": seed})
    hs = check_density_condition(half_space(2).complement(), (0.3, 0.7), 1.0, range(0, 12), seed=seed)
    rep.check("half-space |liminf - 1/2| / stderr", "claim:density-condition",
              abs(hs.liminf - 0.5) / hs.liminf_stderr, 3.0, "<=")
    sl = check_density_condition(perforated_slabs(2).complement(), (0.25, 0.5), 1.0, range(0, 12), seed=seed + 1)
    rep.check("perforated slabs liminf", "claim:density-condition", sl.liminf, 0.4, ">=")
    bl = check_density_condition(ball((0.0, 0.0), 1.0), (0.0, 0.0), 1.0, range(0, 12), seed=seed + 2)
    rep.check("ball ratio beyond j = 6", "claim:density-condition", max(bl.ratios[7:]), 0.0, "<=")
    rep.details.update(half_space=asdict(hs), slabs=asdict(sl), ball=asdict(bl))
    return rep


def _suite_solver(ctx):
    res = ctx["result"]
    pr = ctx["problem"]
    rep = SuiteReport("solver", {"tol": ctx["tol"], "params": asdict(pr.params)})
    rep.check("final residual", "plumbing", res.residual, ctx["tol"], "<=")
    rep.check("residual monotone after 10 iterations", "plumbing", float(res.monotone_after(10)), 1.0, ">=")
    free = pr.free_mask
    vals = res.field.values[free]
    rep.check("min interior u", "claim:bounds-0-mu", float(np.min(vals)), 1e-12, ">")
    rep.check("max interior u", "claim:bounds-0-mu", float(np.max(vals)), pr.nl.mu - 1e-12, "<")
    rep.details["iterations"] = res.iterations
    return rep


def _suite_max_principle(ctx):
    pr = ctx["problem"]
    u = ctx["result"].field
    # w = u - mu on D = {u > mu}; empty for a converged solution
    d = custom_domain(lambda pts: u(pts) > pr.nl.mu, pr.grid.dim)
    w = u.with_values(u.values - pr.nl.mu)
    zero = Field(pr.grid, np.zeros(pr.grid.counts))
    return check_max_principle(w, zero, d, pr.params, pr.q, ctx["tol"])


def _suite_strong_max(ctx):
    from .solvers import slide_compare
    pr = ctx["problem"]
    u = ctx["result"].field
    w, _, _ = slide_compare(u, pr.grid.h, [-1.0] + [0.0] * (pr.grid.dim - 1))
    # v(x) = u(x - h): w = u - v
    v = u.with_values(u.values - w.values)
    return check_strong_max(u, v, pr.omega, ctx["tol"])


def _suite_comparison(ctx):
    pr = ctx["problem"]
    u = ctx["result"].field
    s = pr.params.s
    ball_spec = ((1.0,), 1.0)
    D = custom_domain(lambda pts: pts[:, -1] >= 2.0, 1)
    gamma = custom_domain(lambda pts: (pts[:, -1] > 0) & (pts[:, -1] < 2.0), 1)
    rhs = pr.nl(u.values)
    eps = 1.0
    rep = None
    while eps > 1e-4:
        v = build_subsolution(u, D, eps, ball_spec, s)
        rep = check_comparison(u, v, gamma, pr.params, pr.q, ctx["tol"], rhs=rhs)
        if not rep.vacuous:
            break
        eps /= 2.0
    rep.hypotheses["subsolution_eps"] = eps
    return rep


def _suite_bound_below(ctx):
    pr = ctx["problem"]
    rep = check_bound_below(ctx["result"].field, pr.omega, 10.0, 0.9)
    return rep


def _suite_asymptotic(ctx):
    pr = ctx["problem"]
    return check_asymptotic(ctx["result"].field, pr.omega, [0.01, 0.02, 0.05, 0.1, 1.0], pr.nl.mu)


def _suite_monotonicity(ctx):
    pr = ctx["problem"]
    return check_monotonicity(ctx["result"].field, [1.0], pr.omega)


def _suite_sliding(ctx):
    pr = ctx["problem"]
    return check_sliding(ctx["result"].field, [1.0], 2.0, 1e-8)


def _suite_uniqueness(ctx):
    return check_uniqueness(ctx["result"].field, ctx["result_zero_init"].field, ctx["tol"])


def _suite_perturbation(ctx):
    pr = ctx["problem"]
    if pr.params.p != 2.0:
        return SuiteReport("perturbation").mark_vacuous("perturbation suite runs on the p = 2 solution")
    u = ctx["result"].field
    x = (10.0,)
    bump = BarrierHandle("phi2", x, 0.5, 1.0)
    return check_perturbation_lemma(u, bump, pr.params, x, [2.0 ** -k for k in range(1, 9)],
                                    [1, 2, 4], [20, 30, 40, 60], pr.q)


SUITES: dict[str, Callable] = {
    "g_inequality": _suite_g,
    "density": _suite_density,
    "solver": _suite_solver,
    "max_principle": _suite_max_principle,
    "strong_max": _suite_strong_max,
    "comparison": _suite_comparison,
    "bound_below": _suite_bound_below,
    "asymptotic": _suite_asymptotic,
    "monotonicity": _suite_monotonicity,
    "sliding": _suite_sliding,
    "uniqueness": _suite_uniqueness,
    "perturbation": _suite_perturbation,
}

_NEEDS_SOLVE = set(SUITES) - {"g_inequality", "density"}


def run_all(suites: Sequence[str], p: float = 2.0, s: float = 0.5, h: float = 0.05,
            length: float = 40.0, tol: float = 1e-6, nl=None, seed: int = 0,
            context: dict | None = None) -> AggregateReport:
    """Run the named suites on the 1D half-line problem (solved once, from two inits)."""
    unknown = [name for name in suites if name not in SUITES]
    if unknown:
        raise ValueError(f"unknown suite {unknown[0]!r}")
    agg = AggregateReport()
    ctx = context
    if ctx is None:
        ctx = {}
        if any(name in _NEEDS_SOLVE for name in suites):
            ctx = _half_line_context(p, s, h, length, tol, nl)
    ctx.setdefault("seed", seed)
    for name in suites:
        agg.reports.append(SUITES[name](ctx))
    return agg
