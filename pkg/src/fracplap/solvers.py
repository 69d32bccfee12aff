"""Steady states, principal eigenpairs, and sliding comparisons."""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import linalg

from .core import (DomainSpec, ExteriorRule, Field, Grid, Nonlinearity, OperatorParams,
                   ball as ball_domain, half_space, make_allen_cahn, periodic_tangential,
                   zero_exterior)
from .operator import DiscreteOperator, QuadratureConfig, g_power, operator_for

__all__ = [
    "ProblemSpec", "SolveConfig", "SolveResult", "EigenResult", "NonConvergence", "Instability",
    "SignViolation", "NotSlidable", "solve_steady", "eigen_principal", "dense_eigen",
    "slide_compare", "tau_zero_estimate", "half_line_problem", "half_plane_problem",
]


class NonConvergence(RuntimeError):
    def __init__(self, iterations: int, residual: float, what: str = "solve"):
        super().__init__(f"{what} did not converge in {iterations} iterations "
                         f"(final residual {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


class Instability(RuntimeError):
    pass


class SignViolation(RuntimeError):
    pass


class NotSlidable(RuntimeError):
    pass


@dataclass(frozen=True)
class SolveConfig:
    dt: float = 1.0
    tol: float = 1e-6
    max_iters: int = 200_000
    damping: float = 1.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0,1]")


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """``(-Delta)_p^s u = f(u)`` in ``omega`` with ``u`` given by ``exterior`` outside the grid.

    Grid nodes outside ``omega`` are held at their ``init`` values, which must
    match the exterior data there.
    """

    params: OperatorParams
    grid: Grid
    omega: DomainSpec
    nl: Nonlinearity
    exterior: ExteriorRule
    init: Field
    q: QuadratureConfig = dc_field(default_factory=QuadratureConfig)

    def __post_init__(self):
        lo, hi = self.exterior.bounds()
        if self.exterior.kind == "prescribed":
            pts = np.concatenate([self.grid.lower - self.grid.h, self.grid.upper + self.grid.h])
            vals = self.exterior.outside_values(pts.reshape(-1, self.grid.dim), self.grid)
            lo, hi = float(np.min(vals)), float(np.max(vals))
        if lo < 0 or hi >= self.nl.mu:
            raise ValueError("exterior values must lie in [0, mu)")
        if self.init.grid != self.grid:
            raise ValueError("init lives on a different grid")
        free = self.omega.node_mask(self.grid)
        fixed = self.init.values[~free]
        if fixed.size:
            outside = self.exterior.outside_values(self.grid.nodes()[~free.ravel()], self.grid)
            if np.any(np.abs(fixed - outside) > 1e-12):
                raise ValueError("init must match the exterior rule at grid nodes outside omega")

    @property
    def free_mask(self) -> np.ndarray:
        return self.omega.node_mask(self.grid)

    def operator(self) -> DiscreteOperator:
        return operator_for(self.grid, self.params, self.q, self.exterior)


@dataclass
class SolveResult:
    field: Field
    residuals: np.ndarray
    dt_trace: np.ndarray
    iterations: int
    restarts: int

    @property
    def residual(self) -> float:
        return float(self.residuals[-1])

    def monotone_after(self, start: int = 10, rtol: float = 1e-9) -> bool:
        """Residual history nonincreasing from iteration ``start`` on."""
        r = self.residuals[start:]
        return bool(np.all(np.diff(r) <= rtol * r[:-1]))

    def __iter__(self):
        # (field, residual history) unpacking
        return iter((self.field, self.residuals))


def _flow(op: DiscreteOperator, nl: Nonlinearity, u0: np.ndarray, free: np.ndarray,
          cfg: SolveConfig, dt_cap: float, bound: float):
    u = u0.copy()
    rows = np.flatnonzero(free)
    lip = nl.lipschitz(0.0, nl.mu)
    linear = op.params.p == 2.0
    diag_fixed = None
    residuals, dts = [], []
    for it in range(cfg.max_iters + 1):
        if linear:
            lu = op.apply(u, rows)
            if diag_fixed is None:
                _, diag_fixed = op.apply(u, rows, want_diag=True)
            diag = diag_fixed
        else:
            lu, diag = op.apply(u, rows, want_diag=True)
        r = nl(u[rows]) - lu
        res = float(np.max(np.abs(r))) if r.size else 0.0
        residuals.append(res)
        if res <= cfg.tol:
            return u, residuals, dts, max(it, 1)
        if it == cfg.max_iters:
            break
        dt = min(dt_cap, 0.9 / (lip + float(np.max(diag))))
        dts.append(dt)
        u[rows] += dt * cfg.damping * r
        if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > bound:
            return None, residuals, dts, it + 1
    raise NonConvergence(cfg.max_iters, residuals[-1])


def solve_steady(problem: ProblemSpec, cfg: SolveConfig | None = None, max_restarts: int = 4) -> SolveResult:
    """Relax ``u_t = f(u) - (-Delta)_p^s u`` on free nodes until the residual drops below tol.

    The step is ``min(cfg.dt, 0.9 / (Lip f + max_i D_i))`` where ``D_i`` is the
    diagonal of the operator's Jacobian at the current iterate, which keeps
    the update monotone.  Blow-up past ``10 mu`` halves the cap and restarts.
    """
    cfg = cfg or SolveConfig()
    op = problem.operator()
    free = problem.free_mask.ravel()
    u0 = problem.init.flat.astype(float)
    bound = 10.0 * problem.nl.mu
    dt_cap = cfg.dt
    for restart in range(max_restarts + 1):
        u, residuals, dts, iters = _flow(op, problem.nl, u0, free, cfg, dt_cap, bound)
        if u is not None:
            fld = Field(problem.grid, u.reshape(problem.grid.counts), problem.exterior)
            return SolveResult(fld, np.asarray(residuals), np.asarray(dts), iters, restart)
        dt_cap = 0.5 * min(dt_cap, dts[-1])
    raise Instability(f"iterate exceeded {bound:g} in sup-norm after {max_restarts} step halvings")


# ---------------------------------------------------------------------------
# canned problems

def half_line_problem(p: float = 2.0, s: float = 0.5, h: float = 0.05, length: float = 40.0,
                      nl: Nonlinearity | None = None, init: str = "ramp", tol_far: float = 1e-3,
                      q: QuadratureConfig | None = None) -> ProblemSpec:
    """Omega = (0, inf) truncated at ``length``: zero data on x <= 0, mu - tol_far beyond."""
    nl = nl or make_allen_cahn()
    n = int(round(length / h)) + 1
    grid = Grid((0.0,), h, (n,))
    ext = periodic_tangential(0.0, nl.mu - tol_far)
    x = grid.axis(0)
    if init == "zero":
        vals = np.zeros(n)
    elif init == "ramp":
        vals = np.clip(x / 4.0, 0.0, 1.0) * (nl.mu - tol_far)
    else:
        raise ValueError(f"unknown init {init!r}")
    return ProblemSpec(OperatorParams(1, s, p), grid, half_space(1), nl, ext,
                       Field(grid, vals, ext), q or QuadratureConfig())


def half_plane_problem(n_side: int = 64, h: float = 0.25, p: float = 2.0, s: float = 0.5,
                       nl: Nonlinearity | None = None, noise: float = 0.1, seed: int = 0,
                       tol_far: float = 1e-3, q: QuadratureConfig | None = None) -> ProblemSpec:
    """2D half-plane x2 > 0, periodic in x1, initialised with a ramp plus seeded noise."""
    nl = nl or make_allen_cahn()
    grid = Grid((0.0, 0.0), h, (n_side, n_side))
    ext = periodic_tangential(0.0, nl.mu - tol_far)
    x2 = grid.nodes()[:, 1].reshape(grid.counts)
    top = nl.mu - tol_far
    ramp = np.clip(x2 / 4.0, 0.0, 1.0) * top
    rng = np.random.default_rng(seed)
    vals = np.clip(ramp + noise * rng.uniform(-1.0, 1.0, size=grid.counts), 0.0, top)
    vals[:, 0] = 0.0
    return ProblemSpec(OperatorParams(2, s, p), grid, half_space(2), nl, ext,
                       Field(grid, vals, ext), q or QuadratureConfig())


# ---------------------------------------------------------------------------
# principal eigenpair

@dataclass
class EigenResult:
    lambda1: float
    eigenfield: Field
    iterations: int
    residual: float


def _ball_setup(params: OperatorParams, grid: Grid, center, radius: float):
    center = np.zeros(grid.dim) if center is None else np.atleast_1d(np.asarray(center, dtype=float))
    dom = ball_domain(center, radius)
    free = dom.node_mask(grid).ravel()
    if (np.any(center - radius < grid.lower - 1e-12) or np.any(center + radius > grid.upper + 1e-12)):
        raise ValueError("grid must cover the ball")
    return dom, free


def dense_eigen(params: OperatorParams, grid: Grid, q: QuadratureConfig | None = None,
                center=None, radius: float = 1.0) -> tuple[float, np.ndarray]:
    """Smallest eigenpair of the p = 2 operator restricted to ball nodes (dense solve)."""
    if params.p != 2.0:
        raise ValueError("dense eigensolve is only defined for p = 2")
    _, free = _ball_setup(params, grid, center, radius)
    op = operator_for(grid, params, q, zero_exterior())
    rows = np.flatnonzero(free)
    total = op.total_weight()
    a = -op.W[np.ix_(rows, rows)] * op.scale
    a[np.diag_indices_from(a)] += total[rows] - op.W[rows, rows] * op.scale
    vals, vecs = linalg.eigh(a, subset_by_index=[0, 0])
    v = np.abs(vecs[:, 0])
    return float(vals[0]), v / v.max()


def eigen_principal(params: OperatorParams, grid: Grid, cfg: SolveConfig | None = None,
                    q: QuadratureConfig | None = None, center=None, radius: float = 1.0) -> EigenResult:
    """Minimise the Rayleigh quotient sum(u L u) / sum |u|^p over positive u vanishing off the ball.

    Projected gradient steps ``u <- u - eta (L u - R(u) G(u))`` keep ``u``
    positive and rescale to peak 1.  Converged when
    ``max |L u - lambda G(u)| <= tol * lambda`` on ball nodes.
    """
    cfg = cfg or SolveConfig(tol=1e-8, max_iters=200_000)
    dom, free = _ball_setup(params, grid, center, radius)
    op = operator_for(grid, params, q, zero_exterior())
    rows = np.flatnonzero(free)
    if rows.size == 0:
        raise ValueError("ball contains no grid nodes")
    p = params.p
    u = np.zeros(grid.size)
    c = np.zeros(grid.dim) if center is None else np.atleast_1d(center)
    r2 = np.sum((grid.nodes()[rows] - c) ** 2, axis=1) / radius ** 2
    u[rows] = (1.0 - r2) ** params.s
    u /= u.max()
    res = np.inf
    for it in range(1, cfg.max_iters + 1):
        lu, diag = op.apply(u, rows, want_diag=True)
        ur = u[rows]
        gu = g_power(ur, p)
        lam = float(np.dot(ur, lu) / np.sum(np.abs(ur) ** p))
        r = lu - lam * gu
        res = float(np.max(np.abs(r)))
        if res <= cfg.tol * lam:
            break
        eta = cfg.damping * 0.9 / float(np.max(diag))
        ur = ur - eta * r
        if np.min(ur) < -cfg.tol:
            raise SignViolation(f"eigen iterate went negative ({np.min(ur):.3e})")
        u[rows] = np.maximum(ur, 0.0)
        u /= u.max()
    else:
        raise NonConvergence(cfg.max_iters, res, "eigen solve")
    fld = Field(grid, u.reshape(grid.counts), zero_exterior())
    return EigenResult(lam, fld, it, res)


# ---------------------------------------------------------------------------
# sliding

def _grid_shift(grid: Grid, tau: float, direction) -> np.ndarray:
    d = np.atleast_1d(np.asarray(direction, dtype=float))
    if d.shape != (grid.dim,):
        raise ValueError("direction has the wrong dimension")
    norm = np.linalg.norm(d)
    if not norm > 0:
        raise ValueError("direction must be nonzero")
    steps = tau * d / grid.h
    k = np.rint(steps)
    if np.any(np.abs(steps - k) > 1e-9):
        raise ValueError("tau * direction must be a whole number of grid steps")
    return k.astype(int)


def slide_compare(u: Field, tau: float, direction) -> tuple[Field, float, tuple]:
    """w(x) = u(x) - u(x + tau * direction) on the grid; returns (w, sup w, arg-sup node).

    Shifted values come from the grid array where the shifted node exists
    (wrapping periodic axes) and from the exterior rule elsewhere.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    grid = u.grid
    k = _grid_shift(grid, tau, direction)
    idx = np.indices(grid.counts).reshape(grid.dim, -1)
    target = idx + k[:, None]
    periodic = u.exterior.periodic_axes(grid.dim)
    inside = np.ones(grid.size, dtype=bool)
    for a in range(grid.dim):
        if a in periodic:
            target[a] = np.mod(target[a], grid.counts[a])
        else:
            inside &= (target[a] >= 0) & (target[a] < grid.counts[a])
    shifted = np.empty(grid.size)
    flat = u.flat
    shifted[inside] = flat[np.ravel_multi_index(tuple(target[:, inside]), grid.counts)]
    if np.any(~inside):
        pts = grid.lower + grid.h * target[:, ~inside].T
        shifted[~inside] = u.exterior.outside_values(pts, grid)
    w = flat - shifted
    j = int(np.argmax(w))
    node = tuple(float(v) for v in grid.lower + grid.h * np.array(np.unravel_index(j, grid.counts)))
    return Field(grid, w.reshape(grid.counts), zero_exterior()), float(w[j]), node


def tau_zero_estimate(u: Field, direction, tau_max: float, tol: float) -> float:
    """Smallest grid step tau such that sup w_t <= tol for every grid step t in [tau, tau_max]."""
    grid = u.grid
    d = np.atleast_1d(np.asarray(direction, dtype=float))
    kmax = _grid_shift(grid, tau_max, d)
    unit = kmax // np.gcd.reduce(np.abs(kmax)) if np.any(kmax) else kmax
    n_steps = int(np.gcd.reduce(np.abs(kmax))) if np.any(kmax) else 0
    if n_steps == 0:
        raise ValueError("tau_max must be a positive number of grid steps")
    step = float(np.linalg.norm(unit) * grid.h / np.linalg.norm(d))
    best = None
    for m in range(n_steps, 0, -1):
        t = m * step
        _, sup, _ = slide_compare(u, t, d)
        if sup > tol:
            break
        best = t
    if best is None:
        raise NotSlidable(f"sup w_tau > {tol:g} already at tau_max = {tau_max:g}")
    return best
