"""Discrete fractional p-Laplacian on uniform grids.

The operator at node ``x_i`` is

    c_norm * [ sum_j W_ij G(u_i - u_j) + sum_parts T_i G(u_i - u_ext) ]

with ``G(t) = |t|^(p-2) t``.  The weights come from three pieces:

* mid-field: ``W_ij`` is the integral of the kernel ``|z|^(-n-sp)`` against
  the piecewise (multi)linear hat of node ``j``, restricted to the grid box and
  to ``|z|_inf >= delta`` (``delta = delta_split * h``).  This is the same as
  integrating the piecewise-linear interpolant of ``y -> G(u_i - u(y))``.
* near-field: the symmetric pairs ``x_i +- delta e_a`` carry the extra weight
  ``S_p delta^(-sp) / (2n)``, where ``S_p`` integrates ``|z|^(p-n-sp)`` over
  the unit cube.  The antipodal sum cancels the gradient term; the remainder
  scales like ``delta^(p(1-s))``.  For p = 2 the model is exact on quadratics.
* tails: the exterior rule is integrated in closed form over the complement
  of the grid box (and of the near cube).

All weights are positive, so the scheme is monotone: raising a neighbour
can only lower the operator value at a node.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from .core import ExteriorRule, Field, Grid, OperatorParams, DomainSpec, format_float

__all__ = [
    "QuadratureConfig", "DiscreteOperator", "g_power", "eval_point", "eval_field",
    "tail_integral", "perturbation_gap", "near_part", "set_threads", "get_threads",
    "write_operator_csv", "sphere_measure",
]

_THREADS = 1
_CHUNK_ROWS = 128


def set_threads(n: int) -> None:
    """Worker threads for row-parallel evaluation (0 = one per CPU).

    Rows are split into fixed chunks and every row is reduced by the same
    numpy call, so results do not depend on the thread count.
    """
    global _THREADS
    import os
    _THREADS = max(1, os.cpu_count() or 1) if n == 0 else max(1, int(n))


def get_threads() -> int:
    return _THREADS


def g_power(t, p: float):
    """G(t) = |t|^(p-2) t."""
    t = np.asarray(t, dtype=float)
    if p == 2.0:
        out = t.copy()
    elif p == 3.0:
        out = np.abs(t) * t
    elif p == 4.0:
        out = t * t * t
    else:
        out = np.abs(t) ** (p - 2.0) * t
    return out if out.ndim else float(out)


def _g_slope(t, p: float):
    """|t|^(p-2), the derivative of G divided by p-1."""
    if p == 2.0:
        return np.ones_like(t)
    if p == 3.0:
        return np.abs(t)
    if p == 4.0:
        return t * t
    return np.abs(t) ** (p - 2.0)


def sphere_measure(n: int) -> float:
    return {1: 2.0, 2: 2.0 * math.pi}[n]


@dataclass(frozen=True)
class QuadratureConfig:
    """delta_split is in units of h and must be an integer >= 1.

    tail_radius (absolute distance from the grid centre) only matters for
    prescribed exterior data, which are integrated numerically out to it and
    frozen beyond; None means the grid's truncation radius.
    """

    delta_split: float = 1.0
    tail_radius: float | None = None
    cell_rule: str = "gauss"

    def __post_init__(self):
        m = self.delta_split
        if m < 1 or abs(m - round(m)) > 1e-12:
            raise ValueError("delta_split must be an integer number of grid spacings >= 1")
        if self.cell_rule not in ("gauss", "midpoint"):
            raise ValueError("cell_rule must be 'gauss' or 'midpoint'")

    @property
    def m(self) -> int:
        return int(round(self.delta_split))


# ---------------------------------------------------------------------------
# weight tables (spacing h = 1; physical weights scale by h^(-sp))

def _pow_diff_over(c, beta):
    """((c+1)^beta - c^beta) / beta, stable as beta -> 0."""
    c = np.asarray(c, dtype=float)
    lr = np.log1p(1.0 / c)
    if beta == 0.0:
        return lr
    return c ** beta * np.expm1(beta * lr) / beta


def _hat_halves_1d(c, alpha):
    """(fall, rise) integrals of z^(-1-alpha) over [c, c+1], c >= 1."""
    c = np.asarray(c, dtype=float)
    fall = np.empty_like(c)
    rise = np.empty_like(c)
    near = c < 6
    if np.any(near):
        cn = c[near]
        d1 = _pow_diff_over(cn, 1.0 - alpha)          # int z^-alpha
        d0 = (cn ** -alpha - (cn + 1.0) ** -alpha) / alpha   # int z^(-1-alpha)
        rise[near] = d1 - cn * d0
        fall[near] = (cn + 1.0) * d0 - d1
    if np.any(~near):
        t, w = np.polynomial.legendre.leggauss(12)
        t = 0.5 * (t + 1.0)
        w = 0.5 * w
        cf = c[~near][:, None]
        k = (cf + t) ** (-1.0 - alpha)
        rise[~near] = (k * t * w).sum(axis=1)
        fall[~near] = (k * (1.0 - t) * w).sum(axis=1)
    return fall, rise


def _near_constant(n: int, p: float, sp: float) -> float:
    """Per-neighbour near-field weight at delta = 1."""
    if n == 1:
        return 1.0 / (p - sp)
    val, _ = integrate.quad(lambda th: math.cos(th) ** (sp - p), 0.0, math.pi / 4, epsabs=0, epsrel=1e-13)
    s_p = 8.0 / (p - sp) * val
    return s_p / 4.0


def _cell_table_2d(c1, c2, alpha, m, rule):
    """Q[k, a, b]: kernel integral against corner basis (a, b) of cells (c1[k], c2[k])."""
    c1 = np.asarray(c1, dtype=float)
    c2 = np.asarray(c2, dtype=float)
    q = np.zeros((len(c1), 2, 2))
    excluded = (c1 >= -m) & (c1 <= m - 1) & (c2 >= -m) & (c2 <= m - 1)
    if rule == "midpoint":
        r2 = (c1 + 0.5) ** 2 + (c2 + 0.5) ** 2
        k = 0.25 * r2 ** (-(2.0 + alpha) / 2.0)
        q[:] = k[:, None, None]
        q[excluded] = 0.0
        return q
    t, w = np.polynomial.legendre.leggauss(4)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w
    dist = np.maximum(np.maximum(np.abs(c1 + 0.5), np.abs(c2 + 0.5)) - 0.5, 0.0)
    close = (dist < m + 3) & ~excluded
    far = ~close & ~excluded
    phi = np.stack([1.0 - t, t])                                  # (2, P)
    if np.any(far):
        z1 = c1[far][:, None, None] + t[None, :, None]
        z2 = c2[far][:, None, None] + t[None, None, :]
        k = (z1 * z1 + z2 * z2) ** (-(2.0 + alpha) / 2.0) * (w[:, None] * w[None, :])
        q[far] = np.einsum("kij,ai,bj->kab", k, phi, phi)
    if np.any(close):
        sub = 8
        ts = (np.arange(sub)[:, None] + t[None, :]).ravel() / sub   # (sub*P,)
        ws = np.tile(w, sub) / sub
        phis = np.stack([1.0 - ts, ts])
        z1 = c1[close][:, None, None] + ts[None, :, None]
        z2 = c2[close][:, None, None] + ts[None, None, :]
        k = (z1 * z1 + z2 * z2) ** (-(2.0 + alpha) / 2.0) * (ws[:, None] * ws[None, :])
        q[close] = np.einsum("kij,ai,bj->kab", k, phis, phis)
    return q


def _cos_power_integral(theta, alpha):
    """int_0^theta cos^alpha(t) dt for theta in [0, pi/2]."""
    a, b = 0.5, 0.5 * (alpha + 1.0)
    return 0.5 * special.beta(a, b) * special.betainc(a, b, np.sin(theta) ** 2)


def _rect_complement_2d(a_lo, a_hi, b_lo, b_hi, alpha):
    """Integral of |z|^(-2-alpha) over the complement of [-a_lo, a_hi] x [-b_lo, b_hi]."""
    total = 0.0
    for a in (a_lo, a_hi):
        for b in (b_lo, b_hi):
            th = np.arctan2(b, a)
            total = total + (a ** -alpha * _cos_power_integral(th, alpha)
                             + b ** -alpha * _cos_power_integral(0.5 * np.pi - th, alpha)) / alpha
    return total


def _polar_tail_2d(x, lo, hi, delta, alpha, npts=64):
    """Same integral minus the cube |z|_inf < delta, by polar quadrature (any node)."""
    out = np.empty(len(x))
    t, w = np.polynomial.legendre.leggauss(npts)
    for k, xk in enumerate(x):
        corners = [(lo[0], lo[1]), (hi[0], lo[1]), (hi[0], hi[1]), (lo[0], hi[1])]
        breaks = [math.atan2(cy - xk[1], cx - xk[0]) for cx, cy in corners]
        breaks += [math.pi / 4 + j * math.pi / 2 for j in range(4)]
        breaks = np.sort(np.mod(breaks, 2 * math.pi))
        breaks = np.append(breaks, breaks[0] + 2 * math.pi)
        acc = 0.0
        for th0, th1 in zip(breaks[:-1], breaks[1:]):
            if th1 - th0 < 1e-15:
                continue
            th = 0.5 * (th1 - th0) * t + 0.5 * (th1 + th0)
            c, s = np.cos(th), np.sin(th)
            with np.errstate(divide="ignore", invalid="ignore"):
                tx = np.where(c > 0, (hi[0] - xk[0]) / c, np.where(c < 0, (lo[0] - xk[0]) / c, np.inf))
                ty = np.where(s > 0, (hi[1] - xk[1]) / s, np.where(s < 0, (lo[1] - xk[1]) / s, np.inf))
            r_box = np.maximum(np.minimum(tx, ty), 0.0)
            r_sq = delta / np.maximum(np.abs(c), np.abs(s))
            r = np.maximum(r_box, r_sq)
            acc += 0.5 * (th1 - th0) * np.sum(w * r ** -alpha)
        out[k] = acc / alpha
    return out


def _halfplane_tail(d, delta, alpha):
    """Kernel mass of {z_n < -d} minus the cube |z|_inf < delta (2D)."""
    bconst = math.sqrt(math.pi) * math.gamma(0.5 * (1 + alpha)) / math.gamma(1 + 0.5 * alpha)
    main = bconst * max(d, delta) ** -alpha / alpha
    if d >= delta:
        return main

    def inner(tt):
        val, _ = integrate.quad(lambda z1: (z1 * z1 + tt * tt) ** (-(2 + alpha) / 2), delta, np.inf,
                                epsabs=0, epsrel=1e-12)
        return 2.0 * val

    extra, _ = integrate.quad(inner, d, delta, epsabs=0, epsrel=1e-10)
    return main + extra


class _Geometry:
    """Everything about the weights that does not depend on field values (h = 1 units)."""

    def __init__(self, counts, s, p, m, rule, periodic):
        self.counts = counts
        self.n = len(counts)
        alpha = s * p
        self.alpha = alpha
        self.m = m
        self.periodic = periodic
        n = self.n
        c_near = _near_constant(n, p, alpha) * m ** -alpha
        self.c_near = c_near
        if n == 1:
            self._build_1d(alpha, m, c_near)
        else:
            self._build_2d(alpha, m, c_near, rule)
        self.W.setflags(write=False)
        self.rowsum = self.W.sum(axis=1)

    # -- 1D -------------------------------------------------------------
    def _build_1d(self, alpha, m, c_near):
        (N,) = self.counts
        offs = np.arange(-(N - 1), N - 1)               # cell offsets
        q = np.zeros((len(offs), 2))
        pos = offs >= m
        neg = offs <= -m - 1
        fall, rise = _hat_halves_1d(offs[pos], alpha)
        q[pos, 0], q[pos, 1] = fall, rise
        fall, rise = _hat_halves_1d(-offs[neg] - 1, alpha)
        q[neg, 0], q[neg, 1] = rise, fall
        base = N - 1                                      # index of offset 0
        i = np.arange(N)[:, None]
        j = np.arange(N)[None, :]
        W = np.zeros((N, N))
        # corner a=1: cell j-1 (valid if j >= 1); corner a=0: cell j (valid if j <= N-2)
        cell = j - 1 - i
        W += np.where(j >= 1, q[np.clip(cell + base, 0, len(offs) - 1), 1], 0.0)
        cell = j - i
        W += np.where(j <= N - 2, q[np.clip(cell + base, 0, len(offs) - 1), 0], 0.0)
        idx = np.arange(N)
        for sgn in (-1, 1):
            nb = idx + sgn * m
            ok = (nb >= 0) & (nb < N)
            W[idx[ok], nb[ok]] += c_near
        self.W = W
        d_lo = idx.astype(float)
        d_hi = (N - 1 - idx).astype(float)
        self.tail_lo = np.maximum(d_lo, m) ** -alpha / alpha
        self.tail_hi = np.maximum(d_hi, m) ** -alpha / alpha
        # near neighbours that fall outside the box read the exterior rule
        self.near_out = [(idx - m < 0, np.stack([idx - m], axis=-1).astype(float), "lo"),
                         (idx + m > N - 1, np.stack([idx + m], axis=-1).astype(float), "hi")]

    # -- 2D -------------------------------------------------------------
    def _build_2d(self, alpha, m, c_near, rule):
        N1, N2 = self.counts
        per = self.periodic
        o2 = np.arange(-(N2 - 1), N2 - 1)
        if per:
            images = 8
            o1 = np.arange(-images * N1, (images + 1) * N1)
        else:
            o1 = np.arange(-(N1 - 1), N1 - 1)
        C1, C2 = np.meshgrid(o1, o2, indexing="ij")
        q = _cell_table_2d(C1.ravel(), C2.ravel(), alpha, m, rule).reshape(len(o1), len(o2), 2, 2)
        if per:
            # fold periodic images; offsets become residues 0..N1-1
            q = q.reshape(2 * images + 1, N1, len(o2), 2, 2).sum(axis=0)
            lo_edge, hi_edge = -images * N1, (images + 1) * N1
            for k2, c2 in enumerate(o2):
                rem = 0.0
                for z1 in (hi_edge, -lo_edge):
                    val, _ = integrate.dblquad(
                        lambda x1, x2: (x1 * x1 + x2 * x2) ** (-(2 + alpha) / 2),
                        c2, c2 + 1, z1, np.inf, epsabs=0, epsrel=1e-9)
                    rem += val
                q[:, k2] += rem / (4.0 * N1)
        base2 = N2 - 1
        base1 = 0 if per else N1 - 1
        W = np.zeros((N1, N2, N1, N2))
        j1 = np.arange(N1)[:, None]
        j2 = np.arange(N2)[None, :]
        for i1 in range(N1):
            for a in (0, 1):
                c1 = j1 - a
                if per:
                    off1 = np.mod(c1 - i1, N1)
                    ok1 = np.ones_like(c1, dtype=bool)
                else:
                    off1 = c1 - i1 + base1
                    ok1 = (c1 >= 0) & (c1 <= N1 - 2)
                    off1 = np.clip(off1, 0, len(o1) - 1)
                for b in (0, 1):
                    c2 = j2 - b
                    ok2 = (c2 >= 0) & (c2 <= N2 - 2)
                    # off2[i2, j2] = c2 - i2
                    i2 = np.arange(N2)[:, None, None]
                    off2 = np.clip(c2[None] - i2 + base2, 0, len(o2) - 1)      # (N2, 1, N2)
                    vals = q[off1[None, :, :], off2, a, b]                     # (N2, N1, N2)
                    mask = (ok1 & ok2)[None]
                    W[i1] += np.where(mask, vals, 0.0)
        W = W.reshape(N1 * N2, N1 * N2)
        idx = np.arange(N1 * N2)
        I1, I2 = np.unravel_index(idx, (N1, N2))
        near_out = []
        for axis in (0, 1):
            for sgn in (-1, 1):
                k1 = I1 + (sgn * m if axis == 0 else 0)
                k2 = I2 + (sgn * m if axis == 1 else 0)
                if axis == 0 and per:
                    k1 = np.mod(k1, N1)
                ok = (k1 >= 0) & (k1 < N1) & (k2 >= 0) & (k2 < N2)
                W[idx[ok], np.ravel_multi_index((k1[ok], k2[ok]), (N1, N2))] += c_near
                if np.any(~ok):
                    side = "lo" if sgn < 0 else "hi"
                    near_out.append((~ok, np.stack([k1, k2], axis=-1).astype(float), side))
        self.W = W
        self.near_out = near_out
        if per:
            self.tail_lo = np.array([_halfplane_tail(float(d), m, alpha) for d in range(N2)])[I2]
            self.tail_hi = np.array([_halfplane_tail(float(d), m, alpha) for d in range(N2)])[N2 - 1 - I2]
        else:
            x = np.stack([I1, I2], axis=-1).astype(float)
            lo = np.zeros(2)
            hi = np.array([N1 - 1, N2 - 1], dtype=float)
            dmin = np.minimum(x - lo, hi - x).min(axis=1)
            tail = np.empty(len(x))
            fine = dmin >= m
            tail[fine] = _rect_complement_2d(x[fine, 0], hi[0] - x[fine, 0], x[fine, 1],
                                             hi[1] - x[fine, 1], alpha)
            if np.any(~fine):
                tail[~fine] = _polar_tail_2d(x[~fine], lo, hi, float(m), alpha)
            self.tail_lo = tail
            self.tail_hi = np.zeros(len(x))


@lru_cache(maxsize=6)
def _geometry(counts, s, p, m, rule, periodic) -> _Geometry:
    return _Geometry(counts, s, p, m, rule, periodic)


def _prescribed_quadrature(grid: Grid, radius: float, m: int):
    """Quadrature (points, weights) covering the shell between the grid box and ``radius``.

    Layers double in thickness away from the box.  Returns also the box that
    bounds the outermost layer.
    """
    h = grid.h
    lo, hi = grid.lower.copy(), grid.upper.copy()
    t, w = np.polynomial.legendre.leggauss(4)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w
    pts, wts = [], []
    width = h
    center = grid.center
    while np.max(np.maximum(center - lo, hi - center)) < radius:
        nlo, nhi = lo - width, hi + width
        if grid.dim == 1:
            for a, b in ((nlo[0], lo[0]), (hi[0], nhi[0])):
                pts.append((a + (b - a) * t)[:, None])
                wts.append((b - a) * w)
        else:
            panel = width
            # four rectangles: bottom, top (full width), left, right (inner height)
            rects = [(nlo[0], nhi[0], nlo[1], lo[1]), (nlo[0], nhi[0], hi[1], nhi[1]),
                     (nlo[0], lo[0], lo[1], hi[1]), (hi[0], nhi[0], lo[1], hi[1])]
            for x0, x1, y0, y1 in rects:
                nx = max(1, int(math.ceil((x1 - x0) / panel - 1e-9)))
                ny = max(1, int(math.ceil((y1 - y0) / panel - 1e-9)))
                xs = (x0 + (x1 - x0) * (np.arange(nx)[:, None] + t[None, :]) / nx).ravel()
                ys = (y0 + (y1 - y0) * (np.arange(ny)[:, None] + t[None, :]) / ny).ravel()
                wx = np.tile(w, nx) * (x1 - x0) / nx
                wy = np.tile(w, ny) * (y1 - y0) / ny
                X, Y = np.meshgrid(xs, ys, indexing="ij")
                pts.append(np.stack([X.ravel(), Y.ravel()], axis=-1))
                wts.append(np.outer(wx, wy).ravel())
        lo, hi = nlo, nhi
        width *= 2.0
    if not pts:
        return np.zeros((0, grid.dim)), np.zeros(0), lo, hi
    return np.concatenate(pts), np.concatenate(wts), lo, hi


class DiscreteOperator:
    """The assembled operator for one (grid, params, quadrature, exterior rule)."""

    def __init__(self, grid: Grid, params: OperatorParams, q: QuadratureConfig | None = None,
                 exterior: ExteriorRule | None = None):
        q = q or QuadratureConfig()
        exterior = exterior or ExteriorRule("zero")
        if params.n != grid.dim:
            raise ValueError("operator dimension does not match grid dimension")
        if exterior.periodic and exterior.kind == "prescribed":
            raise ValueError("prescribed data cannot be combined with periodic tangential axes")
        self.grid, self.params, self.q, self.exterior = grid, params, q, exterior
        periodic = exterior.periodic and grid.dim > 1
        geo = _geometry(grid.counts, params.s, params.p, q.m, q.cell_rule, periodic)
        self.geo = geo
        scale = params.c_norm * grid.h ** (-params.sp)
        self.scale = scale
        self.W = geo.W                          # unscaled; multiply sums by self.scale
        # exterior parts: (coef, value) with value a scalar or per-node array
        parts = []
        lo_val, hi_val = self._side_values(exterior)
        if exterior.kind == "prescribed":
            parts.extend(self._prescribed_parts(exterior))
        else:
            parts.append((geo.tail_lo, lo_val))
            if np.any(geo.tail_hi):
                parts.append((geo.tail_hi, hi_val))
        nodes = None
        for mask, nb_index, side in geo.near_out:
            coef = np.where(mask, geo.c_near, 0.0)
            if exterior.kind == "prescribed":
                if nodes is None:
                    nodes = grid.nodes()
                pts = grid.lower + grid.h * nb_index
                vals = np.where(mask, exterior.outside_values(pts, grid), 0.0)
                parts.append((coef, vals))
            else:
                parts.append((coef, lo_val if side == "lo" else hi_val))
        self.parts = parts
        self.quad = getattr(self, "_quad", None)

    @staticmethod
    def _side_values(ext: ExteriorRule):
        if ext.kind == "periodic_tangential":
            return ext.below, ext.above
        if ext.kind == "constant":
            return ext.value, ext.value
        return 0.0, 0.0

    def _prescribed_parts(self, ext: ExteriorRule):
        grid = self.grid
        alpha = self.params.sp
        h = grid.h
        radius = self.q.tail_radius or grid.truncation_radius
        pts, wts, blo, bhi = _prescribed_quadrature(grid, radius, self.q.m)
        nodes = grid.nodes()
        delta = self.q.m * h
        if len(pts):
            diff = nodes[:, None, :] - pts[None, :, :]
            r = np.linalg.norm(diff, axis=-1)
            inside_near = np.max(np.abs(diff), axis=-1) < delta
            kmat = np.where(inside_near, 0.0, wts[None, :] * r ** (-grid.dim - alpha))
            # convert to h = 1 units, matching the other weights
            self._quad = (kmat * h ** alpha, np.asarray(ext.outside_values(pts, grid)))
        # beyond the last layer: data frozen to its mean over the outermost shell
        far_pts = np.concatenate([blo[None, :], bhi[None, :]])
        far_val = float(np.mean(ext.outside_values(far_pts, grid)))
        if grid.dim == 1:
            coef = ((nodes[:, 0] - blo[0]) / h) ** -alpha / alpha + ((bhi[0] - nodes[:, 0]) / h) ** -alpha / alpha
        else:
            x = (nodes - blo) / h
            ext_hi = (bhi - blo) / h
            coef = _rect_complement_2d(x[:, 0], ext_hi[0] - x[:, 0], x[:, 1], ext_hi[1] - x[:, 1], alpha)
        return [(coef, far_val)]

    # -- evaluation -----------------------------------------------------
    def _rows(self, u: np.ndarray, rows: np.ndarray, want_diag: bool):
        p = self.params.p
        d = u[rows, None] - u[None, :]
        Wr = self.W[rows]
        val = np.sum(Wr * g_power(d, p), axis=1)
        diag = None
        if want_diag:
            diag = np.sum(Wr * _g_slope(d, p), axis=1)
        ur = u[rows]
        for coef, value in self.parts:
            cr = coef[rows]
            vr = value[rows] if np.ndim(value) else value
            gd = g_power(ur - vr, p)
            val = val + np.where(gd == 0.0, 0.0, cr * gd)
            if want_diag:
                diag = diag + cr * _g_slope(ur - vr, p)
        if self.quad is not None:
            kmat, gq = self.quad
            dq = ur[:, None] - gq[None, :]
            val = val + np.sum(kmat[rows] * g_power(dq, p), axis=1)
            if want_diag:
                diag = diag + np.sum(kmat[rows] * _g_slope(dq, p), axis=1)
        return val, diag

    def apply(self, u, rows=None, want_diag: bool = False):
        """Operator values at ``rows`` (flat node indices; default all).

        With ``want_diag`` also returns the diagonal of the Jacobian,
        ``(p-1) * sum_j W_ij |u_i - u_j|^(p-2)`` (scaled), used for step control.
        """
        u = np.asarray(u, dtype=float).ravel()
        rows = np.arange(u.size) if rows is None else np.asarray(rows, dtype=np.intp).ravel()
        chunks = [rows[k:k + _CHUNK_ROWS] for k in range(0, len(rows), _CHUNK_ROWS)]
        if _THREADS > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=_THREADS) as pool:
                results = list(pool.map(lambda r: self._rows(u, r, want_diag), chunks))
        else:
            results = [self._rows(u, r, want_diag) for r in chunks]
        if not results:
            empty = np.zeros(0)
            return (empty, empty) if want_diag else empty
        val = np.concatenate([r[0] for r in results]) * self.scale
        if want_diag:
            diag = np.concatenate([r[1] for r in results]) * self.scale * (self.params.p - 1.0)
            return val, diag
        return val

    def total_weight(self) -> np.ndarray:
        """Sum of all (scaled) weights at each node: mid + near + tails."""
        tot = self.geo.rowsum.copy()
        for coef, _ in self.parts:
            tot = tot + coef
        if self.quad is not None:
            tot = tot + self.quad[0].sum(axis=1)
        return tot * self.scale


_OP_CACHE: dict = {}


def operator_for(grid: Grid, params: OperatorParams, q: QuadratureConfig | None = None,
                 exterior: ExteriorRule | None = None) -> DiscreteOperator:
    q = q or QuadratureConfig()
    exterior = exterior or ExteriorRule("zero")
    key = (grid, params, q, exterior, id(exterior.g) if exterior.g is not None else None)
    op = _OP_CACHE.get(key)
    if op is None:
        if len(_OP_CACHE) > 16:
            _OP_CACHE.clear()
        op = DiscreteOperator(grid, params, q, exterior)
        _OP_CACHE[key] = op
    return op


def _check_field(u: Field):
    if u.mask is not None or not np.all(np.isfinite(u.values)):
        raise ValueError("field has non-finite values")


def eval_point(u: Field, params: OperatorParams, q: QuadratureConfig | None, x) -> float:
    """Operator value of ``u`` at the grid node ``x``."""
    _check_field(u)
    i = u.grid.flat_index(x)
    op = operator_for(u.grid, params, q, u.exterior)
    return float(op.apply(u.flat, rows=[i])[0])


def eval_field(u: Field, params: OperatorParams, q: QuadratureConfig | None = None,
               region: DomainSpec | None = None) -> Field:
    """Operator values at the nodes in ``region`` (all nodes if None); NaN elsewhere."""
    _check_field(u)
    op = operator_for(u.grid, params, q, u.exterior)
    if region is None:
        mask = np.ones(u.grid.counts, dtype=bool)
    else:
        mask = region.node_mask(u.grid)
    rows = np.flatnonzero(mask.ravel())
    out = np.full(u.grid.size, np.nan)
    out[rows] = op.apply(u.flat, rows=rows)
    return Field(u.grid, out.reshape(u.grid.counts), u.exterior, mask=mask)


def near_part(u: Field, params: OperatorParams, q: QuadratureConfig | None, x) -> float:
    """The near-field (|z|_inf < delta) share of the operator value at node ``x``."""
    q = q or QuadratureConfig()
    op = operator_for(u.grid, params, q, u.exterior)
    g = u.grid
    idx = np.array(g.index_of(x))
    ui = float(u.values[tuple(idx)])
    total = 0.0
    periodic = u.exterior.periodic_axes(g.dim)
    for a in range(g.dim):
        for sgn in (-1, 1):
            k = idx.copy()
            k[a] += sgn * q.m
            pt = g.lower + g.h * k
            if a in periodic:
                k[a] %= g.counts[a]
            if np.all(k >= 0) and np.all(k < np.array(g.counts)):
                uj = float(u.values[tuple(k)])
            else:
                uj = float(u(pt[None, :])[0])
            total += float(g_power(ui - uj, params.p))
    return total * op.geo.c_near * op.scale


def tail_integral(u_at_x: float, params: OperatorParams, x, R: float, exterior_rule: ExteriorRule) -> float:
    """Kernel integral of G(u(x) - c) over |y - x| > R for constant exterior data c."""
    if exterior_rule.kind == "zero":
        c = 0.0
    elif exterior_rule.kind == "constant":
        c = exterior_rule.value
    else:
        raise ValueError("tail_integral handles zero and constant exterior rules only; "
                         "prescribed data are integrated numerically by eval_point")
    if not R > 0:
        raise ValueError("R must be positive")
    sp = params.sp
    return params.c_norm * g_power(u_at_x - c, params.p) * sphere_measure(params.n) * R ** -sp / sp


def perturbation_gap(u: Field, bump, eps: float, params: OperatorParams,
                     q: QuadratureConfig | None, x) -> float:
    """|L(u + eps*bump)(x) - L(u)(x)| with the bump sampled on u's grid."""
    from .barriers import sample
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    b = sample(bump, u.grid)
    v = u.with_values(u.values + eps * b.values)
    return abs(eval_point(v, params, q, x) - eval_point(u, params, q, x))


def write_operator_csv(values: Field, path) -> None:
    """``index..., value`` rows for the nodes carrying operator values."""
    g = values.grid
    idx = np.indices(g.counts).reshape(g.dim, -1).T
    mask = np.ones(g.size, dtype=bool) if values.mask is None else values.mask.ravel()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for multi, v, keep in zip(idx, values.values.ravel(), mask):
            if keep:
                fh.write(", ".join([*(str(int(k)) for k in multi), format_float(v)]) + "\n")
