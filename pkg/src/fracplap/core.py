"""Shared domain types: operator parameters, grids, fields, domains, nonlinearities.

Everything here is immutable after construction.  Points are passed around as
arrays of shape ``(m, dim)``; 1D helpers also accept flat arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "OperatorParams", "Grid", "ExteriorRule", "Field", "DomainSpec", "Nonlinearity",
    "NonlinearityReport", "zero_exterior", "constant_exterior", "prescribed_exterior",
    "periodic_tangential", "register_prescribed", "as_points",
    "half_space", "epigraph", "ball", "strip", "perforated_slabs", "perforated_shells",
    "custom_domain", "make_allen_cahn", "make_fisher_kpp", "validate_nonlinearity",
    "write_field_csv", "read_field_csv", "format_float",
]


def as_points(x, dim: int) -> np.ndarray:
    """Coerce ``x`` to an ``(m, dim)`` float array."""
    arr = np.asarray(x, dtype=float)
    if dim == 1 and arr.ndim <= 1:
        return arr.reshape(-1, 1)
    arr = np.atleast_2d(arr)
    if arr.shape[-1] != dim:
        raise ValueError(f"points must have trailing dimension {dim}, got shape {arr.shape}")
    return arr.reshape(-1, dim)


def format_float(v: float) -> str:
    return format(float(v), ".17g")


# ---------------------------------------------------------------------------
# operator parameters

@dataclass(frozen=True)
class OperatorParams:
    n: int
    s: float
    p: float
    c_norm: float = 1.0

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError("n must be 1 or 2")
        if not 0.0 < self.s < 1.0:
            raise ValueError("s must lie in (0,1)")
        if not self.p >= 2.0:
            raise ValueError("p must be ≥ 2")
        if not self.c_norm > 0.0:
            raise ValueError("c_norm must be positive")

    @property
    def sp(self) -> float:
        return self.s * self.p


# ---------------------------------------------------------------------------
# grids

@dataclass(frozen=True)
class Grid:
    """Uniform node grid; node ``k`` along axis ``a`` sits at ``origin[a] + k*h``."""

    origin: tuple
    h: float
    counts: tuple
    truncation_radius: Optional[float] = None

    def __post_init__(self):
        origin = tuple(float(o) for o in np.atleast_1d(self.origin))
        counts = tuple(int(c) for c in np.atleast_1d(self.counts))
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "h", float(self.h))
        if len(origin) != len(counts):
            raise ValueError("origin and counts must have the same length")
        if len(counts) not in (1, 2):
            raise ValueError("only 1D and 2D grids are supported")
        if not self.h > 0:
            raise ValueError("grid spacing h must be positive")
        if min(counts) < 3:
            raise ValueError("every axis needs at least 3 nodes")
        if self.truncation_radius is None:
            object.__setattr__(self, "truncation_radius", 4.0 * self.half_diameter)
        elif self.truncation_radius < self.half_diameter:
            raise ValueError("truncation_radius must be at least half the grid diameter")

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def shape(self) -> tuple:
        return self.counts

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def lower(self) -> np.ndarray:
        return np.array(self.origin)

    @property
    def upper(self) -> np.ndarray:
        return np.array(self.origin) + self.h * (np.array(self.counts) - 1)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def half_diameter(self) -> float:
        return 0.5 * float(np.linalg.norm(self.upper - self.lower))

    def axis(self, a: int) -> np.ndarray:
        return self.origin[a] + self.h * np.arange(self.counts[a])

    def nodes(self) -> np.ndarray:
        """All node coordinates, shape ``(size, dim)``, in C (row-major) order."""
        axes = np.meshgrid(*[self.axis(a) for a in range(self.dim)], indexing="ij")
        return np.stack([ax.ravel() for ax in axes], axis=-1)

    def index_of(self, x, atol: float = 1e-9) -> tuple:
        """Multi-index of the node at ``x``; raises if ``x`` is not a node."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.dim,):
            raise ValueError(f"expected a point in R^{self.dim}")
        t = (x - self.lower) / self.h
        k = np.rint(t)
        if np.any(np.abs(t - k) > atol) or np.any(k < 0) or np.any(k >= np.array(self.counts)):
            raise ValueError(f"point {x.tolist()} is not a node of the grid")
        return tuple(int(v) for v in k)

    def flat_index(self, x) -> int:
        return int(np.ravel_multi_index(self.index_of(x), self.counts))

    def scaled(self, factor: float, about=None) -> "Grid":
        """Same node counts, spacing times ``factor``, origin scaled about ``about``."""
        about = np.zeros(self.dim) if about is None else np.asarray(about, dtype=float)
        origin = about + factor * (self.lower - about)
        return Grid(tuple(origin), self.h * factor, self.counts, self.truncation_radius * factor)


# ---------------------------------------------------------------------------
# exterior rules

_PRESCRIBED: dict = {}


def register_prescribed(name: str, g: Callable) -> None:
    """Make a closed-form exterior function readable from CSV headers."""
    _PRESCRIBED[name] = g


@dataclass(frozen=True)
class ExteriorRule:
    """How a field continues outside its grid box.

    ``periodic_tangential`` wraps the tangential axes (all but the last) and
    takes the constant ``below`` under the box and ``above`` over it along the
    last axis.  In 1D it reduces to two one-sided constants.
    """

    kind: str
    value: float = 0.0
    below: float = 0.0
    above: float = 0.0
    g: Optional[Callable] = dc_field(default=None, compare=False)
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "prescribed", "periodic_tangential"):
            raise ValueError(f"unknown exterior rule {self.kind!r}")
        if self.kind == "prescribed" and self.g is None:
            raise ValueError("prescribed exterior rule needs a function g")
        for v in (self.value, self.below, self.above):
            if not math.isfinite(v):
                raise ValueError("exterior values must be finite")

    @property
    def periodic(self) -> bool:
        return self.kind == "periodic_tangential"

    def periodic_axes(self, dim: int) -> tuple:
        return tuple(range(dim - 1)) if self.periodic else ()

    def bounds(self) -> tuple:
        """(min, max) of the exterior values where known in closed form."""
        if self.kind == "zero":
            return (0.0, 0.0)
        if self.kind == "constant":
            return (self.value, self.value)
        if self.kind == "periodic_tangential":
            return (min(self.below, self.above), max(self.below, self.above))
        return (-math.inf, math.inf)

    def outside_values(self, points: np.ndarray, grid: Grid) -> np.ndarray:
        """Exterior values at ``points`` (assumed outside the grid box)."""
        if self.kind == "zero":
            return np.zeros(len(points))
        if self.kind == "constant":
            return np.full(len(points), self.value)
        if self.kind == "prescribed":
            return np.asarray(self.g(points), dtype=float).reshape(len(points))
        xn = points[:, -1]
        mid = 0.5 * (grid.lower[-1] + grid.upper[-1])
        return np.where(xn < mid, self.below, self.above)

    def to_text(self) -> str:
        if self.kind == "zero":
            return "zero"
        if self.kind == "constant":
            return f"constant({format_float(self.value)})"
        if self.kind == "periodic_tangential":
            return f"periodic_tangential({format_float(self.below)},{format_float(self.above)})"
        return f"prescribed({self.name})"

    @classmethod
    def from_text(cls, text: str) -> "ExteriorRule":
        text = text.strip()
        if text == "zero":
            return zero_exterior()
        head, _, rest = text.partition("(")
        args = rest.rstrip(")").strip()
        if head == "constant":
            return constant_exterior(float(args))
        if head == "periodic_tangential":
            below, above = (float(a) for a in args.split(","))
            return periodic_tangential(below, above)
        if head == "prescribed":
            if args not in _PRESCRIBED:
                raise ValueError(f"prescribed exterior {args!r} is not registered")
            return prescribed_exterior(_PRESCRIBED[args], args)
        raise ValueError(f"cannot parse exterior rule {text!r}")


def zero_exterior() -> ExteriorRule:
    return ExteriorRule("zero")


def constant_exterior(c: float) -> ExteriorRule:
    return ExteriorRule("constant", value=float(c))


def prescribed_exterior(g: Callable, name: str = "g") -> ExteriorRule:
    return ExteriorRule("prescribed", g=g, name=name)


def periodic_tangential(below: float = 0.0, above: float = 0.0) -> ExteriorRule:
    return ExteriorRule("periodic_tangential", below=float(below), above=float(above))


# ---------------------------------------------------------------------------
# fields

class Field:
    """Nodal values on a grid plus the rule that extends them to all of R^n.

    ``mask`` marks which nodes carry meaningful values; unmasked nodes hold
    NaN as a sentinel (used for operator outputs restricted to a region).
    """

    __slots__ = ("grid", "values", "exterior", "mask")

    def __init__(self, grid: Grid, values, exterior: ExteriorRule | None = None, mask=None):
        vals = np.array(values, dtype=float).reshape(grid.counts)
        if mask is not None:
            mask = np.array(mask, dtype=bool).reshape(grid.counts)
            vals[~mask] = np.nan
            mask.setflags(write=False)
            check = vals[mask]
        else:
            check = vals
        if not np.all(np.isfinite(check)):
            raise ValueError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "exterior", exterior or zero_exterior())
        object.__setattr__(self, "mask", mask)

    def __setattr__(self, name, value):
        raise AttributeError("Field is immutable")

    def __repr__(self):
        return f"Field(grid={self.grid!r}, exterior={self.exterior.to_text()})"

    @classmethod
    def from_function(cls, grid: Grid, func: Callable, exterior: ExteriorRule | None = None) -> "Field":
        vals = np.asarray(func(grid.nodes()), dtype=float).reshape(grid.counts)
        return cls(grid, vals, exterior)

    @classmethod
    def constant(cls, grid: Grid, c: float) -> "Field":
        return cls(grid, np.full(grid.counts, float(c)), constant_exterior(c))

    def with_values(self, values, exterior: ExteriorRule | None = None) -> "Field":
        return Field(self.grid, values, exterior or self.exterior)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def node_value(self, x) -> float:
        return float(self.values[self.grid.index_of(x)])

    def __call__(self, points) -> np.ndarray:
        """Evaluate anywhere: multilinear inside the box, exterior rule outside."""
        g = self.grid
        pts = as_points(points, g.dim)
        out = np.empty(len(pts))
        periodic = self.exterior.periodic_axes(g.dim)
        t = (pts - g.lower) / g.h
        counts = np.array(g.counts)
        inside = np.ones(len(pts), dtype=bool)
        for a in range(g.dim):
            if a in periodic:
                t[:, a] = np.mod(t[:, a], counts[a])
            else:
                inside &= (t[:, a] >= -1e-12) & (t[:, a] <= counts[a] - 1 + 1e-12)
        if np.any(~inside):
            out[~inside] = self.exterior.outside_values(pts[~inside], g)
        if np.any(inside):
            ti = t[inside]
            base = np.floor(ti).astype(int)
            frac = ti - base
            acc = np.zeros(len(ti))
            for corner in np.ndindex(*(2,) * g.dim):
                idx = []
                weight = np.ones(len(ti))
                for a, c in enumerate(corner):
                    k = base[:, a] + c
                    if a in periodic:
                        k = np.mod(k, counts[a])
                    else:
                        k = np.clip(k, 0, counts[a] - 1)
                    idx.append(k)
                    weight *= frac[:, a] if c else (1.0 - frac[:, a])
                acc += weight * self.values[tuple(idx)]
            out[inside] = acc
        return out


# ---------------------------------------------------------------------------
# domains

@dataclass(frozen=True, eq=False)
class DomainSpec:
    """A region of R^n given by a membership predicate and a boundary distance."""

    kind: str
    dim: int
    membership: Callable = dc_field(repr=False)
    boundary_distance: Callable = dc_field(repr=False)
    params: dict = dc_field(default_factory=dict)

    def contains(self, points) -> np.ndarray:
        return np.asarray(self.membership(as_points(points, self.dim)), dtype=bool)

    def distance(self, points) -> np.ndarray:
        return np.asarray(self.boundary_distance(as_points(points, self.dim)), dtype=float)

    def node_mask(self, grid: Grid) -> np.ndarray:
        return self.contains(grid.nodes()).reshape(grid.counts)

    def complement(self) -> "DomainSpec":
        return DomainSpec(f"complement({self.kind})", self.dim,
                          lambda x: ~np.asarray(self.membership(x), dtype=bool),
                          self.boundary_distance, dict(self.params))

    def describe(self) -> dict:
        return {"kind": self.kind, "dim": self.dim,
                **{k: v for k, v in self.params.items() if isinstance(v, (int, float, str, list))}}


def half_space(dim: int) -> DomainSpec:
    """{x : x_n > 0}."""
    return DomainSpec("half_space", dim, lambda x: x[:, -1] > 0, lambda x: np.abs(x[:, -1]))


def epigraph(phi: Callable, dim: int, samples: int = 257) -> DomainSpec:
    """{x : x_n > phi(x')}.  In 1D ``phi`` is a constant."""
    if dim == 1:
        c = float(phi(np.zeros((1, 0)))) if callable(phi) else float(phi)
        return DomainSpec("epigraph", 1, lambda x: x[:, 0] > c, lambda x: np.abs(x[:, 0] - c),
                          {"level": c})

    def member(x):
        return x[:, -1] > np.asarray(phi(x[:, :-1])).reshape(-1)

    def dist(x):
        x1, x2 = x[:, 0], x[:, 1]
        r0 = np.abs(x2 - np.asarray(phi(x[:, :1])).reshape(-1))
        s = np.linspace(-1.0, 1.0, samples)
        t = x1[:, None] + r0[:, None] * s[None, :]
        gt = np.asarray(phi(t.reshape(-1, 1))).reshape(t.shape)
        d = np.sqrt((t - x1[:, None]) ** 2 + (gt - x2[:, None]) ** 2)
        return np.minimum(d.min(axis=1), r0)

    return DomainSpec("epigraph", dim, member, dist)


def ball(center, radius: float) -> DomainSpec:
    center = np.atleast_1d(np.asarray(center, dtype=float))
    dim = center.size
    return DomainSpec("ball", dim,
                      lambda x: np.linalg.norm(x - center, axis=1) < radius,
                      lambda x: np.abs(np.linalg.norm(x - center, axis=1) - radius),
                      {"center": center.tolist(), "radius": float(radius)})


def strip(height: float, dim: int) -> DomainSpec:
    """{x : 0 < x_n < height}."""
    return DomainSpec("strip", dim,
                      lambda x: (x[:, -1] > 0) & (x[:, -1] < height),
                      lambda x: np.minimum(np.abs(x[:, -1]), np.abs(height - x[:, -1])),
                      {"height": float(height)})


def _unit_period_distance(t):
    """Distance from t to the nearest integer."""
    return np.abs(t - np.rint(t))


def perforated_slabs(dim: int) -> DomainSpec:
    """Union of slabs 2i < x_n < 2i+1 over all integers i."""
    def member(x):
        m = np.mod(x[:, -1], 2.0)
        return (m > 0.0) & (m < 1.0)

    return DomainSpec("perforated_slabs", dim, member,
                      lambda x: _unit_period_distance(x[:, -1]))


def perforated_shells(dim: int) -> DomainSpec:
    """Union of shells 2i < |x| < 2i+1 for i >= 0."""
    def member(x):
        r = np.linalg.norm(x, axis=1)
        m = np.mod(r, 2.0)
        return (m > 0.0) & (m < 1.0)

    return DomainSpec("perforated_shells", dim, member,
                      lambda x: _unit_period_distance(np.linalg.norm(x, axis=1)))


def custom_domain(predicate: Callable, dim: int, distance: Callable | None = None) -> DomainSpec:
    if distance is None:
        def distance(x):
            raise NotImplementedError("custom domain has no boundary distance")
    return DomainSpec("custom", dim, predicate, distance)


# ---------------------------------------------------------------------------
# nonlinearities

@dataclass(frozen=True, eq=False)
class Nonlinearity:
    mu: float
    t0: float
    t1: float
    delta0: float
    f: Callable = dc_field(repr=False)
    name: str = "custom"

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if not self.delta0 > 0:
            raise ValueError("delta0 must be positive")
        if not 0 < self.t0 < self.t1 < self.mu:
            raise ValueError("need 0 < t0 < t1 < mu")

    def __call__(self, t):
        return self.f(t)

    def lipschitz(self, lo: float = 0.0, hi: float | None = None, samples: int = 10_001) -> float:
        """Sampled Lipschitz constant of f on [lo, hi] (default [0, mu])."""
        hi = self.mu if hi is None else hi
        t = np.linspace(lo, hi, samples)
        ft = np.asarray(self.f(t), dtype=float)
        return float(np.max(np.abs(np.diff(ft)) / np.diff(t)))

    def describe(self) -> dict:
        return {"name": self.name, "mu": self.mu, "t0": self.t0, "t1": self.t1, "delta0": self.delta0}


def make_allen_cahn() -> Nonlinearity:
    return Nonlinearity(mu=1.0, t0=0.5, t1=1.0 / math.sqrt(3.0), delta0=0.75,
                        f=lambda t: t - t ** 3, name="allen_cahn")


def make_fisher_kpp() -> Nonlinearity:
    return Nonlinearity(mu=1.0, t0=0.25, t1=0.5, delta0=0.75,
                        f=lambda t: t - t ** 2, name="fisher_kpp")


@dataclass
class NonlinearityReport:
    a_ok: bool
    b_ok: bool
    c_ok: bool
    a_worst: tuple      # (t, margin)
    b_worst: tuple
    c_worst: tuple

    @property
    def ok(self) -> bool:
        return self.a_ok and self.b_ok and self.c_ok


def validate_nonlinearity(nl: Nonlinearity, samples: int = 10_000,
                          slack: float = 1e-12) -> NonlinearityReport:
    """Check the sign, linear-growth and monotone-tail conditions by dense sampling.

    Margins are signed so that a negative margin is a violation.
    """
    mu, f = nl.mu, nl.f
    # (a): f > 0 on (0, mu), f <= 0 on [mu, 2 mu]
    t_in = np.linspace(0.0, mu, samples + 2)[1:-1]
    t_out = np.linspace(mu, 2.0 * mu, samples)
    m_in = np.asarray(f(t_in), dtype=float)
    m_out = -np.asarray(f(t_out), dtype=float)
    i_in, i_out = int(np.argmin(m_in)), int(np.argmin(m_out))
    if m_in[i_in] <= m_out[i_out]:
        a_worst = (float(t_in[i_in]), float(m_in[i_in]))
    else:
        a_worst = (float(t_out[i_out]), float(m_out[i_out]))
    a_ok = bool(m_in[i_in] > 0 and m_out[i_out] >= -slack)

    # (b): f(t) >= delta0 t on [0, t0]
    tb = np.linspace(0.0, nl.t0, samples)
    mb = np.asarray(f(tb), dtype=float) - nl.delta0 * tb
    ib = int(np.argmin(mb))
    b_ok = bool(mb[ib] >= -slack * max(1.0, abs(nl.delta0 * nl.t0)))

    # (c): f nonincreasing on (t1, mu)
    tc = np.linspace(nl.t1, mu, samples)
    fc = np.asarray(f(tc), dtype=float)
    mc = fc[:-1] - fc[1:]
    ic = int(np.argmin(mc))
    c_ok = bool(mc[ic] >= -slack * max(1.0, float(np.max(np.abs(fc)))))
    return NonlinearityReport(a_ok, b_ok, c_ok, a_worst, (float(tb[ib]), float(mb[ib])),
                              (float(tc[ic]), float(mc[ic])))


# ---------------------------------------------------------------------------
# CSV layout

def write_field_csv(fld: Field, path) -> None:
    """Header ``# dim, h, origin..., counts..., exterior_rule`` then ``index..., value`` rows."""
    g = fld.grid
    head = [str(g.dim), format_float(g.h), *(format_float(o) for o in g.origin),
            *(str(c) for c in g.counts), fld.exterior.to_text()]
    lines = ["# " + ", ".join(head)]
    idx = np.indices(g.counts).reshape(g.dim, -1).T
    for multi, v in zip(idx, fld.values.ravel()):
        lines.append(", ".join([*(str(int(k)) for k in multi), format_float(v)]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_field_csv(path) -> Field:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        body = fh.read()
    if not header.startswith("#"):
        raise ValueError(f"{path}: missing '#' header row")
    first, rest = header[1:].strip().split(",", 1)
    dim = int(first)
    parts = [t.strip() for t in rest.split(",", 2 * dim + 1)]
    h = float(parts[0])
    origin = tuple(float(t) for t in parts[1:1 + dim])
    counts = tuple(int(t) for t in parts[1 + dim:1 + 2 * dim])
    exterior = ExteriorRule.from_text(parts[1 + 2 * dim])
    grid = Grid(origin, h, counts)
    values = np.full(counts, np.nan)
    seen = np.zeros(counts, dtype=bool)
    for lineno, line in enumerate(body.splitlines(), start=2):
        if not line.strip():
            continue
        toks = [t.strip() for t in line.split(",")]
        if len(toks) != dim + 1:
            raise ValueError(f"{path}:{lineno}: expected {dim + 1} columns")
        k = tuple(int(t) for t in toks[:dim])
        values[k] = float(toks[dim])
        seen[k] = True
    if not seen.all():
        raise ValueError(f"{path}: missing node rows")
    mask = np.isfinite(values)
    return Field(grid, values, exterior, mask=None if mask.all() else mask)
