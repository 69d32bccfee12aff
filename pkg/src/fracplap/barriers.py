"""Closed-form comparison functions: smooth bumps and the boundary profile.

All three are radial, nonincreasing, and exactly zero outside their support.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DomainSpec, Field, Grid, as_points, zero_exterior

__all__ = ["BarrierHandle", "phi1", "phi2", "cone_psi", "sample", "scaled", "build_subsolution"]



def _radius(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return np.abs(x)
    return np.linalg.norm(x, axis=-1)


def _bump(r2: np.ndarray, support2: float) -> np.ndarray:
    out = np.zeros_like(r2)
    inside = r2 < support2
    # the normaliser sits inside the exponent so the centre value is exactly 1
    out[inside] = np.exp(1.0 / support2 + 1.0 / (r2[inside] - support2))
    return out


def phi2(x):
    """e^(1/4) exp(1/(|x|^2 - 4)) on |x| < 2, so that phi2(0) = 1."""
    r = _radius(x)
    out = _bump(np.atleast_1d(r * r), 4.0)
    return out if np.ndim(r) else float(out[0])


def phi1(x):
    """e exp(1/(|x|^2 - 1)) on |x| < 1, so that phi1(0) = 1."""
    r = _radius(x)
    out = _bump(np.atleast_1d(r * r), 1.0)
    return out if np.ndim(r) else float(out[0])


def cone_psi(x, s: float):
    """(1 - |x|^2)_+^s."""
    if not 0.0 < s < 1.0:
        raise ValueError("s must lie in (0,1)")
    r = np.atleast_1d(_radius(x))
    out = np.zeros_like(r)
    inside = r < 1.0
    out[inside] = (1.0 - r[inside] ** 2) ** s
    return out if np.ndim(_radius(x)) else float(out[0])


_SUPPORT = {"phi2": 2.0, "phi1": 1.0, "cone_psi": 1.0}


@dataclass(frozen=True)
class BarrierHandle:
    """A barrier placed at ``center`` with spatial scale ``R`` and height ``amplitude``.

    ``s`` is only read by ``cone_psi``.
    """

    kind: str
    center: tuple = (0.0,)
    R: float = 1.0
    amplitude: float = 1.0
    s: float = 0.5

    def __post_init__(self):
        if self.kind not in _SUPPORT:
            raise ValueError(f"unknown barrier kind {self.kind!r}")
        if not self.R > 0:
            raise ValueError("R must be positive")
        if not self.amplitude >= 0:
            raise ValueError("amplitude must be nonnegative")
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))

    @property
    def support_radius(self) -> float:
        return _SUPPORT[self.kind] * self.R

    def __call__(self, points) -> np.ndarray:
        pts = as_points(points, len(self.center))
        z = (pts - np.asarray(self.center)) / self.R
        if self.kind == "phi2":
            base = phi2(z)
        elif self.kind == "phi1":
            base = phi1(z)
        else:
            base = cone_psi(z, self.s)
        return self.amplitude * np.asarray(base, dtype=float)


def sample(handle: BarrierHandle, grid: Grid) -> Field:
    """Sample a barrier onto ``grid``; its support must fit inside the grid box."""
    c = np.asarray(handle.center)
    if len(c) != grid.dim:
        raise ValueError("barrier centre dimension does not match the grid")
    rad = handle.support_radius
    if np.any(c - rad < grid.lower - 1e-12) or np.any(c + rad > grid.upper + 1e-12):
        raise ValueError("scaled barrier support does not fit inside the grid")
    return Field(grid, handle(grid.nodes()).reshape(grid.counts), zero_exterior())


def scaled(handle: BarrierHandle, center, R: float, amplitude: float, grid: Grid) -> Field:
    """amplitude * base((x - center) / R) sampled on ``grid``, exterior zero."""
    moved = BarrierHandle(handle.kind, tuple(np.atleast_1d(center)), R, amplitude, handle.s)
    return sample(moved, grid)


def build_subsolution(u: Field, D: DomainSpec, eps: float, ball, s: float) -> Field:
    """u restricted to D plus ``eps`` times the boundary profile on ``ball``.

    ``ball`` is ``(center, radius)``; the profile is (1 - |x - c|^2 / r^2)_+^s.
    """
    grid = u.grid
    center, radius = ball
    in_d = D.node_mask(grid)
    if not np.any(in_d):
        if eps == 0:
            return Field(grid, np.zeros(grid.counts), zero_exterior())
        raise ValueError("D contains no grid nodes")
    profile = BarrierHandle("cone_psi", tuple(np.atleast_1d(center)), radius, eps, s)
    vals = np.where(in_d, u.values, 0.0) + profile(grid.nodes()).reshape(grid.counts)
    return Field(grid, vals, zero_exterior())
