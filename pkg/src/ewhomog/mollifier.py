"""Smooth compactly supported bump mollifiers.

The temporal bump lives on [0, 1]; the spatial bump is radial with support
{|x| <= 1/2}.  Both are tabulated on uniform grids and scaled to unit mass so
that the naive noise variance of the model equals 1, which gives clean
baselines downstream.  The spatial mollifier is stored as its 1-D radial
section; evaluation goes through |x|, so evenness is exact by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import gamma as _gamma_fn

import numpy as np

from .errors import ConfigurationError


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d (2 for d=1 by convention)."""
    return 2.0 * np.pi ** (d / 2.0) / _gamma_fn(d / 2.0)


@dataclass(frozen=True)
class Mollifier:
    """A tabulated bump function.

    kind "time": grid over [0, support_radius], plain 1-D mass.
    kind "space": grid is the radial section over [-support_radius,
    support_radius] in `dimension` ambient dimensions; the mass is the full
    d-dimensional integral computed by the radial trapezoid rule.
    """

    grid_values: np.ndarray
    support_radius: float
    grid_step: float
    normalization: float
    kind: str
    dimension: int = 1

    @property
    def grid(self) -> np.ndarray:
        n = self.grid_values.size
        if self.kind == "time":
            return np.arange(n) * self.grid_step
        return -self.support_radius + np.arange(n) * self.grid_step

    def integral(self) -> float:
        """Trapezoid-rule mass in the mollifier's own measure."""
        if self.kind == "time":
            return float(np.trapezoid(self.grid_values, dx=self.grid_step))
        r, f = self.radial_section()
        d = self.dimension
        return float(sphere_area(d) * np.trapezoid(f * r ** (d - 1), dx=self.grid_step))

    def radial_section(self) -> tuple[np.ndarray, np.ndarray]:
        """(radii, values) on [0, support_radius] for a spatial mollifier."""
        if self.kind != "space":
            raise ValueError("radial_section is for spatial mollifiers")
        mid = self.grid_values.size // 2
        return np.arange(mid + 1) * self.grid_step, self.grid_values[mid:]

    def __call__(self, x) -> np.ndarray:
        """Evaluate by linear interpolation; zero outside the support."""
        x = np.asarray(x, dtype=float)
        if self.kind == "time":
            return np.interp(x, self.grid, self.grid_values, left=0.0, right=0.0)
        r = np.sqrt(np.sum(x * x, axis=-1)) if x.ndim and x.shape[-1] == self.dimension else np.abs(x)
        radii, vals = self.radial_section()
        return np.interp(r, radii, vals, left=vals[0], right=0.0)


@dataclass(frozen=True)
class MollifierPair:
    phi: Mollifier
    psi: Mollifier
    dimension: int


def _bump(u: np.ndarray) -> np.ndarray:
    """exp(-1/u) clamped to 0 for u <= 0, evaluated without overflow."""
    out = np.zeros_like(u)
    pos = u > 1e-12
    out[pos] = np.exp(-1.0 / u[pos])
    return out


def make_bump_mollifiers(dimension: int, grid_points: int = 256) -> MollifierPair:
    """Standard exp(-1/.) bumps, each normalized to unit mass.

    grid_points is the cell count of the tabulation grids; it must be even so
    the spatial section has a node exactly at the origin.
    """
    if dimension < 1:
        raise ConfigurationError(f"dimension must be >= 1, got {dimension}")
    if grid_points < 16:
        raise ConfigurationError(
            f"grid_points={grid_points} is too small to resolve the bump (need >= 16)"
        )
    gp = int(grid_points)
    if gp % 2:
        gp += 1

    # temporal bump on [0, 1]: phi(t) ~ exp(-1/(t(1-t)))
    t = np.linspace(0.0, 1.0, gp + 1)
    phi_vals = _bump(t * (1.0 - t))
    h_t = 1.0 / gp
    phi_vals = phi_vals / np.trapezoid(phi_vals, dx=h_t)
    phi = Mollifier(phi_vals, 1.0, h_t, 1.0, "time")

    # spatial radial bump on {|x| <= 1/2}: psi(x) ~ exp(-1/(1/4-|x|^2))
    r = np.linspace(-0.5, 0.5, gp + 1)
    psi_vals = _bump(0.25 - r * r)
    psi_vals = 0.5 * (psi_vals + psi_vals[::-1])  # exact evenness on the grid
    h_r = 1.0 / gp
    half = psi_vals[gp // 2 :]
    radii = np.arange(half.size) * h_r
    mass = sphere_area(dimension) * np.trapezoid(half * radii ** (dimension - 1), dx=h_r)
    psi_vals = psi_vals / mass
    psi = Mollifier(psi_vals, 0.5, h_r, 1.0, "space", dimension)

    return MollifierPair(phi, psi, dimension)
