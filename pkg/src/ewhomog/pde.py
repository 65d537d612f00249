"""Constant-coefficient heat propagation and the limit variance integral.

The effective equations have constant diffusivity, so propagation is exact:
multiply the Fourier transform by exp(-t/2 k.a k) on the periodic extension
of the grid.  The only discretization issues are the periodic wrap-around
(kernel too wide for the box) and aliasing (kernel too narrow for the grid),
both guarded by hard errors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.integrate import simpson

from .errors import ConfigurationError, ContractViolation, DiscretizationError


@dataclass
class ScalarField:
    """Samples on the uniform periodic grid x_j = -L + j*dx over [-L, L)^d."""

    values: np.ndarray
    grid_step: float
    half_width: float
    time_stamp: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        m = self.values.shape[0]
        if any(s != m for s in self.values.shape):
            raise ConfigurationError("grid must have equal extent along every axis")
        if abs(m * self.grid_step - 2 * self.half_width) > 1e-9:
            raise ConfigurationError("grid step times point count must equal the box size")
        if not np.all(np.isfinite(self.values)):
            raise ContractViolation("field values must be finite")

    @property
    def dimension(self) -> int:
        return self.values.ndim

    @property
    def n_points(self) -> int:
        return self.values.shape[0]

    def axis(self) -> np.ndarray:
        return -self.half_width + np.arange(self.n_points) * self.grid_step

    def points(self) -> np.ndarray:
        """All grid nodes, shape (m^d, d)."""
        ax = self.axis()
        grids = np.meshgrid(*([ax] * self.dimension), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def mass(self) -> float:
        return float(self.values.sum() * self.grid_step**self.dimension)

    def export(self, prefix) -> None:
        prefix = Path(prefix)
        self.values.tofile(prefix.with_suffix(".bin"))
        meta = {
            "shape": list(self.values.shape),
            "dtype": str(self.values.dtype),
            "grid_step": self.grid_step,
            "half_width": self.half_width,
            "time_stamp": self.time_stamp,
        }
        prefix.with_suffix(".json").write_text(json.dumps(meta, indent=2))


def _check_diffusivity(a, d: int) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.shape != (d, d):
        raise ConfigurationError(f"diffusivity must be {d}x{d}, got {a.shape}")
    if not np.allclose(a, a.T, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise ContractViolation("diffusivity matrix must be symmetric")
    w = np.linalg.eigvalsh(a)
    if w.min() < -1e-12 * max(1.0, w.max()):
        raise ContractViolation("diffusivity matrix must be positive semidefinite")
    return 0.5 * (a + a.T)


def solve_heat(a, f0: ScalarField, t: float) -> ScalarField:
    """Propagate f0 by the heat semigroup with generator (1/2) div(a grad).

    Spectral multiplication with exp(-t/2 k.a k); exact for the periodic
    band-limited interpolant of the data.
    """
    d = f0.dimension
    a = _check_diffusivity(a, d)
    if t < 0:
        raise ContractViolation("propagation time must be nonnegative")
    if t == 0.0:
        return replace(f0, values=f0.values.copy())

    width = np.sqrt(t * np.linalg.eigvalsh(a).max())
    if width < 2.0 * f0.grid_step:
        raise DiscretizationError(
            f"heat kernel width {width:.3g} under two grid cells "
            f"({2 * f0.grid_step:.3g}); refine the grid or enlarge t"
        )
    if width > f0.half_width / 4.0:
        raise DiscretizationError(
            f"heat kernel width {width:.3g} exceeds a quarter of the box "
            f"half-width {f0.half_width:.3g}; periodic wrap-around would pollute the result"
        )

    m = f0.n_points
    freqs = [2.0 * np.pi * np.fft.fftfreq(m, f0.grid_step) for _ in range(d - 1)]
    freqs.append(2.0 * np.pi * np.fft.rfftfreq(m, f0.grid_step))
    shape_of = lambda i: (1,) * i + (-1,) + (1,) * (d - 1 - i)
    kk = 0.0
    for i in range(d):
        for j in range(d):
            kk = kk + a[i, j] * freqs[i].reshape(shape_of(i)) * freqs[j].reshape(shape_of(j))
    spec = np.fft.rfftn(f0.values) * np.exp(-0.5 * t * kk)
    out = np.fft.irfftn(spec, s=f0.values.shape, axes=tuple(range(d)))
    return ScalarField(out, f0.grid_step, f0.half_width, f0.time_stamp + t)


@dataclass(frozen=True)
class GaussianBump:
    """amplitude * exp(-|x - center|^2 / (2 sigma^2)) with closed-form heat flow."""

    sigma: float
    center: np.ndarray
    amplitude: float = 1.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ConfigurationError("sigma must be positive")
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))

    @property
    def dimension(self) -> int:
        return self.center.size

    def __call__(self, points) -> np.ndarray:
        x = np.asarray(points, dtype=float) - self.center
        q = np.sum(x * x, axis=-1)
        return self.amplitude * np.exp(-0.5 * q / self.sigma**2)

    def heat_value(self, a, t: float, points) -> np.ndarray:
        """Exact heat propagation: covariance grows from sigma^2 I by t*a."""
        d = self.dimension
        a = _check_diffusivity(a, d)
        cov = self.sigma**2 * np.eye(d) + t * a
        prec = np.linalg.inv(cov)
        amp = self.amplitude * self.sigma**d / np.sqrt(np.linalg.det(cov))
        x = np.asarray(points, dtype=float) - self.center
        q = np.einsum("...i,ij,...j->...", x, prec, x)
        return amp * np.exp(-0.5 * q)

    def to_field(self, half_width: float, n_points: int, time_stamp: float = 0.0) -> ScalarField:
        dx = 2.0 * half_width / n_points
        f = ScalarField(np.zeros((n_points,) * self.dimension), dx, half_width, time_stamp)
        f.values[...] = self(f.points()).reshape(f.values.shape)
        return f


@dataclass(frozen=True)
class ConstantData:
    """Spatially constant data; fixed point of the heat flow."""

    value: float
    dimension: int

    def __call__(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return np.full(points.shape[:-1], self.value)

    def heat_value(self, a, t: float, points) -> np.ndarray:
        return self(points)

    def to_field(self, half_width: float, n_points: int, time_stamp: float = 0.0) -> ScalarField:
        dx = 2.0 * half_width / n_points
        vals = np.full((n_points,) * self.dimension, float(self.value))
        return ScalarField(vals, dx, half_width, time_stamp)


def ew_variance(
    a,
    nu_eff2: float,
    lam: float,
    u0: ScalarField,
    g: ScalarField,
    t: float,
    n_time_nodes: int = 17,
) -> float:
    """Variance of the limit fluctuation field tested against g.

    lam^2 * nu_eff2 * int_0^t int |g_heat(t-s, x) u_heat(s, x)|^2 dx ds with
    both factors from the spectral propagator and Simpson quadrature in s.
    The quadrature grid must be coarse enough that the smallest nonzero
    propagation time still resolves the heat kernel on the spatial grid.
    """
    if lam == 0.0:
        return 0.0
    if nu_eff2 < 0:
        raise ContractViolation("nu_eff2 must be nonnegative")
    if (
        u0.values.shape != g.values.shape
        or abs(u0.grid_step - g.grid_step) > 1e-12
        or abs(u0.half_width - g.half_width) > 1e-12
    ):
        raise ConfigurationError("u0 and g must live on the same grid")
    if n_time_nodes < 3:
        raise ConfigurationError("Simpson quadrature needs at least 3 time nodes")
    n = n_time_nodes | 1  # Simpson wants an odd node count
    s_nodes = np.linspace(0.0, t, n)
    dxd = u0.grid_step**u0.dimension
    vals = np.empty(n)
    for k, s in enumerate(s_nodes):
        us = solve_heat(a, u0, s)
        gs = solve_heat(a, g, t - s)
        vals[k] = np.sum((gs.values * us.values) ** 2) * dxd
    return float(lam * lam * nu_eff2 * simpson(vals, x=s_nodes))
