"""Covariance kernel of the mollified noise field.

The field is white noise smoothed in time and space, so its covariance
factorizes as R(t, x) = A(t) * C(|x|) with

    A(t) = integral phi(t + s) phi(s) ds        (support |t| < 1)
    C(r) = integral psi(x + y) psi(y) dy, r=|x| (support r <= 1)

Everything downstream consumes A and C through tables on uniform grids.  The
temporal autocorrelation is computed by exact shifted products of the phi
table; the spatial one uses a cylindrical reduction so only a double integral
is needed in any dimension.  A one-sided variant of A with the integration
clipped to s >= a (needed when one time argument dips below the start of the
noise history) is tabulated as a 2-D "clip" table.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mollifier import MollifierPair, sphere_area


def _shifted_products(vals: np.ndarray, h: float) -> np.ndarray:
    """a[k] = trapezoid of vals(s+k*h)*vals(s) over the common support."""
    n = vals.size
    out = np.empty(n)
    for k in range(n):
        out[k] = np.trapezoid(vals[k:] * vals[: n - k], dx=h)
    return out


def _clip_table(vals: np.ndarray, h: float) -> np.ndarray:
    """G[i, j] = integral_{a_j}^{1} phi(v - i*h) phi(v) dv on the phi grid.

    Row i at column 0 reproduces A(i*h); columns past the overlap are 0.
    """
    n = vals.size
    table = np.zeros((n, n))
    for i in range(n):
        prod = np.zeros(n)
        prod[i:] = vals[i:] * vals[: n - i]
        # reverse cumulative trapezoid: integral from v_j to the end
        cells = 0.5 * h * (prod[:-1] + prod[1:])
        tail = np.concatenate([np.cumsum(cells[::-1])[::-1], [0.0]])
        table[i] = tail
    return table


def _radial_autocorrelation(psi, d: int, refine: int = 2) -> np.ndarray:
    """C(r) on the grid r = j * psi.grid_step, j = 0..2/grid_step * radius.

    Cylindrical reduction: with f the radial section and x = r*e_1,
        C(r) = S_{d-2} * int dy1 int_0^inf u^{d-2} f(|y|) f(|y + x|) du,
    where |y| = sqrt(y1^2 + u^2).  For d = 1 it collapses to shifted products.
    """
    h = psi.grid_step
    radii, section = psi.radial_section()
    n_half = section.size - 1  # cells covering [0, 1/2]
    n_out = 2 * n_half + 1  # r grid covers [0, 1]

    if d == 1:
        full = psi.grid_values
    else:
        # refined section for the inner interpolation
        hh = h / refine
        y1 = np.arange(-(n_half * refine), n_half * refine + 1) * hh
        u = np.arange(0, n_half * refine + 1) * hh
        rr = np.sqrt(y1[:, None] ** 2 + u[None, :] ** 2)
        f_grid = np.interp(rr, radii, section, right=0.0)
        out = np.zeros(n_out)
        for j in range(n_out):
            rho = j * h
            rr2 = np.sqrt((y1[:, None] + rho) ** 2 + u[None, :] ** 2)
            g_grid = np.interp(rr2, radii, section, right=0.0)
            integrand = f_grid * g_grid * u[None, :] ** (d - 2)
            inner = np.trapezoid(integrand, dx=hh, axis=1)
            out[j] = sphere_area(d - 1) * np.trapezoid(inner, dx=hh)
        # the origin value is exact on the radial grid; prefer that
        out[0] = sphere_area(d) * np.trapezoid(section**2 * radii ** (d - 1), dx=h)
        return out

    out = np.array([np.trapezoid(full[j:] * full[: full.size - j], dx=h) for j in range(n_out)])
    return out


@dataclass
class CovarianceKernel:
    """Tabulated covariance R(t, x) = acorr(|t|) * rpsi(|x|)."""

    dimension: int
    acorr: np.ndarray  # A(t) on t = k*acorr_step, k = 0..n
    acorr_step: float
    rpsi: np.ndarray  # C(r) on r = j*rpsi_step
    rpsi_step: float
    rpsi_q: np.ndarray  # C as a function of squared radius, uniform in q
    rpsi_q_step: float
    clip: np.ndarray  # clip[i, j] = int_{a_j}^1 phi(v - d_i) phi(v) dv
    clip_step: float
    sup_value: float  # max R = A(0) * C(0)
    mollifiers: MollifierPair
    _band_cache: dict = field(default_factory=dict, repr=False, compare=False)

    # -- scalar/array evaluators ------------------------------------------

    def temporal(self, t) -> np.ndarray:
        return np.interp(np.abs(t), np.arange(self.acorr.size) * self.acorr_step, self.acorr, right=0.0)

    def spatial(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim and x.shape[-1] == self.dimension:
            r = np.sqrt(np.sum(x * x, axis=-1))
        else:
            r = np.abs(x)
        return np.interp(r, np.arange(self.rpsi.size) * self.rpsi_step, self.rpsi, right=0.0)

    def __call__(self, t, x) -> np.ndarray:
        return self.temporal(t) * self.spatial(x)

    def temporal_one_sided(self, t1, t2) -> np.ndarray:
        """Covariance of the time smoothings when the noise history starts at 0.

        Equals acorr(t1 - t2) when both arguments are >= 0; picks up the
        clipped overlap when one of them is in (-1, 0); vanishes below -1.
        """
        t1a, t2a = np.broadcast_arrays(np.asarray(t1, dtype=float), np.asarray(t2, dtype=float))
        scalar = t1a.ndim == 0
        t1a = np.atleast_1d(t1a)
        t2a = np.atleast_1d(t2a)
        delta = np.abs(t1a - t2a)
        a = np.maximum(0.0, -np.minimum(t1a, t2a))
        out = np.zeros(t1a.shape)
        ok = (delta < 1.0) & (np.minimum(t1a, t2a) > -1.0)
        if np.any(ok):
            h = self.clip_step
            n = self.clip.shape[0]
            di = np.clip(delta[ok] / h, 0.0, n - 1.000001)
            aj = np.clip(a[ok] / h, 0.0, n - 1.000001)
            i0 = di.astype(int)
            j0 = aj.astype(int)
            fi = di - i0
            fj = aj - j0
            g = (
                self.clip[i0, j0] * (1 - fi) * (1 - fj)
                + self.clip[i0 + 1, j0] * fi * (1 - fj)
                + self.clip[i0, j0 + 1] * (1 - fi) * fj
                + self.clip[i0 + 1, j0 + 1] * fi * fj
            )
            out[ok] = g
        return float(out[0]) if scalar else out

    # -- integrated quantities --------------------------------------------

    def temporal_mass(self) -> float:
        """integral of A over the line = (integral of phi)^2."""
        return float(2.0 * np.trapezoid(self.acorr, dx=self.acorr_step))

    def spatial_mass(self) -> float:
        """integral of C over R^d = (integral of psi)^2."""
        r = np.arange(self.rpsi.size) * self.rpsi_step
        d = self.dimension
        return float(sphere_area(d) * np.trapezoid(self.rpsi * r ** (d - 1), dx=self.rpsi_step))

    # -- uniform-step band tables for the path quadratures ------------------

    def bands(self, n_substeps: int) -> dict:
        """Temporal weights on the midpoint lattice of step h = 1/n_substeps.

        'self'[m] = A(m*h) for m = 0..  (pairs within one unit block)
        'cross'[m-1] = A(1 - m*h) for m = 1..  (consecutive unit blocks)
        """
        key = int(n_substeps)
        if key not in self._band_cache:
            h = 1.0 / key
            self._band_cache[key] = {
                "self": np.ascontiguousarray(self.temporal(np.arange(key) * h)),
                "cross": np.ascontiguousarray(self.temporal(1.0 - np.arange(1, key) * h)),
                "h": h,
            }
        return self._band_cache[key]


def build_kernels(pair: MollifierPair) -> CovarianceKernel:
    phi = pair.phi
    h_t = phi.grid_step
    acorr = _shifted_products(phi.grid_values, h_t)
    clip = _clip_table(phi.grid_values, h_t)

    rpsi = _radial_autocorrelation(pair.psi, pair.dimension)
    h_r = pair.psi.grid_step

    # squared-radius table: C(sqrt(q)) on a uniform q grid over [0, 1]
    nq = rpsi.size * 4
    q = np.linspace(0.0, 1.0, nq + 1)
    r_grid = np.arange(rpsi.size) * h_r
    rpsi_q = np.interp(np.sqrt(q), r_grid, rpsi, right=0.0)

    return CovarianceKernel(
        dimension=pair.dimension,
        acorr=acorr,
        acorr_step=h_t,
        rpsi=rpsi,
        rpsi_step=h_r,
        rpsi_q=np.ascontiguousarray(rpsi_q),
        rpsi_q_step=q[1] - q[0],
        clip=clip,
        clip_step=h_t,
        sup_value=float(acorr[0] * rpsi[0]),
        mollifiers=pair,
    )


def naive_variance_nu0(kernel: CovarianceKernel) -> float:
    """Full space-time mass of R, i.e. (int phi)^2 (int psi)^2.

    Computed from the mollifier masses, which the factorized covariance makes
    exact; the table quadratures temporal_mass/spatial_mass approach the same
    value up to tabulation error.
    """
    pair = kernel.mollifiers
    return float((pair.phi.integral() * pair.psi.integral()) ** 2)
