"""Two-component chain statistics and effective-variance estimators.

Two independent copies of the tilted chain generate path pairs; the module
measures how long they spend within the interaction range (nearby time), the
exponential moment of their covariance-weighted intersection local time (the
H functional), and the effective variance nu_eff^2 obtained by averaging H
over mollifier-distributed openings and invariant starting pieces.  A
white-in-time variant with plain Brownian paths serves as an independent
cross-check model.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import chain as _chain
from ._quad import kernel_cross_sum, nearby_count
from .chain import ChainConfig, EigenPair, invariant_ensemble, sample_pi
from .errors import (
    ConfigurationError,
    ContractViolation,
    EwhomogWarning,
    SaturationWarning,
    StatisticalFlag,
)
from .kernels import _radial_autocorrelation, naive_variance_nu0
from .mollifier import Mollifier, sphere_area
from .paths import PathIncrement
from .streams import TAG_NU_OUTER, TAG_WHITE_TIME, as_node, get_rng


@dataclass(frozen=True)
class TwoComponentState:
    """Current unit blocks of two independently evolving chains."""

    x: PathIncrement
    y: PathIncrement


@dataclass(frozen=True)
class NearbyTimeSample:
    ell: float
    horizon: float
    x_off: np.ndarray
    y_off: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.ell <= self.horizon + 1e-9:
            raise ContractViolation(f"nearby time {self.ell} outside [0, {self.horizon}]")


def _step(ep: EigenPair, x: PathIncrement, psi_x: float, rng):
    if ep.lam == 0.0:
        y = sample_pi(ep.kernel, 0.0, rng, ep.n_substeps)
        return y, 1.0
    return _chain._transition(ep, x, psi_x, rng)


def nearby_time(
    x_off,
    y_off,
    X0: PathIncrement,
    Y0: PathIncrement,
    horizon: float,
    cfg: ChainConfig,
    ep: EigenPair,
    stream,
) -> NearbyTimeSample:
    """Time the two offset paths spend within unit distance of each other.

    Both components evolve from their starting blocks by independent chain
    transitions up to the horizon; the indicator of |x_off + path_x - y_off -
    path_y| <= 1 is integrated on the shared midpoint lattice, with the final
    partial cell handled at its own midpoint so the total never exceeds the
    horizon.
    """
    if horizon <= 0.0:
        raise ContractViolation("horizon must be positive")
    if cfg.dimension < 3:
        warnings.warn(
            "nearby-time tails are only claimed for dimension >= 3",
            EwhomogWarning,
            stacklevel=2,
        )
    x_off = np.asarray(x_off, dtype=float).reshape(cfg.dimension)
    y_off = np.asarray(y_off, dtype=float).reshape(cfg.dimension)
    rng = get_rng(stream)

    n = ep.n_substeps
    h = 1.0 / n
    cur = TwoComponentState(X0, Y0)
    psi_x, psi_y = ep.evaluate(X0), ep.evaluate(Y0)
    base = x_off - y_off  # running offset of component x relative to y
    ell = 0.0
    k = 0
    while k < horizon - 1e-12:
        rem = horizon - k
        mx, my = cur.x.mid, cur.y.mid
        if rem >= 1.0 - 1e-12:
            ell += h * nearby_count(mx, my, base)
        else:
            nf = int(math.floor(rem / h + 1e-12))
            if nf:
                ell += h * nearby_count(mx[:nf], my[:nf], base)
            pw = rem - nf * h
            if pw > 1e-12:
                f = 0.5 * pw / h
                px = (1 - f) * cur.x.positions[nf] + f * cur.x.positions[nf + 1]
                py = (1 - f) * cur.y.positions[nf] + f * cur.y.positions[nf + 1]
                if np.sum((base + px - py) ** 2) <= 1.0:
                    ell += pw
        k += 1
        if k < horizon - 1e-12:
            base = base + cur.x.end - cur.y.end
            nx, psi_x = _step(ep, cur.x, psi_x, rng)
            ny, psi_y = _step(ep, cur.y, psi_y, rng)
            cur = TwoComponentState(nx, ny)
    return NearbyTimeSample(min(ell, horizon), horizon, x_off, y_off)


def _h_exponents(
    X0: PathIncrement,
    Y0: PathIncrement,
    x1,
    x2,
    s1: float,
    s2: float,
    pairs,
    ep: EigenPair,
    n: int,
    rng,
) -> np.ndarray:
    """Interaction exponents for each sample and each (M1, M2) truncation.

    One forward continuation per component covers the largest truncation; the
    smaller ones reuse prefixes of the same paths, so truncation comparisons
    are exactly paired.
    """
    d = ep.dimension
    nsub = ep.n_substeps
    h = 1.0 / nsub
    kernel = ep.kernel
    lam = ep.lam
    x1 = np.asarray(x1, dtype=float).reshape(d)
    x2 = np.asarray(x2, dtype=float).reshape(d)
    if not (0.0 <= s1 <= 1.0 and 0.0 <= s2 <= 1.0):
        raise ContractViolation("opening times must lie in [0, 1]")

    m1_max = max(p[0] for p in pairs)
    m2_max = max(p[1] for p in pairs)
    for m1, m2 in pairs:
        if m1 <= 0 or m2 <= 0:
            raise ContractViolation("truncation horizons must be positive")
    k1 = 1 + int(math.ceil(m1_max - 1e-12))
    k2 = 1 + int(math.ceil(m2_max - 1e-12))

    # temporal quadrature weights, cached per truncation-and-resolution key
    grids = {}
    for m1, m2 in pairs:
        nu1 = int(round((m1 + 1.0) * nsub))
        nu2 = int(round((m2 + 1.0) * nsub))
        key = ("h_temporal", nu1, nu2)
        if key not in kernel._band_cache:
            u1 = -1.0 + (np.arange(nu1) + 0.5) * h
            u2 = -1.0 + (np.arange(nu2) + 0.5) * h
            w = kernel.temporal_one_sided(u1[:, None], u2[None, :]) * h * h
            kernel._band_cache[key] = np.ascontiguousarray(w)
        grids[(m1, m2)] = (nu1, nu2, kernel._band_cache[key])

    q_inv = 1.0 / kernel.rpsi_q_step
    psi_x0, psi_y0 = ep.evaluate(X0), ep.evaluate(Y0)
    out = np.empty((n, len(pairs)))

    def _continue(x0, psi0, k_blocks, s):
        mids = np.empty((k_blocks * nsub, d))
        base = np.zeros(d)
        cur, psi = x0, psi0
        ref = None
        for k in range(k_blocks):
            cur, psi = _step(ep, cur, psi, rng)
            if k == 0:
                # opening reference at one time unit before the clock origin
                pos = (1.0 - s) / h
                j = min(int(pos), nsub - 1)
                f = pos - j
                ref = (1 - f) * cur.positions[j] + f * cur.positions[j + 1]
            mids[k * nsub : (k + 1) * nsub] = base + cur.mid
            base = base + cur.end
        return mids, ref

    for i in range(n):
        mx, refx = _continue(X0, psi_x0, k1, s1)
        my, refy = _continue(Y0, psi_y0, k2, s2)
        vx = np.ascontiguousarray(x1 + mx - refx)
        vy = np.ascontiguousarray(x2 + my - refy)
        for c, pair in enumerate(pairs):
            nu1, nu2, w = grids[pair]
            out[i, c] = lam * lam * kernel_cross_sum(
                vx[:nu1], vy[:nu2], w, kernel.rpsi_q, q_inv
            )
    return out


def h_functional(
    X0: PathIncrement,
    Y0: PathIncrement,
    x1,
    x2,
    s1: float,
    s2: float,
    M1: float,
    M2: float,
    cfg: ChainConfig,
    ep: EigenPair,
    n: int,
    stream,
) -> tuple[float, float]:
    """Exponential moment of the covariance-weighted pair intersection.

    Monte Carlo over forward continuations of the two starting blocks; the
    double time integral runs over [-1, M1] x [-1, M2] in the clock whose
    origin sits one unit past the starting blocks, evaluated by banded
    midpoint quadrature (the temporal factor vanishes off |u1 - u2| < 1).
    """
    if cfg.lam != ep.lam or cfg.dimension != ep.dimension:
        raise ContractViolation("config does not match the eigenpair")
    if ep.lam == 0.0:
        return 1.0, 0.0
    rng = get_rng(stream)
    expo = _h_exponents(X0, Y0, x1, x2, s1, s2, [(M1, M2)], ep, n, rng)[:, 0]
    if np.max(expo) > 30.0:
        warnings.warn(
            f"intersection exponent {np.max(expo):.1f} > 30: the exponential "
            "moment is close to divergence",
            SaturationWarning,
            stacklevel=2,
        )
    vals = np.exp(expo)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0


def _opening_samplers(kernel):
    """Inverse-CDF samplers for s ~ phi / int phi and x ~ psi / int psi."""
    pair = kernel.mollifiers
    phi = pair.phi
    tgrid = phi.grid
    cdf_t = np.concatenate(
        [[0.0], np.cumsum(0.5 * phi.grid_step * (phi.grid_values[1:] + phi.grid_values[:-1]))]
    )
    cdf_t /= cdf_t[-1]

    radii, section = pair.psi.radial_section()
    d = pair.dimension
    dens = section * radii ** (d - 1)
    cdf_r = np.concatenate(
        [[0.0], np.cumsum(0.5 * pair.psi.grid_step * (dens[1:] + dens[:-1]))]
    )
    cdf_r /= cdf_r[-1]

    def draw_s(rng, size):
        return np.interp(rng.random(size), cdf_t, tgrid)

    def draw_x(rng, size):
        r = np.interp(rng.random(size), cdf_r, radii)
        if d == 1:
            return (r * rng.choice([-1.0, 1.0], size=size))[:, None]
        g = rng.standard_normal((size, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        return r[:, None] * g

    return draw_s, draw_x


def estimate_nu_eff(
    cfg: ChainConfig,
    ep: EigenPair,
    M: float,
    n_outer: int,
    n_inner: int,
    stream,
    check_saturation: bool = True,
) -> tuple[float, float]:
    """Effective variance of the pair interaction under invariant openings.

    Outer Monte Carlo over opening times/positions drawn from the mollifier
    densities and starting blocks from the invariant ensemble; inner Monte
    Carlo is the H functional at truncation M.  The mollifier-density
    importance sampling carries the analytic weight (int phi)^2 (int psi)^2.
    """
    if n_outer < 2 or n_inner < 1:
        raise ConfigurationError("need n_outer >= 2 and n_inner >= 1")
    node = as_node(stream)
    kernel = ep.kernel
    mult = (
        kernel.mollifiers.phi.integral() ** 2 * kernel.mollifiers.psi.integral() ** 2
    )

    if ep.lam == 0.0:
        return float(mult), 0.0

    pieces, _ = invariant_ensemble(cfg, ep, 2 * n_outer, node.child(TAG_NU_OUTER, 0))
    rng_o = node.child(TAG_NU_OUTER, 1).rng
    draw_s, draw_x = _opening_samplers(kernel)
    s1s, s2s = draw_s(rng_o, n_outer), draw_s(rng_o, n_outer)
    x1s, x2s = draw_x(rng_o, n_outer), draw_x(rng_o, n_outer)

    pairs = [(M, M), (2.0 * M, 2.0 * M)] if check_saturation else [(M, M)]
    vals = np.empty((n_outer, len(pairs)))
    max_expo = -np.inf
    for i in range(n_outer):
        rng_i = node.child(TAG_NU_OUTER, 2, i).rng
        expo = _h_exponents(
            pieces[2 * i], pieces[2 * i + 1], x1s[i], x2s[i], s1s[i], s2s[i],
            pairs, ep, n_inner, rng_i,
        )
        max_expo = max(max_expo, float(np.max(expo)))
        vals[i] = np.exp(expo).mean(axis=0)

    if max_expo > 30.0:
        warnings.warn(
            f"intersection exponent {max_expo:.1f} > 30: the exponential moment "
            "is close to divergence",
            SaturationWarning,
            stacklevel=2,
        )

    est = mult * vals[:, 0].mean()
    err = mult * vals[:, 0].std(ddof=1) / math.sqrt(n_outer)
    if check_saturation:
        diff = vals[:, 1] - vals[:, 0]
        derr = diff.std(ddof=1) / math.sqrt(n_outer)
        if abs(diff.mean()) > 3.0 * max(derr, 1e-12):
            warnings.warn(
                f"truncation M={M} not saturated: doubling M moves the estimate "
                f"by {diff.mean():.3g} ({abs(diff.mean()) / max(derr, 1e-300):.1f} sigma)",
                SaturationWarning,
                stacklevel=2,
            )
    nu0 = naive_variance_nu0(kernel)
    if est < nu0 - 2.0 * err:
        warnings.warn(
            f"nu_eff^2 = {est:.4f} below the bare variance {nu0:.4f} by more "
            "than 2 sigma; the pair-interaction weight should only increase it",
            StatisticalFlag,
            stacklevel=2,
        )
    return float(est), float(err)


def white_time_nu_eff(
    psi: Mollifier,
    lam: float,
    n_paths: int,
    horizon: float,
    stream,
) -> tuple[float, float]:
    """Effective variance for noise that is white in time.

    Estimates int R_psi(x) E[exp((lam^2/2) int_0^inf R_psi(x + B_s) ds)] dx
    with x uniform on the unit ball (analytic density correction) and plain
    Brownian paths truncated at the horizon; the time integral uses the
    midpoint lattice of step 1/16.  Transience makes the truncation error
    decay in the horizon; the half-versus-full horizon gap is checked.
    """
    d = psi.dimension
    if d < 3:
        raise ConfigurationError("white-in-time variance needs dimension >= 3 (transience)")
    if n_paths < 2 or horizon <= 0.0:
        raise ConfigurationError("need n_paths >= 2 and a positive horizon")
    rpsi = _radial_autocorrelation(psi, d)
    r_grid = np.arange(rpsi.size) * psi.grid_step
    vol = sphere_area(d) / d  # volume of the unit ball

    dt = 1.0 / 16.0
    n_steps = int(math.ceil(horizon / dt - 1e-12))
    n_half = n_steps // 2
    rng = as_node(stream).child(TAG_WHITE_TIME).rng

    full = np.empty(n_paths)
    half = np.empty(n_paths)
    chunk = max(1, int(2**22 // max(1, n_steps * d)))
    for lo in range(0, n_paths, chunk):
        m = min(chunk, n_paths - lo)
        u = rng.random(m)
        g = rng.standard_normal((m, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        x = (u ** (1.0 / d))[:, None] * g

        # Brownian positions at midpoint times (0.5 dt, 1.5 dt, ...)
        inc = rng.standard_normal((m, n_steps, d))
        inc[:, 0] *= math.sqrt(0.5 * dt)
        inc[:, 1:] *= math.sqrt(dt)
        pos = np.cumsum(inc, axis=1)
        pos += x[:, None, :]
        r = np.sqrt(np.einsum("ijk,ijk->ij", pos, pos))
        rv = np.interp(r, r_grid, rpsi, right=0.0)
        acc = np.cumsum(rv, axis=1) * dt
        w0 = vol * np.interp(np.sqrt(np.sum(x * x, axis=1)), r_grid, rpsi, right=0.0)
        full[lo : lo + m] = w0 * np.exp(0.5 * lam * lam * acc[:, -1])
        half[lo : lo + m] = w0 * np.exp(0.5 * lam * lam * acc[:, n_half - 1])

    est = full.mean()
    err = full.std(ddof=1) / math.sqrt(n_paths)
    gap = full - half
    gerr = gap.std(ddof=1) / math.sqrt(n_paths)
    if abs(gap.mean()) > 3.0 * max(gerr, 1e-12):
        warnings.warn(
            f"horizon {horizon} not saturated: the second half still contributes "
            f"{gap.mean():.3g} ({abs(gap.mean()) / max(gerr, 1e-300):.1f} sigma)",
            SaturationWarning,
            stacklevel=2,
        )
    return float(est), float(err)
