"""Quenched Feynman-Kac transport and the two flagship experiments.

fk_solve averages u0(x + B_t) exp(lam * sum V dt) over Brownian walkers that
read a stored field realization; the field is sampled at segment midpoints
with multilinear interpolation and treated as zero outside the box (exits are
counted, never wrapped, so the bias direction stays transparent).

homogenized_mean_check compares the annealed renormalized mean, computed as a
tilted path expectation, against the effective heat solution; the
fluctuation experiment measures the variance of the spatially averaged
fluctuation field against the limit prediction.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.stats import shapiro

from ._quad import WALKERS
from .chain import (
    ChainConfig,
    EigenPair,
    estimate_a_eff,
    estimate_zeta,
    fit_renormalization,
    tilted_expectation,
)
from .errors import (
    BoxExitWarning,
    ConfigurationError,
    ContractViolation,
    StatisticalFlag,
)
from .field import FieldBox, FieldRealization, sample_field
from .intersection import estimate_nu_eff
from .pde import GaussianBump, ScalarField, ew_variance, solve_heat
from .streams import (
    TAG_DIFFUSIVITY,
    TAG_FK_WALKERS,
    TAG_FLUCTUATION,
    TAG_TILTED_EXPECT,
    TAG_ZETA,
    as_node,
)

_CHUNK = 1024


@dataclass(frozen=True)
class FkEstimate:
    value: float
    stderr: float
    n_walkers: int
    field_seed: int
    t: float
    x: np.ndarray
    exit_fraction: float


def _walk_values(field: FieldRealization, lam, t, starts, n_steps, rng):
    """Per-walker (weight exponent, endpoint, exit count) for one chunk."""
    d = field.dimension
    m = starts.shape[0]
    incs = rng.standard_normal((m, n_steps, d)) * math.sqrt(field.dt)
    # refine each segment to the true midpoint-time position: midpoint plus
    # an independent bridge fluctuation of variance dt/4
    bridge = rng.standard_normal((m, n_steps, d)) * (0.5 * math.sqrt(field.dt))
    acc = np.empty(m)
    exits = np.empty(m, dtype=np.int64)
    WALKERS[d](
        field.values,
        field.t_lo,
        1.0 / field.dt,
        -field.half_width,
        1.0 / field.dx,
        field.n_sites,
        starts,
        incs,
        bridge,
        t,
        field.dt,
        acc,
        exits,
    )
    ends = starts + incs.sum(axis=1)
    return acc, ends, exits


def fk_solve(
    field: FieldRealization,
    u0,
    lam: float,
    t: float,
    x,
    n_walkers: int,
    stream,
) -> FkEstimate:
    """Monte Carlo solution of the forced heat equation at (t, x).

    Walkers run backward from t to the field's initial time; u0 is evaluated
    at the terminal walker positions.  t must sit on the field's time lattice.
    """
    d = field.dimension
    x = np.asarray(x, dtype=float).reshape(d)
    if n_walkers < 2:
        raise ConfigurationError("need at least two walkers")
    n_steps = round((t - field.t_lo) / field.dt)
    if n_steps < 1 or abs(field.t_lo + n_steps * field.dt - t) > 1e-9:
        raise ConfigurationError(
            f"t={t} must sit on the field time lattice above t_lo={field.t_lo}"
        )
    if t > field.t_hi + 1e-9:
        raise ConfigurationError("t beyond the field's time coverage")
    if np.any(np.abs(x) > field.half_width):
        raise ConfigurationError("evaluation point outside the field box")

    node = as_node(stream)
    vals = np.empty(n_walkers)
    n_exit = 0
    for c, lo in enumerate(range(0, n_walkers, _CHUNK)):
        m = min(_CHUNK, n_walkers - lo)
        rng = node.child(TAG_FK_WALKERS, c).rng
        starts = np.broadcast_to(x, (m, d)).copy()
        acc, ends, exits = _walk_values(field, lam, t, starts, n_steps, rng)
        vals[lo : lo + m] = u0(ends) * np.exp(lam * acc)
        n_exit += int(exits.sum())

    frac = n_exit / (n_walkers * n_steps)
    if frac > 0.01:
        warnings.warn(
            f"{100 * frac:.1f}% of field reads fell outside the box; enlarge it",
            BoxExitWarning,
            stacklevel=2,
        )
    return FkEstimate(
        float(vals.mean()),
        float(vals.std(ddof=1) / math.sqrt(n_walkers)),
        n_walkers,
        field.master_seed,
        float(t),
        x,
        frac,
    )


def _grid_interp(f: ScalarField, x) -> float:
    axes = (f.axis(),) * f.dimension
    return float(RegularGridInterpolator(axes, f.values)(np.asarray(x).reshape(1, -1))[0])


def homogenized_mean_check(
    cfg: ChainConfig,
    ep: EigenPair,
    eps: float,
    t: float,
    x,
    n_paths: int,
    stream=None,
    u0=None,
    n_blocks: int = 20000,
    pde_half_width: float = 8.0,
    pde_points: int = 64,
    a_eff=None,
) -> dict:
    """Annealed renormalized mean vs the effective heat solution at (t, x).

    The mean side is the tilted-path expectation of u0(x + eps * endpoint);
    the PDE side propagates u0 with the measured diffusivity and reads the
    grid at x.  The two routes share no randomness.
    """
    d = cfg.dimension
    x = np.asarray(x, dtype=float).reshape(d)
    T = t / (eps * eps)
    if T > 2000:
        raise ConfigurationError(f"microscopic horizon T={T:.0f} beyond desk scale (2000)")
    node = as_node(stream if stream is not None else cfg.master_seed)
    if u0 is None:
        u0 = GaussianBump(1.0, np.zeros(d))

    value, stderr = tilted_expectation(
        lambda path: float(u0((x + eps * path.endpoint)[None, :])[0]),
        T,
        cfg,
        ep,
        n_paths,
        node.child(TAG_TILTED_EXPECT),
    )

    if a_eff is None:
        a_hat, a_se = estimate_a_eff(cfg, n_blocks, node.child(TAG_DIFFUSIVITY), ep)
    else:
        a_hat, a_se = np.asarray(a_eff, dtype=float), np.zeros((d, d))
    f0 = u0.to_field(pde_half_width, pde_points)
    pde_value = _grid_interp(solve_heat(a_hat, f0, t), x)
    # diffusivity uncertainty propagated by a PSD-safe relative perturbation
    rel = float(np.trace(a_se) / np.trace(a_hat)) if np.trace(a_hat) else 0.0
    hi = _grid_interp(solve_heat((1.0 + rel) * a_hat, f0, t), x)
    lo = _grid_interp(solve_heat((1.0 - rel) * a_hat, f0, t), x)
    pde_stderr = 0.5 * abs(hi - lo)

    gap = value - pde_value
    sigma = math.sqrt(stderr**2 + pde_stderr**2)
    return {
        "mean_value": value,
        "mean_stderr": stderr,
        "pde_value": pde_value,
        "pde_stderr": pde_stderr,
        "gap": gap,
        "relative_gap": gap / pde_value if pde_value else float("inf"),
        "combined_sigma": sigma,
        "gap_sigmas": abs(gap) / sigma if sigma else float("inf"),
        "a_eff": a_hat.tolist(),
        "a_eff_stderr": a_se.tolist(),
        "T": T,
        "eps": eps,
        "t": t,
        "x": x.tolist(),
        "n_paths": n_paths,
    }


def _zeta_route(cfg: ChainConfig, ep: EigenPair, node, n_samples: int = 20000) -> tuple:
    """(c1, c2) from the measured zeta(T) sequence and the closed-form pieces."""
    ts = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
    samples = [
        estimate_zeta(ep.kernel, ep.lam, T, n_samples, node.child(TAG_ZETA, k), ep.n_substeps)
        for k, T in enumerate(ts)
    ]
    zs = [(T, v, e) for T, (v, e) in zip(ts, samples)]
    c1, c2, diag = fit_renormalization(zs, ep, ep.invariant_psi_inverse_nystrom())
    return c1, c2, diag


def fluctuation_experiment(
    cfg: ChainConfig,
    ep: EigenPair,
    eps: float,
    t: float,
    g,
    u0,
    n_realizations: int,
    n_walkers: int,
    grid: tuple,
    stream=None,
    zeta_coeffs=None,
    nu_eff2=None,
    a_eff=None,
    dt: float = 0.125,
    dx: float = 0.25,
    box_margin: float | None = None,
    field_dtype=np.float32,
    n_blocks: int = 20000,
    nu_m: float = 8.0,
    nu_outer: int = 96,
    nu_inner: int = 4,
    pde_points: int = 128,
    pde_margin: float = 4.0,
    pde_time_nodes: int = 17,
) -> dict:
    """Variance of the averaged fluctuation field against the limit formula.

    For each noise realization, int u_eps(t, .) g is estimated by walkers
    allocated over a midpoint quadrature grid proportionally to |g|, then
    centered across realizations, renormalized by e^{-zeta} and scaled to the
    fluctuation statistic xi.  The target is the limit variance built from the
    measured diffusivity and effective variance.
    """
    d = cfg.dimension
    lam = cfg.lam
    half_width, n_nodes = grid
    if n_realizations < 8 or n_walkers < 16:
        raise ConfigurationError("need at least 8 realizations and 16 walkers")
    T = t / (eps * eps)
    node = as_node(stream if stream is not None else cfg.master_seed)

    # ------------------------------------------------------------------ setup
    if zeta_coeffs is None and lam != 0.0:
        c1, c2, zeta_fit = _zeta_route(cfg, ep, node)
    else:
        c1, c2 = zeta_coeffs if zeta_coeffs is not None else (0.0, 0.0)
        zeta_fit = None
    zeta_T = c1 * T + c2

    if a_eff is None:
        if lam == 0.0:
            a_hat = np.eye(d)
        else:
            a_hat, _ = estimate_a_eff(cfg, n_blocks, node.child(TAG_DIFFUSIVITY), ep)
    else:
        a_hat = np.asarray(a_eff, dtype=float)

    if nu_eff2 is None:
        if lam == 0.0:
            nu2, nu2_err = 1.0, 0.0
        else:
            nu2, nu2_err = estimate_nu_eff(cfg, ep, nu_m, nu_outer, nu_inner, node)
    else:
        nu2, nu2_err = float(nu_eff2), 0.0

    # quadrature nodes (cell midpoints) and importance weights from g
    step = 2.0 * half_width / n_nodes
    ax = -half_width + (np.arange(n_nodes) + 0.5) * step
    mesh = np.meshgrid(*([ax] * d), indexing="ij")
    xq = np.stack([m.ravel() for m in mesh], axis=-1)
    wq = g(xq) * step**d
    pq = np.abs(wq)
    if pq.sum() <= 0:
        raise ContractViolation("g vanishes on the whole quadrature grid")
    pq = pq / pq.sum()

    # microscopic field box: quadrature points scaled by 1/eps plus walker room
    if box_margin is None:
        box_margin = 3.0 * math.sqrt(T) + 1.0
    box_half = math.ceil((half_width / eps + box_margin) / dx) * dx
    n_steps = round(T / dt)
    if n_steps < 1 or abs(n_steps * dt - T) > 1e-9:
        raise ConfigurationError("t/eps^2 must sit on the field time lattice")
    box = FieldBox(0.0, n_steps * dt, box_half)

    u0_micro = lambda y: u0(eps * y)
    scale = eps ** -(0.5 * d - 1.0) * math.exp(-zeta_T)

    # ------------------------------------------------------- per realization
    raw = np.empty(n_realizations)
    raw_se = np.empty(n_realizations)
    half_a = np.empty(n_realizations)
    half_b = np.empty(n_realizations)
    exit_fractions = np.empty(n_realizations)
    rng_alloc = node.child(TAG_FLUCTUATION, 0).rng
    for r in range(n_realizations):
        field = sample_field(
            ep.kernel.mollifiers,
            box,
            dt,
            dx,
            node.child(TAG_FLUCTUATION, 1, r),
            dtype=field_dtype,
        )
        counts = rng_alloc.multinomial(n_walkers, pq)
        hot = np.nonzero(counts)[0]
        starts = np.repeat(xq[hot] / eps, counts[hot], axis=0)
        ratio = np.repeat(wq[hot] / pq[hot], counts[hot])
        vals = np.empty(starts.shape[0])
        n_exit = 0
        for c, lo in enumerate(range(0, starts.shape[0], _CHUNK)):
            m = min(_CHUNK, starts.shape[0] - lo)
            rng = node.child(TAG_FLUCTUATION, 2, r, c).rng
            acc, ends, exits = _walk_values(
                field, lam, box.t_hi, starts[lo : lo + m], n_steps, rng
            )
            vals[lo : lo + m] = u0_micro(ends) * np.exp(lam * acc)
            n_exit += int(exits.sum())
        per_walker = ratio * vals
        raw[r] = per_walker.mean()
        raw_se[r] = per_walker.std(ddof=1) / math.sqrt(per_walker.size)
        half_a[r] = per_walker[0::2].mean()
        half_b[r] = per_walker[1::2].mean()
        exit_fractions[r] = n_exit / (starts.shape[0] * n_steps)

    if exit_fractions.max() > 0.01:
        warnings.warn(
            f"up to {100 * exit_fractions.max():.1f}% of field reads left the box",
            BoxExitWarning,
            stacklevel=2,
        )

    xi = scale * (raw - raw.mean())
    xi_se = scale * raw_se
    var_xi = float(xi.var(ddof=1))

    # variance decomposition: total = field-to-field + mean FK noise
    fk_var = float(np.mean(xi_se**2))
    cov_half = float(np.cov(half_a, half_b, ddof=1)[0, 1]) * scale**2
    field_var = var_xi - fk_var
    flags = []
    if fk_var > max(field_var, 0.0):
        flags.append(
            "inconclusive: walker noise exceeds field-to-field variance; raise n_walkers"
        )
        warnings.warn(flags[-1], StatisticalFlag, stacklevel=2)
    decomp_gap = abs(var_xi - (cov_half + fk_var)) / var_xi if var_xi else 0.0

    # bootstrap CI for the variance, and normality of xi
    rng_b = node.child(TAG_FLUCTUATION, 3).rng
    boots = np.array(
        [
            xi[rng_b.integers(0, n_realizations, n_realizations)].var(ddof=1)
            for _ in range(1000)
        ]
    )
    ci = (float(np.quantile(boots, 0.025)), float(np.quantile(boots, 0.975)))
    p_normal = float(shapiro(xi).pvalue)

    # theoretical target from the limit equation
    pde_L = half_width + pde_margin
    u0_field = u0.to_field(pde_L, pde_points)
    g_field = g.to_field(pde_L, pde_points)
    target = ew_variance(a_hat, nu2, lam, u0_field, g_field, t, pde_time_nodes)

    return {
        "xi": xi.tolist(),
        "xi_stderr": xi_se.tolist(),
        "raw_integrals": raw.tolist(),
        "var_xi": var_xi,
        "var_xi_ci": ci,
        "target": target,
        "ratio_to_target": var_xi / target if target else float("inf"),
        "centering_sigma": abs(xi.mean()) / (xi.std(ddof=1) / math.sqrt(n_realizations))
        if var_xi
        else 0.0,
        "normality_pvalue": p_normal,
        "fk_noise_var": fk_var,
        "field_var": field_var,
        "split_half_field_var": cov_half,
        "decomposition_gap": decomp_gap,
        "flags": flags,
        "zeta": {"c1": c1, "c2": c2, "zeta_T": zeta_T},
        "zeta_fit": {k: v for k, v in (zeta_fit or {}).items() if np.isscalar(v)},
        "nu_eff2": nu2,
        "nu_eff2_stderr": nu2_err,
        "a_eff": a_hat.tolist(),
        "eps": eps,
        "t": t,
        "T": T,
        "lam": lam,
        "n_realizations": n_realizations,
        "n_walkers": n_walkers,
        "max_exit_fraction": float(exit_fractions.max()),
    }
