"""Markov chain of tilted unit path blocks and its derived estimators.

The chain state is a unit-length path increment.  Its transition law tilts an
independent proposal by the interaction with the current block and by the
positive eigenfunction of the tilted transfer operator; regeneration comes
from a Bernoulli coupling certified by a uniform lower bound on the density
ratio.  The module exposes the eigenpair solver (Nystrom over an anchor
ensemble plus power iteration), the coupled chain runner, block collection for
the effective diffusivity, and the estimators for the renormalization growth
constants.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import _quad
from .errors import (
    ConfigurationError,
    ContractViolation,
    DiscretizationError,
    EigenpairInconsistency,
    StatisticalFlag,
    WeightDegeneracyWarning,
)
from .kernels import CovarianceKernel, build_kernels
from .mollifier import make_bump_mollifiers
from .paths import (
    AssembledPath,
    PathIncrement,
    _interaction_general,
    _self_energy_uniform_raw,
    assemble,
    boundary_sup_bound,
    i_sup_bound,
    interaction_terminal,
    self_tilt_sup_bound,
)
from .streams import TAG_EIGEN_ANCHORS, StreamNode, as_node, get_rng


@dataclass(frozen=True)
class ChainConfig:
    """Knobs shared by every chain-based estimator.

    `lam` is the tilt strength; gamma=None means "use the certified coupling
    probability".  A supplied gamma must not exceed the certified one.
    """

    lam: float = 0.2
    dimension: int = 3
    n_substeps: int = 32
    ensemble_size: int = 256
    gamma: float | None = None
    master_seed: int = 0
    grid_points: int = 256

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigurationError("lam must be >= 0")
        if self.dimension < 1:
            raise ConfigurationError("dimension must be >= 1")
        if self.n_substeps < 8:
            raise ConfigurationError("n_substeps must be >= 8")
        if self.gamma is not None and not 0 < self.gamma <= 1:
            raise ConfigurationError("gamma must lie in (0, 1]")


def doeblin_gamma(i_sup: float) -> float:
    """Certified coupling probability e^{-6 i_sup}.

    The transition density ratio against the proposal is at least
    e^{-I_sup} * e^{-2 I_sup} / (e^{I_sup} * e^{2 I_sup}) = e^{-6 I_sup},
    using the uniform brackets on the interaction and the eigenfunction.
    """
    if i_sup < 0:
        raise ContractViolation("i_sup must be >= 0")
    return float(np.exp(-6.0 * i_sup))


def sample_pi(kernel: CovarianceKernel, lam: float, stream, n_substeps: int = 32, length: float = 1.0) -> PathIncrement:
    """Draw from the self-tilted Wiener measure on [0, length] by rejection.

    Proposal: the Wiener sampler.  Acceptance: exp(tilt - sup bound), so the
    acceptance probability is at least e^{-sup bound} and the draw is exact up
    to the path discretization.
    """
    rng = get_rng(stream)
    d = kernel.dimension
    n = int(n_substeps)
    sigma = math.sqrt(length / n)
    if lam == 0.0:
        steps = rng.standard_normal((n, d)) * sigma
        pos = np.vstack([np.zeros((1, d)), np.cumsum(steps, axis=0)])
        return PathIncrement(pos, float(length))
    bound = self_tilt_sup_bound(kernel, lam, length)
    h = length / n
    while True:
        steps = rng.standard_normal((n, d)) * sigma
        pos = np.vstack([np.zeros((1, d)), np.cumsum(steps, axis=0)])
        inc = PathIncrement(pos, float(length))
        e = _self_energy_uniform_raw(inc.mid, h, kernel, lam)
        if math.log(rng.random() + 1e-300) < e - bound:
            return inc


@dataclass
class EigenPair:
    """Principal eigenpair of the tilted transfer operator, Nystrom form.

    psi_values/phi_values are the right/left eigenvectors at the anchors,
    normalized to ensemble mean 1.  evaluate() extends psi off the ensemble;
    every evaluation is checked against the rigorous uniform brackets.
    """

    rho: float
    anchors: tuple
    psi_values: np.ndarray
    phi_values: np.ndarray
    kernel: CovarianceKernel
    lam: float
    i_sup: float
    residual: float = 0.0
    rho_stderr: float = 0.0

    def __post_init__(self):
        self.psi_values = np.ascontiguousarray(self.psi_values, dtype=float)
        self.phi_values = np.ascontiguousarray(self.phi_values, dtype=float)
        self._mids = np.ascontiguousarray(np.stack([a.mid for a in self.anchors]))
        n = self.n_substeps
        self._band = self.kernel.bands(n)["cross"]
        self._scale = self.lam * self.lam / (n * n)
        self._q_inv = 1.0 / self.kernel.rpsi_q_step
        self._psi_hi = float(np.exp(2.0 * self.i_sup))
        self._psi_lo = 1.0 / self._psi_hi
        # envelope constant for rejection against the pi proposal: the
        # interaction exponent sits in [0, i_sup] and the extension formula
        # pins psi between 1/rho and e^{i_sup}/rho (anchor mean is 1), so the
        # density ratio e^I psi(y) / (rho psi(x)) is at most e^{2 i_sup}/rho.
        self.envelope = float(np.exp(2.0 * self.i_sup) / self.rho)

    @property
    def ensemble_size(self) -> int:
        return len(self.anchors)

    @property
    def n_substeps(self) -> int:
        return self.anchors[0].n_substeps

    @property
    def dimension(self) -> int:
        return self.anchors[0].dimension

    def interaction_with_anchors(self, x: PathIncrement) -> np.ndarray:
        """I(x, anchor_i) for every anchor, x the earlier unit block."""
        out = np.empty(self.ensemble_size)
        _quad.cross_rows(self._mids, x.tail, self._band, self.kernel.rpsi_q, self._q_inv, out)
        return self._scale * out

    def evaluate(self, x: PathIncrement) -> float:
        """Nystrom extension (1/(rho N)) sum_i e^{I(x, a_i)} psi_i."""
        if self.lam == 0.0:
            return 1.0
        if x.n_substeps != self.n_substeps or x.dimension != self.dimension:
            raise ContractViolation("increment grid does not match the anchor ensemble")
        acc = _quad.weighted_exp_rows(
            self._mids, x.tail, self._band, self.kernel.rpsi_q, self._q_inv, self.psi_values, self._scale
        )
        val = acc / (self.rho * self.ensemble_size)
        if not self._psi_lo * (1 - 1e-9) <= val <= self._psi_hi * (1 + 1e-9):
            raise EigenpairInconsistency(
                f"psi evaluation {val:.6g} escapes the uniform bracket "
                f"[{self._psi_lo:.6g}, {self._psi_hi:.6g}]"
            )
        return float(val)

    def opening_weight(self, x: PathIncrement) -> float:
        """f(x) = (1/N) sum_i e^{I_open(x, a_i)} psi_i for an opening block of
        length tau; reduces to rho * psi(x) at tau = 1."""
        if self.lam == 0.0:
            return 1.0
        ener = np.array(
            [_interaction_general(x, a, self.kernel, self.lam) for a in self.anchors]
        )
        return float(np.mean(np.exp(ener) * self.psi_values))

    def invariant_psi_inverse_nystrom(self) -> float:
        """Closed-form mean of 1/psi under the chain's invariant law.

        The invariant density w.r.t. pi is proportional to phi * psi, so
        E[1/psi] = mean(phi) / mean(phi * psi) = 1 / mean(phi * psi).
        """
        if self.lam == 0.0:
            return 1.0
        return float(1.0 / np.mean(self.phi_values * self.psi_values))


def solve_eigenpair(
    kernel: CovarianceKernel,
    lam: float,
    ensemble_size: int = 256,
    max_iters: int = 200,
    tol: float = 1e-12,
    stream=None,
    n_substeps: int = 32,
) -> EigenPair:
    """Power iteration on K_ij = e^{I(a_i, a_j)}/N over anchors a ~ pi."""
    if ensemble_size < 256:
        raise ConfigurationError("ensemble_size must be >= 256")
    node = as_node(stream)
    rng = node.rng
    anchors = tuple(sample_pi(kernel, lam, rng, n_substeps) for _ in range(ensemble_size))
    n_ens = ensemble_size
    ones = np.ones(n_ens)
    i_sup = i_sup_bound(kernel, lam)

    if lam == 0.0:
        return EigenPair(1.0, anchors, ones, ones.copy(), kernel, 0.0, 0.0)

    mids = np.ascontiguousarray(np.stack([a.mid for a in anchors]))
    band = kernel.bands(n_substeps)["cross"]
    q_inv = 1.0 / kernel.rpsi_q_step
    scale = lam * lam / (n_substeps * n_substeps)
    energy = np.empty((n_ens, n_ens))
    row = np.empty(n_ens)
    for i in range(n_ens):
        _quad.cross_rows(mids, anchors[i].tail, band, kernel.rpsi_q, q_inv, row)
        energy[i] = row  # energy[i, j] ~ I(anchor_i, anchor_j) / (lam^2 h^2)
    kmat = np.exp(scale * energy) / n_ens

    def _power(mat, v0, iters, eps):
        v = v0
        rho = 1.0
        for _ in range(iters):
            w = mat @ v
            rho_new = float(w.mean())
            v_new = w / rho_new
            delta = max(abs(rho_new - rho) / rho_new, np.max(np.abs(v_new - v)) / np.max(np.abs(v_new)))
            v, rho = v_new, rho_new
            if delta < eps:
                break
        return rho, v

    rho, psi = _power(kmat, ones.copy(), max_iters, tol)
    _, phi = _power(kmat.T, ones.copy(), max_iters, tol)
    residual = float(np.max(np.abs(kmat @ psi - rho * psi)) / np.max(np.abs(psi)))

    hi = float(np.exp(i_sup))
    if not (1.0 / hi) * (1 - 1e-9) <= rho <= hi * (1 + 1e-9):
        raise DiscretizationError(
            f"eigenvalue {rho:.6g} violates [e^-I, e^I] = [{1/hi:.6g}, {hi:.6g}]; "
            "increase ensemble_size or n_substeps"
        )
    lo_v, hi_v = (1.0 / hi) / rho, hi / rho
    if psi.min() < lo_v * (1 - 1e-9) or psi.max() > hi_v * (1 + 1e-9):
        raise DiscretizationError(
            "eigenvector escapes its uniform bracket; increase ensemble_size or n_substeps"
        )

    # anchor bootstrap for the eigenvalue uncertainty
    boots = []
    for _ in range(32):
        idx = rng.integers(0, n_ens, n_ens)
        kb = np.exp(scale * energy[np.ix_(idx, idx)]) / n_ens
        rb, _ = _power(kb, psi[idx].copy(), 25, 1e-10)
        boots.append(rb)
    rho_stderr = float(np.std(boots, ddof=1))

    return EigenPair(rho, anchors, psi, phi, kernel, lam, i_sup, residual, rho_stderr)


def prepare(cfg: ChainConfig, stream=None) -> tuple[CovarianceKernel, EigenPair]:
    """Build kernels and the eigenpair for a config in one call."""
    pair = make_bump_mollifiers(cfg.dimension, cfg.grid_points)
    kernel = build_kernels(pair)
    if stream is None:
        stream = StreamNode(cfg.master_seed).child(TAG_EIGEN_ANCHORS)
    ep = solve_eigenpair(
        kernel, cfg.lam, cfg.ensemble_size, stream=stream, n_substeps=cfg.n_substeps
    )
    return kernel, ep


def resolve_gamma(cfg: ChainConfig, ep: EigenPair) -> float:
    certified = doeblin_gamma(ep.i_sup)
    if cfg.gamma is None:
        return certified
    if cfg.gamma > certified * (1 + 1e-12):
        raise ConfigurationError(
            f"gamma={cfg.gamma} exceeds the certified coupling bound {certified:.6g}"
        )
    return float(cfg.gamma)


# -- transitions -------------------------------------------------------------


def _pair_interaction(ep: EigenPair, x: PathIncrement, y: PathIncrement) -> float:
    e = _quad.cross_pair(y.mid, x.tail, ep._band, ep.kernel.rpsi_q, ep._q_inv)
    return ep._scale * e


def _transition(ep: EigenPair, x: PathIncrement, psi_x: float, rng, gamma_sub: float = 0.0):
    """Draw from the transition law (or its residual after removing gamma_sub
    times the proposal) by rejection; returns (y, psi_y)."""
    env = ep.envelope
    while True:
        y = sample_pi(ep.kernel, ep.lam, rng, ep.n_substeps)
        psi_y = ep.evaluate(y)
        ratio = math.exp(_pair_interaction(ep, x, y)) * psi_y / (ep.rho * psi_x)
        if ratio > env * (1 + 1e-9):
            raise EigenpairInconsistency(
                f"density ratio {ratio:.6g} exceeds the envelope {env:.6g}"
            )
        if ratio < gamma_sub - 1e-9:
            raise EigenpairInconsistency(
                f"density ratio {ratio:.6g} fell below the coupling mass {gamma_sub:.6g}"
            )
        if rng.random() * (env - gamma_sub) < ratio - gamma_sub:
            return y, psi_y


def sample_transition(x: PathIncrement, ep: EigenPair, kernel: CovarianceKernel, lam: float, stream) -> PathIncrement:
    """One step of the tilted chain from state x."""
    if kernel is not ep.kernel or lam != ep.lam:
        raise ContractViolation("kernel/lam must match the eigenpair they came from")
    rng = get_rng(stream)
    if lam == 0.0:
        return sample_pi(kernel, 0.0, rng, ep.n_substeps)
    y, _ = _transition(ep, x, ep.evaluate(x), rng)
    return y


def _initial_block(ep: EigenPair, rng) -> tuple[PathIncrement, float]:
    """Opening unit block ~ psi-weighted pi, drawn exactly by rejection."""
    if ep.lam == 0.0:
        x = sample_pi(ep.kernel, 0.0, rng, ep.n_substeps)
        return x, 1.0
    psi_sup = math.exp(ep.i_sup) / ep.rho
    while True:
        x = sample_pi(ep.kernel, ep.lam, rng, ep.n_substeps)
        psi_x = ep.evaluate(x)
        if rng.random() * psi_sup < psi_x:
            return x, psi_x


def _initial_fragment(ep: EigenPair, tau: float, rng) -> tuple[PathIncrement, float]:
    """Opening block of length tau < 1, weighted by its interaction mass."""
    kernel, lam = ep.kernel, ep.lam
    n_tau = max(8, int(round(ep.n_substeps * tau)))
    if lam == 0.0:
        return sample_pi(kernel, 0.0, rng, n_tau, tau), 1.0
    b_open = boundary_sup_bound(kernel, lam, tau)
    # f(x) = mean_i e^{I_open} psi_i <= e^{bound} * mean(psi)
    f_sup = math.exp(b_open) * float(np.mean(ep.psi_values))
    while True:
        x = sample_pi(kernel, lam, rng, n_tau, tau)
        f_x = ep.opening_weight(x)
        if rng.random() * f_sup < f_x:
            return x, f_x


def _opening_transition(ep: EigenPair, x0: PathIncrement, f_x0: float, rng) -> tuple[PathIncrement, float]:
    """First unit block after an opening fragment: density e^{I_open} psi / f."""
    kernel, lam = ep.kernel, ep.lam
    if lam == 0.0:
        y = sample_pi(kernel, 0.0, rng, ep.n_substeps)
        return y, 1.0
    b_open = boundary_sup_bound(kernel, lam, x0.length)
    env = math.exp(b_open) * (math.exp(ep.i_sup) / ep.rho) / f_x0
    while True:
        y = sample_pi(kernel, lam, rng, ep.n_substeps)
        psi_y = ep.evaluate(y)
        ratio = math.exp(_interaction_general(x0, y, kernel, lam)) * psi_y / f_x0
        if ratio > env * (1 + 1e-9):
            raise EigenpairInconsistency("opening-step density ratio exceeds its envelope")
        if rng.random() * env < ratio:
            return y, psi_y


def _tilted_fragment(ep: EigenPair, x_last: PathIncrement, frag: float, rng) -> PathIncrement:
    """Final fragment given the last unit block, by two-stage rejection."""
    kernel, lam = ep.kernel, ep.lam
    n_frag = max(8, int(round(ep.n_substeps * frag)))
    if lam == 0.0:
        return sample_pi(kernel, 0.0, rng, n_frag, frag)
    b = boundary_sup_bound(kernel, lam, frag)
    while True:
        y = sample_pi(kernel, lam, rng, n_frag, frag)
        e = interaction_terminal(x_last, y, kernel, lam)
        if math.log(rng.random() + 1e-300) < e - b:
            return y


def _split_horizon(T: float, tau: float | None) -> tuple[float, int, float]:
    """(tau, number of unit blocks, final fragment length) with T = tau + N + frag."""
    if tau is None:
        frac = T - math.floor(T)
        tau = frac if frac > 1e-9 else 1.0
    if not 0 < tau <= 1 + 1e-12:
        raise ConfigurationError("tau must lie in (0, 1]")
    rest = T - tau
    if rest < 1 - 1e-9:
        raise ConfigurationError(f"horizon {T} too short for tau={tau} plus a unit block")
    n_units = int(math.floor(rest + 1e-9))
    frag = rest - n_units
    if frag < 1e-9:
        frag = 0.0
    return float(tau), n_units, float(frag)


def _chain_increments(cfg: ChainConfig, T: float, ep: EigenPair, rng, tau=None):
    """Drive the coupled chain; returns (tau, increments sans final fragment,
    regeneration times, psi at the last unit block, fragment length)."""
    gamma = resolve_gamma(cfg, ep)
    tau, n_units, frag = _split_horizon(T, tau)

    incs = []
    regen = []
    if tau >= 1 - 1e-12:
        x, psi_x = _initial_block(ep, rng)
        incs.append(x)
        first_coupled = 1
    else:
        x0, f_x0 = _initial_fragment(ep, tau, rng)
        incs.append(x0)
        x, psi_x = _opening_transition(ep, x0, f_x0, rng)
        incs.append(x)
        first_coupled = 2

    for k in range(first_coupled, n_units + 1):
        if rng.random() < gamma:
            x = sample_pi(ep.kernel, ep.lam, rng, ep.n_substeps)
            psi_x = ep.evaluate(x)
            regen.append(k)
        else:
            x, psi_x = _transition(ep, x, psi_x, rng, gamma_sub=gamma)
        incs.append(x)
    return tau, incs, regen, psi_x, frag


def run_chain(cfg: ChainConfig, T: float, ep: EigenPair, stream, tau: float | None = None):
    """Sample a full tilted path of horizon T >= 2.

    Returns (AssembledPath, regeneration_times); regeneration time k means the
    k-th unit block was drawn fresh from pi under the Bernoulli coupling.
    """
    if T < 2:
        raise ConfigurationError("horizon must be >= 2")
    rng = get_rng(stream)
    tau, incs, regen, _, frag = _chain_increments(cfg, T, ep, rng, tau)
    if frag > 0:
        incs.append(_tilted_fragment(ep, incs[-1], frag, rng))
    return assemble(tau, incs), regen


# -- regeneration blocks and the effective diffusivity -----------------------


@dataclass(frozen=True)
class RegenerationBlock:
    start_index: int
    end_index: int
    displacement: np.ndarray
    max_excursion: float


def collect_blocks(cfg: ChainConfig, n_blocks: int, stream, ep: EigenPair | None = None):
    """Run one long coupled chain and cut it at regeneration times.

    Returns (blocks, gamma).  Blocks before the first regeneration are
    discarded; each block spans unit steps [T_j, T_{j+1}).
    """
    if ep is None:
        _, ep = prepare(cfg)
    rng = get_rng(stream)
    gamma = resolve_gamma(cfg, ep)

    x, psi_x = _initial_block(ep, rng)
    blocks = []
    start = None
    disp = None
    excursion = 0.0
    k = 0
    while len(blocks) < n_blocks:
        k += 1
        if rng.random() < gamma:
            x = sample_pi(ep.kernel, ep.lam, rng, ep.n_substeps)
            psi_x = ep.evaluate(x)
            if start is not None:
                blocks.append(RegenerationBlock(start, k, disp, excursion))
            start = k
            disp = np.zeros(cfg.dimension)
            excursion = 0.0
        else:
            x, psi_x = _transition(ep, x, psi_x, rng, gamma_sub=gamma)
        if start is not None:
            disp = disp + x.end
            excursion = max(excursion, float(np.max(np.linalg.norm(x.positions, axis=1))))
    return blocks, gamma


def estimate_a_eff(cfg: ChainConfig, n_blocks: int, stream, ep: EigenPair | None = None):
    """Effective diffusivity gamma * E[block displacement outer product].

    Returns (matrix, stderr matrix) with standard errors from a block
    bootstrap.
    """
    if n_blocks < 1000:
        warnings.warn(
            f"n_blocks={n_blocks} is below the recommended 1000; errors are unreliable",
            StatisticalFlag,
            stacklevel=2,
        )
    node = as_node(stream)
    blocks, gamma = collect_blocks(cfg, n_blocks, node, ep)
    disp = np.stack([b.displacement for b in blocks])
    nb = disp.shape[0]
    a_hat = gamma * (disp.T @ disp) / nb

    rng = node.child(10_001).rng
    boots = np.empty((200, cfg.dimension, cfg.dimension))
    for b in range(200):
        idx = rng.integers(0, nb, nb)
        sel = disp[idx]
        boots[b] = gamma * (sel.T @ sel) / nb
    stderr = boots.std(axis=0, ddof=1)
    return a_hat, stderr


# -- renormalization constants ----------------------------------------------


def estimate_zeta(
    kernel: CovarianceKernel,
    lam: float,
    T: float,
    n_samples: int,
    stream,
    n_substeps: int = 32,
    t_max: float = 12.0,
):
    """zeta_T = log E[exp(tilt exponent)] over Wiener paths of length T.

    Direct importance Monte Carlo; delta-method standard error; warns when the
    effective sample size degenerates.
    """
    if T > t_max:
        raise ConfigurationError(f"T={T} exceeds t_max={t_max} (cost grows with T)")
    if T <= 0:
        raise ConfigurationError("T must be positive")
    if n_samples < 2:
        raise ConfigurationError("need at least 2 samples")
    rng = get_rng(stream)
    d = kernel.dimension
    n_tot = max(8, int(round(T * n_substeps)))
    h = T / n_tot
    if lam == 0.0:
        return 0.0, 0.0

    nb = min(n_tot, int(np.ceil(1.0 / h)))
    band = np.ascontiguousarray(kernel.temporal(np.arange(nb) * h))
    q_inv = 1.0 / kernel.rpsi_q_step
    exponents = np.empty(n_samples)
    sqrt_h = math.sqrt(h)
    half_lam2 = 0.5 * lam * lam
    chunk = max(1, int(2**22 // max(1, n_tot * d)))
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        steps = rng.standard_normal((m, n_tot, d)) * sqrt_h
        pos = np.cumsum(steps, axis=1)
        mids = pos - 0.5 * steps
        for i in range(m):
            e = _quad.self_energy(np.ascontiguousarray(mids[i]), h, band, kernel.rpsi_q, q_inv)
            exponents[done + i] = half_lam2 * e
        done += m

    zeta = float(logsumexp(exponents) - math.log(n_samples))
    w = np.exp(exponents - exponents.max())
    stderr = float(np.std(w, ddof=1) / (w.mean() * math.sqrt(n_samples)))
    ess = float(w.sum() ** 2 / np.sum(w * w))
    if ess < 0.05 * n_samples:
        warnings.warn(
            f"effective sample size {ess:.0f} of {n_samples}; weights are degenerate",
            WeightDegeneracyWarning,
            stacklevel=2,
        )
    return zeta, stderr


def invariant_ensemble(cfg: ChainConfig, ep: EigenPair, size: int, stream):
    """Draws from the chain's invariant law by burn-in and thinning.

    Returns (increments, psi values at them).  Burn-in 20/gamma steps, spacing
    3/gamma steps, both safely past the coupling's mixing time.
    """
    rng = get_rng(stream)
    gamma = resolve_gamma(cfg, ep)
    burn = int(math.ceil(20.0 / gamma))
    thin = max(1, int(math.ceil(3.0 / gamma)))
    x, psi_x = _initial_block(ep, rng)

    def _step(x, psi_x):
        if rng.random() < gamma:
            y = sample_pi(ep.kernel, ep.lam, rng, ep.n_substeps)
            return y, ep.evaluate(y)
        return _transition(ep, x, psi_x, rng, gamma_sub=gamma)

    for _ in range(burn):
        x, psi_x = _step(x, psi_x)
    out = []
    vals = []
    while len(out) < size:
        out.append(x)
        vals.append(psi_x)
        for _ in range(thin):
            x, psi_x = _step(x, psi_x)
    return out, np.asarray(vals)


def fit_renormalization(zeta_samples, ep: EigenPair, invariant_psi_inverse_mean: float, zeta1=None):
    """Line fit zeta_T ~ c1 T + c2 plus the closed forms from the eigenpair.

    zeta_samples: iterable of (T, value, stderr).  Entries with T < 2 are
    excluded from the fit; a T = 1 entry (or the zeta1=(value, stderr) kwarg)
    feeds the closed form c1 = zeta_1 + log rho.  The closed c2 is
    -log rho + log E[1/psi] under the invariant law.  Returns
    (c1, c2, diagnostics).
    """
    entries = [(float(t), float(v), float(s)) for t, v, s in zeta_samples]
    if zeta1 is None:
        unit = [(v, s) for t, v, s in entries if abs(t - 1.0) < 1e-9]
        zeta1 = unit[0] if unit else None
    fit_pts = [e for e in entries if e[0] >= 2 - 1e-9]
    if len({t for t, _, _ in fit_pts}) < 4:
        raise ConfigurationError("need at least 4 distinct horizons T >= 2 for the fit")

    t_arr = np.array([e[0] for e in fit_pts])
    z_arr = np.array([e[1] for e in fit_pts])
    s_arr = np.maximum(np.array([e[2] for e in fit_pts]), 1e-12)
    wts = 1.0 / s_arr**2
    design = np.column_stack([t_arr, np.ones_like(t_arr)])
    gram = design.T @ (design * wts[:, None])
    rhs = design.T @ (z_arr * wts)
    cov = np.linalg.inv(gram)
    c1, c2 = cov @ rhs

    resid = z_arr - (c1 * t_arr + c2)
    resid_sigmas = resid / s_arr
    nonlinear = bool(np.any(np.abs(resid_sigmas) > 5.0))
    if nonlinear:
        warnings.warn(
            "zeta growth deviates from a line by more than 5x the stated errors",
            StatisticalFlag,
            stacklevel=2,
        )

    log_rho = math.log(ep.rho)
    diagnostics = {
        "fit_c1": float(c1),
        "fit_c2": float(c2),
        "fit_c1_stderr": float(math.sqrt(cov[0, 0])),
        "fit_c2_stderr": float(math.sqrt(cov[1, 1])),
        "residual_sigmas": resid_sigmas.tolist(),
        "nonlinearity_flag": nonlinear,
        "rho": ep.rho,
        "rho_stderr": ep.rho_stderr,
        "invariant_psi_inverse_mean": float(invariant_psi_inverse_mean),
        "closed_c2": float(-log_rho + math.log(invariant_psi_inverse_mean)),
    }
    if zeta1 is not None:
        z1, z1_se = zeta1
        closed_c1 = float(z1 + log_rho)
        closed_c1_se = float(math.sqrt(z1_se**2 + (ep.rho_stderr / ep.rho) ** 2))
        diagnostics["closed_c1"] = closed_c1
        diagnostics["closed_c1_stderr"] = closed_c1_se
        denom = math.sqrt(cov[0, 0] + closed_c1_se**2)
        diagnostics["c1_route_discrepancy_sigmas"] = float(abs(c1 - closed_c1) / max(denom, 1e-30))
    return float(c1), float(c2), diagnostics


def tilted_expectation(
    functional,
    T: float,
    cfg: ChainConfig,
    ep: EigenPair,
    n_paths: int,
    stream,
    tau: float | None = None,
    n_inner: int = 32,
):
    """Path-measure expectation of a bounded functional at horizon T.

    Ratio estimator: E[F * G] / E[G] with terminal weight
    G = (inner-MC mean of e^{closing interaction}) / psi(last block), the
    inner Monte Carlo running over final fragments when T - tau is not an
    integer.  Returns (estimate, stderr).
    """
    if T < 2:
        raise ConfigurationError("horizon must be >= 2")
    node = as_node(stream)
    numer = np.empty(n_paths)
    denom = np.empty(n_paths)
    min_ess = float("inf")
    for i in range(n_paths):
        rng = node.child(i).rng
        tau_i, incs, _, psi_last, frag = _chain_increments(cfg, T, ep, rng, tau)
        if frag == 0.0:
            val = functional(assemble(tau_i, incs))
            numer[i] = val / psi_last
            denom[i] = 1.0 / psi_last
        else:
            vals = np.empty(n_inner)
            wts = np.empty(n_inner)
            n_frag = max(8, int(round(ep.n_substeps * frag)))
            for j in range(n_inner):
                y = sample_pi(ep.kernel, ep.lam, rng, n_frag, frag)
                wts[j] = math.exp(interaction_terminal(incs[-1], y, ep.kernel, ep.lam))
                vals[j] = functional(assemble(tau_i, incs + [y]))
            min_ess = min(min_ess, float(wts.sum() ** 2 / np.sum(wts * wts)))
            numer[i] = float(np.mean(vals * wts)) / psi_last
            denom[i] = float(np.mean(wts)) / psi_last
    if np.isfinite(min_ess) and min_ess < 0.1 * n_inner:
        warnings.warn(
            f"inner fragment ESS fell to {min_ess:.1f} of {n_inner}",
            WeightDegeneracyWarning,
            stacklevel=2,
        )
    num_bar = numer.mean()
    den_bar = denom.mean()
    est = num_bar / den_bar
    cov = np.cov(numer, denom, ddof=1)
    var = (cov[0, 0] - 2 * est * cov[0, 1] + est * est * cov[1, 1]) / (den_bar**2 * n_paths)
    return float(est), float(math.sqrt(max(var, 0.0)))
