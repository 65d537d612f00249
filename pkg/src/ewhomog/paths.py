"""Discretized path increments and their tilt/interaction functionals.

A path increment is a Brownian-scaled random walk on [0, len] started at 0.
All double integrals against the covariance R are midpoint quadratures on the
path grid, restricted to the band where the temporal factor is active.  Two
adjacent blocks interact through R(s + len_x - u, y(s) + x(len_x) - x(u)),
with x the earlier block; the aligned unit-block case goes through the banded
fast kernel, everything else through a generic double loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _quad
from .errors import ConfigurationError, ContractViolation
from .kernels import CovarianceKernel
from .streams import as_node


@dataclass
class PathIncrement:
    """Positions at n+1 uniform nodes over [0, length]; positions[0] = 0.

    Treated as immutable after construction.  Midpoint/tail caches back the
    interaction quadratures: tail[u] = endpoint - midpoint[u].
    """

    positions: np.ndarray
    length: float
    mid: np.ndarray = field(init=False, repr=False)
    tail: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        p = np.ascontiguousarray(np.asarray(self.positions, dtype=float))
        if p.ndim != 2 or p.shape[0] < 2:
            raise ContractViolation("positions must be (n+1, d) with n >= 1")
        if np.any(p[0] != 0.0):
            raise ContractViolation("increment must start at the origin")
        if not 0 < self.length <= 2 + 1e-9:
            raise ContractViolation(f"length must lie in (0, 2], got {self.length}")
        self.positions = p
        self.mid = np.ascontiguousarray(0.5 * (p[:-1] + p[1:]))
        self.tail = np.ascontiguousarray(p[-1] - self.mid)

    @property
    def n_substeps(self) -> int:
        return self.positions.shape[0] - 1

    @property
    def dimension(self) -> int:
        return self.positions.shape[1]

    @property
    def step(self) -> float:
        return self.length / self.n_substeps

    @property
    def end(self) -> np.ndarray:
        return self.positions[-1]

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.length, self.positions.shape[0])

    def reflected(self) -> "PathIncrement":
        return PathIncrement(-self.positions, self.length)


@dataclass
class AssembledPath:
    """Concatenation of increments: one of length tau, then unit blocks, then
    an optional final fragment.  Node positions are cumulative, so the path is
    exactly continuous at junctions."""

    increments: tuple
    tau: float
    total_length: float = field(init=False)
    nodes: np.ndarray = field(init=False, repr=False)
    node_times: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        incs = tuple(self.increments)
        if not incs:
            raise ContractViolation("need at least one increment")
        if abs(incs[0].length - self.tau) > 1e-9:
            raise ContractViolation(
                f"first increment length {incs[0].length} != tau {self.tau}"
            )
        for p in incs[1:-1]:
            if abs(p.length - 1.0) > 1e-9:
                raise ContractViolation("middle increments must have unit length")
        if len(incs) > 1 and not 0 < incs[-1].length <= 1 + 1e-9:
            raise ContractViolation("final fragment length must lie in (0, 1]")
        self.increments = incs

        parts_p = [incs[0].positions]
        parts_t = [incs[0].times()]
        for p in incs[1:]:
            parts_p.append(parts_p[-1][-1] + p.positions[1:])
            parts_t.append(parts_t[-1][-1] + p.times()[1:])
        self.nodes = np.ascontiguousarray(np.concatenate(parts_p))
        self.node_times = np.concatenate(parts_t)
        self.total_length = float(self.node_times[-1])

    @property
    def dimension(self) -> int:
        return self.nodes.shape[1]

    @property
    def endpoint(self) -> np.ndarray:
        return self.nodes[-1]

    def write_csv(self, path) -> None:
        data = np.column_stack([self.node_times, self.nodes])
        header = "time," + ",".join(f"x{i}" for i in range(self.dimension))
        np.savetxt(path, data, delimiter=",", header=header, comments="")


def sample_wiener_increment(length: float, n_substeps: int, stream, dimension: int = 3) -> PathIncrement:
    """Brownian increment on [0, length] as a scaled random walk."""
    if not length > 0:
        raise ConfigurationError(f"length must be positive, got {length}")
    if n_substeps < 8:
        raise ConfigurationError(f"need at least 8 substeps, got {n_substeps}")
    rng = as_node(stream).rng
    steps = rng.standard_normal((n_substeps, dimension)) * np.sqrt(length / n_substeps)
    positions = np.vstack([np.zeros((1, dimension)), np.cumsum(steps, axis=0)])
    return PathIncrement(positions, float(length))


def _midpoint_decomposition(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(mid positions, mid times, cell widths) for an increment or assembly."""
    if isinstance(path, PathIncrement):
        h = path.step
        t = (np.arange(path.n_substeps) + 0.5) * h
        return path.mid, t, np.full(path.n_substeps, h)
    mids = 0.5 * (path.nodes[:-1] + path.nodes[1:])
    t = 0.5 * (path.node_times[:-1] + path.node_times[1:])
    return np.ascontiguousarray(mids), t, np.diff(path.node_times)


def _self_energy_uniform_raw(mids: np.ndarray, h: float, kernel: CovarianceKernel, lam: float) -> float:
    """Tilt exponent for a uniform midpoint lattice given directly as arrays."""
    n = mids.shape[0]
    nb = min(n, int(np.ceil(1.0 / h)))
    band = np.ascontiguousarray(kernel.temporal(np.arange(nb) * h))
    e = _quad.self_energy(mids, h, band, kernel.rpsi_q, 1.0 / kernel.rpsi_q_step)
    return 0.5 * lam * lam * e


def self_tilt_exponent(path, kernel: CovarianceKernel, lam: float) -> float:
    """(lam^2/2) * double midpoint quadrature of R(s-u, path(s)-path(u))."""
    if lam == 0.0:
        return 0.0
    if isinstance(path, PathIncrement):
        return _self_energy_uniform_raw(path.mid, path.step, kernel, lam)
    mids, t, w = _midpoint_decomposition(path)
    if np.allclose(w, w[0]):
        return _self_energy_uniform_raw(mids, float(w[0]), kernel, lam)
    e = _quad.self_energy_nonuniform(
        mids, t, w, kernel.acorr, 1.0 / kernel.acorr_step, kernel.rpsi_q, 1.0 / kernel.rpsi_q_step
    )
    return 0.5 * lam * lam * e


def interaction_I(x: PathIncrement, y: PathIncrement, kernel: CovarianceKernel, lam: float) -> float:
    """Interaction of consecutive unit blocks, x earlier, y later."""
    if abs(x.length - 1.0) > 1e-9 or abs(y.length - 1.0) > 1e-9:
        raise ContractViolation("interaction_I requires two unit-length increments")
    if lam == 0.0:
        return 0.0
    if x.n_substeps == y.n_substeps:
        n = x.n_substeps
        h = 1.0 / n
        band = kernel.bands(n)["cross"]
        e = _quad.cross_pair(y.mid, x.tail, band, kernel.rpsi_q, 1.0 / kernel.rpsi_q_step)
        return lam * lam * h * h * e
    return _interaction_general(x, y, kernel, lam)


def _interaction_general(x: PathIncrement, y: PathIncrement, kernel: CovarianceKernel, lam: float) -> float:
    if lam == 0.0:
        return 0.0
    e = _quad.cross_energy_general(
        y.mid,
        y.step,
        x.length,
        x.mid,
        np.ascontiguousarray(x.end),
        x.step,
        kernel.acorr,
        1.0 / kernel.acorr_step,
        kernel.rpsi_q,
        1.0 / kernel.rpsi_q_step,
    )
    return lam * lam * e


def interaction_boundary(first: PathIncrement, second: PathIncrement, kernel: CovarianceKernel, lam: float) -> float:
    """Opening-block interaction: first has length tau in (0, 1], second is a
    unit block immediately after it."""
    if not 0 < first.length <= 1 + 1e-9:
        raise ContractViolation("opening increment must have length in (0, 1]")
    if abs(second.length - 1.0) > 1e-9:
        raise ContractViolation("second increment must have unit length")
    return _interaction_general(first, second, kernel, lam)


def interaction_terminal(first: PathIncrement, second: PathIncrement, kernel: CovarianceKernel, lam: float) -> float:
    """Closing-fragment interaction: first is a unit block, second is the
    final fragment of length in (0, 1]."""
    if abs(first.length - 1.0) > 1e-9:
        raise ContractViolation("first increment must have unit length")
    if not 0 < second.length <= 1 + 1e-9:
        raise ContractViolation("final fragment must have length in (0, 1]")
    return _interaction_general(first, second, kernel, lam)


def i_sup_bound(kernel: CovarianceKernel, lam: float) -> float:
    """Rigorous sup bound on the unit-block interaction: lam^2 * sup R * 1/2,
    the 1/2 being the area of {(s,u) in [0,1]^2 : 0 < s+1-u < 1}."""
    return 0.5 * lam * lam * kernel.sup_value


def boundary_sup_bound(kernel: CovarianceKernel, lam: float, length: float) -> float:
    """Sup bound for the opening/closing interaction with a block of the given
    length: the active band area is length - length^2/2."""
    ell = min(max(length, 0.0), 1.0)
    return lam * lam * kernel.sup_value * (ell - 0.5 * ell * ell)


def self_tilt_sup_bound(kernel: CovarianceKernel, lam: float, length: float = 1.0) -> float:
    """Sup bound for the self-tilt exponent of a block of the given length."""
    area = min(length * length, 2.0 * length)  # band |s-u|<1 inside the square
    return 0.5 * lam * lam * kernel.sup_value * area


def assemble(tau: float, increments) -> AssembledPath:
    return AssembledPath(tuple(increments), float(tau))
