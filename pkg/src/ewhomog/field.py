"""Lattice realizations of the smoothed Gaussian potential.

The potential is white noise convolved with the separable bump phi (x) psi.
On the lattice this is cell noise eta ~ N(0, 1/(dt dx^d)) convolved with the
tabulated mollifiers times the cell volume, which we evaluate as a sequence of
1-D 'valid' convolutions (the kernel is separable).  Noise is generated one
time slab at a time from a counter-based stream keyed by (seed, slab index),
so a realization is a pure function of (seed, box, steps, mollifiers) and does
not depend on worker count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import oaconvolve

from .errors import ConfigurationError
from .mollifier import MollifierPair
from .streams import TAG_FIELD_SLAB, as_node


@dataclass(frozen=True)
class FieldBox:
    """Space-time box [t_lo, t_hi] x [-half_width, half_width]^d."""

    t_lo: float
    t_hi: float
    half_width: float


@dataclass
class FieldRealization:
    values: np.ndarray  # (time nodes, spatial nodes per axis ... d axes)
    t_lo: float
    dt: float
    dx: float
    half_width: float
    dimension: int
    master_seed: int
    stream_key: tuple

    @property
    def t_hi(self) -> float:
        return self.t_lo + (self.values.shape[0] - 1) * self.dt

    @property
    def n_sites(self) -> int:
        return self.values.shape[1]

    def export(self, prefix) -> None:
        prefix = Path(prefix)
        self.values.tofile(prefix.with_suffix(".bin"))
        meta = {
            "shape": list(self.values.shape),
            "dtype": str(self.values.dtype),
            "t_lo": self.t_lo,
            "dt": self.dt,
            "dx": self.dx,
            "half_width": self.half_width,
            "dimension": self.dimension,
            "master_seed": self.master_seed,
            "stream_key": list(self.stream_key),
        }
        prefix.with_suffix(".json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, prefix) -> "FieldRealization":
        prefix = Path(prefix)
        meta = json.loads(prefix.with_suffix(".json").read_text())
        values = np.fromfile(prefix.with_suffix(".bin"), dtype=meta["dtype"])
        values = values.reshape(meta["shape"])
        return cls(
            values,
            meta["t_lo"],
            meta["dt"],
            meta["dx"],
            meta["half_width"],
            meta["dimension"],
            meta["master_seed"],
            tuple(meta["stream_key"]),
        )


def _even_multiple(span: float, step: float, what: str) -> int:
    n = round(span / step)
    if abs(n * step - span) > 1e-9:
        raise ConfigurationError(f"{what} span {span} is not a multiple of step {step}")
    return int(n)


def sample_field(
    mollifiers: MollifierPair,
    box: FieldBox,
    dt: float,
    dx: float,
    seed,
    dtype=np.float64,
) -> FieldRealization:
    """Synthesize the potential on the node lattice of the box.

    The noise slab extends one temporal support below t_lo and half a spatial
    support beyond each face, so every requested node sees its full smoothing
    neighborhood.
    """
    d = mollifiers.dimension
    phi, psi = mollifiers.phi, mollifiers.psi
    if dt > 0.25 + 1e-12 or dx > 0.25 + 1e-12:
        raise ConfigurationError(
            "dt and dx must each resolve the mollifier supports with >= 4 cells "
            f"(need <= 0.25, got dt={dt}, dx={dx})"
        )
    if box.t_hi - box.t_lo < 1.0 - 1e-12 or 2 * box.half_width < 1.0 - 1e-12:
        raise ConfigurationError("field box is smaller than the mollifier support")

    nt = _even_multiple(box.t_hi - box.t_lo, dt, "time")
    nx = _even_multiple(2 * box.half_width, dx, "space")
    n_phi = int(np.ceil(1.0 / dt - 1e-12))
    n_half = int(np.ceil(0.5 / dx - 1e-12))

    # kernel taps times the cell volume, folded into the noise scale:
    # V = conv(std normal, tap) * sqrt(dt * dx^d) reproduces cell noise of
    # variance 1/(dt dx^d) convolved with mollifier * cell volume.  Time is
    # separable; the spatial smoothing is radial, so it needs the full stencil.
    k_time = phi(np.arange(n_phi + 1) * dt).astype(dtype)
    offsets = np.arange(-n_half, n_half + 1) * dx
    grids = np.meshgrid(*([offsets] * d), indexing="ij")
    radius = np.sqrt(sum(g * g for g in grids))
    k_space = psi(radius).astype(dtype)

    node = as_node(seed)
    spatial_shape = (nx + 2 * n_half + 1,) * d
    noise = np.empty((nt + n_phi + 1, *spatial_shape), dtype=dtype)
    for k in range(noise.shape[0]):
        rng = node.child(TAG_FIELD_SLAB, k).rng
        noise[k] = rng.standard_normal(spatial_shape, dtype=dtype)

    out = oaconvolve(noise, k_time.reshape((-1,) + (1,) * d), mode="valid", axes=0)
    out = oaconvolve(out, k_space[None, ...], mode="valid", axes=tuple(range(1, d + 1)))
    out = np.ascontiguousarray(out * np.sqrt(dt * dx**d), dtype=dtype)

    return FieldRealization(
        out, box.t_lo, dt, dx, box.half_width, d, node.master_seed, node.key
    )
