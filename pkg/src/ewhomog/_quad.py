"""Compiled inner loops for path-interaction quadrature and walker transport.

Everything here is deliberately free of allocation and RNG: callers pre-draw
randomness and pass plain float64 arrays.  The spatial covariance enters as a
table over squared radius (uniform q grid), which avoids a sqrt in the hot
pair loops; the temporal factor enters as per-lag band weights on the shared
midpoint lattice, so the time interpolation is resolved before compilation.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_JIT = dict(cache=True, fastmath=True, nogil=True)


@njit(inline="always", **_JIT)
def _rpsi_at_q(table, inv_step, q):
    pos = q * inv_step
    j = int(pos)
    if j >= table.size - 1:
        return 0.0
    f = pos - j
    return table[j] * (1.0 - f) + table[j + 1] * f


@njit(inline="always", **_JIT)
def _acorr_at(table, inv_step, t):
    # A(|t|) with linear interpolation, zero beyond the table range
    if t < 0.0:
        t = -t
    pos = t * inv_step
    j = int(pos)
    if j >= table.size - 1:
        return 0.0
    f = pos - j
    return table[j] * (1.0 - f) + table[j + 1] * f


@njit(**_JIT)
def self_energy(mid, h, band_self, rpsi_q, q_inv_step):
    """Banded midpoint quadrature of the self-interaction double integral.

    mid: (n, d) midpoint positions of one path.  band_self[m] = A(m*h).
    Returns sum over ordered pairs (diagonal once, off-diagonal twice) of
    A(|i-j|h) * C(|x_i - x_j|^2), times h^2.  Multiply by lam^2/2 outside.
    """
    n, d = mid.shape
    nb = band_self.size
    acc = 0.0
    for m in range(min(nb, n)):
        w = band_self[m]
        if w <= 0.0:
            continue
        s = 0.0
        for j in range(n - m):
            q = 0.0
            for c in range(d):
                v = mid[j + m, c] - mid[j, c]
                q += v * v
            s += _rpsi_at_q(rpsi_q, q_inv_step, q)
        if m == 0:
            acc += w * s
        else:
            acc += 2.0 * w * s
    return acc * h * h


@njit(**_JIT)
def self_energy_nonuniform(mid, t_mid, widths, acorr, a_inv_step, rpsi_q, q_inv_step):
    """Self-interaction quadrature on a possibly nonuniform midpoint grid.

    Counts the diagonal once and off-diagonal pairs twice, weighting each
    cell pair by its own width product.
    """
    n, d = mid.shape
    acc = 0.0
    for i in range(n):
        acc += acorr[0] * rpsi_q[0] * widths[i] * widths[i]
        for j in range(i + 1, n):
            dt = t_mid[j] - t_mid[i]
            if dt >= 1.0:
                break
            w = _acorr_at(acorr, a_inv_step, dt)
            if w <= 0.0:
                continue
            q = 0.0
            for c in range(d):
                v = mid[j, c] - mid[i, c]
                q += v * v
            acc += 2.0 * w * _rpsi_at_q(rpsi_q, q_inv_step, q) * widths[i] * widths[j]
    return acc


@njit(inline="always", **_JIT)
def cross_pair(y_mid, x_tail, band_cross, rpsi_q, q_inv_step):
    """Band sum for the interaction of adjacent unit blocks x (past) then y.

    x_tail[u] = x_end - x_mid[u]; band_cross[m-1] = A(1 - m*h).  Returns the
    bare double midpoint sum; multiply by lam^2 * h^2 outside.
    """
    n, d = y_mid.shape
    nc = band_cross.size
    acc = 0.0
    top = min(nc, n - 1)
    for m in range(1, top + 1):
        w = band_cross[m - 1]
        if w <= 0.0:
            continue
        s = 0.0
        for a in range(n - m):
            q = 0.0
            for c in range(d):
                v = y_mid[a, c] + x_tail[a + m, c]
                q += v * v
            s += _rpsi_at_q(rpsi_q, q_inv_step, q)
        acc += w * s
    return acc


@njit(**_JIT)
def cross_rows(block_mids, x_tail, band_cross, rpsi_q, q_inv_step, out):
    """out[i] = cross_pair(block_mids[i], x_tail, ...) for an ensemble."""
    for i in range(block_mids.shape[0]):
        out[i] = cross_pair(block_mids[i], x_tail, band_cross, rpsi_q, q_inv_step)


@njit(**_JIT)
def weighted_exp_rows(block_mids, x_tail, band_cross, rpsi_q, q_inv_step, weights, scale):
    """sum_i weights[i] * exp(scale * cross_pair(block_mids[i], x_tail))."""
    acc = 0.0
    for i in range(block_mids.shape[0]):
        e = cross_pair(block_mids[i], x_tail, band_cross, rpsi_q, q_inv_step)
        acc += weights[i] * np.exp(scale * e)
    return acc


@njit(**_JIT)
def cross_energy_general(y_mid, h_y, t_shift, x_mid, x_end, h_x, acorr, a_inv_step, rpsi_q, q_inv_step):
    """Midpoint quadrature of the interaction between blocks of any lengths.

    The x block occupies clock [0, len_x], the y block starts at t_shift
    (= len_x for adjacent blocks).  Temporal factor A(s + t_shift - u),
    spatial argument y(s) + x_end - x(u).  Returns the sum times h_x * h_y;
    multiply by lam^2 outside.
    """
    ny, d = y_mid.shape
    nx = x_mid.shape[0]
    acc = 0.0
    for a in range(ny):
        s = (a + 0.5) * h_y + t_shift
        for b in range(nx):
            targ = s - (b + 0.5) * h_x
            w = _acorr_at(acorr, a_inv_step, targ)
            if w <= 0.0:
                continue
            q = 0.0
            for c in range(d):
                v = y_mid[a, c] + x_end[c] - x_mid[b, c]
                q += v * v
            acc += w * _rpsi_at_q(rpsi_q, q_inv_step, q)
    return acc * h_x * h_y


@njit(**_JIT)
def nearby_count(x_mid, y_mid, off):
    """Number of shared midpoint slots with |off + x - y| <= 1."""
    n, d = x_mid.shape
    cnt = 0
    for a in range(n):
        q = 0.0
        for c in range(d):
            v = off[c] + x_mid[a, c] - y_mid[a, c]
            q += v * v
        if q <= 1.0:
            cnt += 1
    return cnt


@njit(**_JIT)
def kernel_cross_sum(vx, vy, temporal_w, rpsi_q, q_inv_step):
    """sum_{i,j} temporal_w[i, j] * C(|vx_i - vy_j|^2).

    temporal_w carries the full temporal covariance factor including the
    quadrature cell weights; zero entries are skipped.
    """
    n1, d = vx.shape
    n2 = vy.shape[0]
    acc = 0.0
    for i in range(n1):
        for j in range(n2):
            w = temporal_w[i, j]
            if w == 0.0:
                continue
            q = 0.0
            for c in range(d):
                v = vx[i, c] - vy[j, c]
                q += v * v
            acc += w * _rpsi_at_q(rpsi_q, q_inv_step, q)
    return acc


# -- random-walk transport through a stored field realization ---------------


@njit(**_JIT)
def walk_accumulate_1d(field, t0, inv_dt, x0, inv_dx, n_sites, start, incs, bridge, t_start, dt_w, out_sum, out_exit):
    """Line integral of the field along walker paths, one space dimension.

    field: (nt, nx) node values.  Walkers start at `start` (w, 1) at time
    t_start and step DOWN in time by dt_w using increments incs (w, k, 1).
    The field is sampled at midpoint times with bilinear interpolation and
    treated as zero outside the spatial range (out_exit counts such touches).
    bridge holds the pre-scaled refinement noise (sd sqrt(dt)/2) that turns
    the segment midpoint into the path's true position at the midpoint time;
    without it the quadrature under-disperses and picks up an O(dt) bias.
    """
    n_w, n_k = incs.shape[:2]
    for w in range(n_w):
        pos = start[w, 0]
        acc = 0.0
        exits = 0
        for k in range(n_k):
            midx = pos + 0.5 * incs[w, k, 0] + bridge[w, k, 0]
            tq = (t_start - (k + 0.5) * dt_w - t0) * inv_dt
            xq = (midx - x0) * inv_dx
            it = int(tq)
            ix = int(xq)
            if xq < 0.0 or ix + 1 >= n_sites:
                exits += 1
            else:
                ft = tq - it
                fx = xq - ix
                v = (
                    field[it, ix] * (1 - ft) * (1 - fx)
                    + field[it + 1, ix] * ft * (1 - fx)
                    + field[it, ix + 1] * (1 - ft) * fx
                    + field[it + 1, ix + 1] * ft * fx
                )
                acc += v
            pos += incs[w, k, 0]
        out_sum[w] = acc * dt_w
        out_exit[w] = exits


@njit(**_JIT)
def walk_accumulate_2d(field, t0, inv_dt, x0, inv_dx, n_sites, start, incs, bridge, t_start, dt_w, out_sum, out_exit):
    n_w, n_k = incs.shape[:2]
    for w in range(n_w):
        px = start[w, 0]
        py = start[w, 1]
        acc = 0.0
        exits = 0
        for k in range(n_k):
            mx = px + 0.5 * incs[w, k, 0] + bridge[w, k, 0]
            my = py + 0.5 * incs[w, k, 1] + bridge[w, k, 1]
            tq = (t_start - (k + 0.5) * dt_w - t0) * inv_dt
            xq = (mx - x0) * inv_dx
            yq = (my - x0) * inv_dx
            it = int(tq)
            ix = int(xq)
            iy = int(yq)
            if xq < 0.0 or yq < 0.0 or ix + 1 >= n_sites or iy + 1 >= n_sites:
                exits += 1
            else:
                ft = tq - it
                fx = xq - ix
                fy = yq - iy
                v = 0.0
                for ct in range(2):
                    wt = (1 - ft) if ct == 0 else ft
                    for cx in range(2):
                        wx = (1 - fx) if cx == 0 else fx
                        base = field[it + ct, ix + cx, iy] * (1 - fy) + field[it + ct, ix + cx, iy + 1] * fy
                        v += wt * wx * base
                acc += v
            px += incs[w, k, 0]
            py += incs[w, k, 1]
        out_sum[w] = acc * dt_w
        out_exit[w] = exits


@njit(**_JIT)
def walk_accumulate_3d(field, t0, inv_dt, x0, inv_dx, n_sites, start, incs, bridge, t_start, dt_w, out_sum, out_exit):
    n_w, n_k = incs.shape[:2]
    for w in range(n_w):
        px = start[w, 0]
        py = start[w, 1]
        pz = start[w, 2]
        acc = 0.0
        exits = 0
        for k in range(n_k):
            mx = px + 0.5 * incs[w, k, 0] + bridge[w, k, 0]
            my = py + 0.5 * incs[w, k, 1] + bridge[w, k, 1]
            mz = pz + 0.5 * incs[w, k, 2] + bridge[w, k, 2]
            tq = (t_start - (k + 0.5) * dt_w - t0) * inv_dt
            xq = (mx - x0) * inv_dx
            yq = (my - x0) * inv_dx
            zq = (mz - x0) * inv_dx
            it = int(tq)
            ix = int(xq)
            iy = int(yq)
            iz = int(zq)
            if xq < 0.0 or yq < 0.0 or zq < 0.0 or ix + 1 >= n_sites or iy + 1 >= n_sites or iz + 1 >= n_sites:
                exits += 1
            else:
                ft = tq - it
                fx = xq - ix
                fy = yq - iy
                fz = zq - iz
                v = 0.0
                for ct in range(2):
                    wt = (1 - ft) if ct == 0 else ft
                    for cx in range(2):
                        wx = wt * ((1 - fx) if cx == 0 else fx)
                        for cy in range(2):
                            wy = wx * ((1 - fy) if cy == 0 else fy)
                            v += wy * (
                                field[it + ct, ix + cx, iy + cy, iz] * (1 - fz)
                                + field[it + ct, ix + cx, iy + cy, iz + 1] * fz
                            )
                acc += v
            px += incs[w, k, 0]
            py += incs[w, k, 1]
            pz += incs[w, k, 2]
        out_sum[w] = acc * dt_w
        out_exit[w] = exits


WALKERS = {1: walk_accumulate_1d, 2: walk_accumulate_2d, 3: walk_accumulate_3d}
