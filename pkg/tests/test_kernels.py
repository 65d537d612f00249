import numpy as np
import pytest

from ewhomog import build_kernels, make_bump_mollifiers, naive_variance_nu0
from ewhomog.mollifier import Mollifier, MollifierPair, sphere_area

from .conftest import assert_close
from . import oracles


def test_r00_matches_fine_grid_oracle(kernel3):
    # independent quadrature at 4x tabulation resolution
    fine = build_kernels(make_bump_mollifiers(3, 1024))
    assert_close(kernel3.sup_value, fine.sup_value, 1e-6, "R(0,0) vs 4x grid")
    # and against the frozen analytic value
    assert_close(kernel3.sup_value, oracles.R00_D3, 1e-6, "R(0,0) vs quad")


def test_temporal_autocorrelation_values(kernel3):
    assert_close(kernel3.acorr[0], oracles.A0, 1e-9, "A(0)")
    assert_close(kernel3.temporal(0.25), oracles.A_025, 1e-9, "A(0.25)")
    assert_close(kernel3.temporal(0.5), oracles.A_05, 1e-9, "A(0.5)")


def test_temporal_support(kernel3):
    assert kernel3(1.5, np.zeros(3)) == 0.0
    assert kernel3.temporal(1.0) == 0.0
    assert kernel3.temporal(-2.0) == 0.0


def test_symmetry(kernel3):
    x = np.array([0.2, -0.1, 0.05])
    assert kernel3(0.3, x) == kernel3(-0.3, x)
    assert kernel3(0.3, x) == kernel3(0.3, -x)


def test_spatial_support(kernel3):
    assert kernel3.spatial(np.array([1.0, 0.0, 0.0])) == 0.0
    assert kernel3.spatial(np.array([0.8, 0.8, 0.0])) == 0.0


def test_spatial_autocorrelation_oracle(kernel3):
    # cylindrical reduction vs frozen direct double quadrature; accuracy is
    # set by the tabulation step and the refine=2 inner grid
    assert_close(kernel3.rpsi[0], oracles.C0_D3, 1e-9, "C(0)")
    assert_close(kernel3.spatial(np.array([0.25, 0, 0])), oracles.C3_025, 2e-3, "C(0.25)")
    assert_close(kernel3.spatial(np.array([0.5, 0, 0])), oracles.C3_05, 5e-3, "C(0.5)")


def test_spatial_autocorrelation_d1(kernel1):
    assert_close(kernel1.rpsi[0], oracles.C0_D1, 1e-9, "C(0) d=1")
    # d=1 autocorrelation is the plain shifted product of the section
    psi = kernel1.mollifiers.psi
    h = psi.grid_step
    full = psi.grid_values
    j = int(round(0.25 / h))
    direct = np.trapezoid(full[j:] * full[: full.size - j], dx=h)
    assert_close(kernel1.rpsi[j], direct, 1e-12, "C(0.25) d=1")


def test_nu0_unit_mass(kernel3, kernel1):
    assert_close(naive_variance_nu0(kernel3), 1.0, 1e-6, "nu0 d=3")
    assert_close(naive_variance_nu0(kernel1), 1.0, 1e-6, "nu0 d=1")


def test_nu0_quadratic_scaling(pair3):
    phi = pair3.phi
    doubled = Mollifier(phi.grid_values * 2.0, phi.support_radius, phi.grid_step, 1.0, "time")
    pair = MollifierPair(doubled, pair3.psi, 3)
    assert_close(naive_variance_nu0(build_kernels(pair)), 4.0, 1e-5, "nu0 scaling")


def test_nu0_brute_force_oracle():
    # arbitrary pair (d=2), nu0 against a direct quadrature of the tabulated R;
    # tolerance covers the autocorrelation table error at this resolution
    pair = make_bump_mollifiers(2, 96)
    k = build_kernels(pair)
    ts = np.linspace(-1.0, 1.0, 801)
    t_mass = np.trapezoid(k.temporal(ts), ts)
    rs = np.linspace(0.0, 1.0, 801)
    x_mass = sphere_area(2) * np.trapezoid(k.spatial(rs) * rs, rs)
    assert_close(naive_variance_nu0(k), t_mass * x_mass, 3e-3, "nu0 brute force")


def test_mass_quadratures_approach_nu0(kernel3):
    table_route = kernel3.temporal_mass() * kernel3.spatial_mass()
    assert_close(table_route, naive_variance_nu0(kernel3), 1e-3, "table-route nu0")


def test_one_sided_equals_plain_when_nonnegative(kernel3):
    for t1, t2 in [(0.0, 0.3), (0.5, 0.1), (1.2, 0.4), (0.7, 0.7)]:
        assert_close(
            kernel3.temporal_one_sided(t1, t2),
            kernel3.temporal(t1 - t2),
            1e-9,
            f"one-sided at ({t1},{t2})",
        )


def test_one_sided_clipped_oracle(kernel3):
    got = kernel3.temporal_one_sided(-0.35, -0.1)
    assert_close(got, oracles.ONE_SIDED_M35_M10, 1e-4, "clipped one-sided")
    # clipping strictly reduces the overlap here
    assert got < kernel3.temporal(0.25)


def test_one_sided_vanishes_below_history(kernel3):
    assert kernel3.temporal_one_sided(-1.0, 0.3) == 0.0
    assert kernel3.temporal_one_sided(-1.5, -1.2) == 0.0
    assert kernel3.temporal_one_sided(0.0, 1.0) == 0.0


def test_one_sided_array_broadcast(kernel3):
    t1 = np.array([-0.35, 0.2, -2.0])
    t2 = np.array([-0.1, 0.2, 0.0])
    out = kernel3.temporal_one_sided(t1, t2)
    assert out.shape == (3,)
    assert out[2] == 0.0
    assert_close(out[1], kernel3.acorr[0], 1e-12, "diagonal")


def test_squared_radius_table_consistent(kernel3):
    rs = np.array([0.1, 0.33, 0.62, 0.95])
    q = rs**2
    qi = q / kernel3.rpsi_q_step
    i0 = qi.astype(int)
    f = qi - i0
    interp = kernel3.rpsi_q[i0] * (1 - f) + kernel3.rpsi_q[i0 + 1] * f
    assert np.allclose(interp, kernel3.spatial(rs), rtol=2e-3, atol=1e-5)


def test_bands_cache(kernel3):
    b = kernel3.bands(32)
    assert b is kernel3.bands(32)
    assert b["self"].size == 32
    assert b["cross"].size == 31
    assert_close(b["self"][0], kernel3.acorr[0], 1e-12, "band head")
