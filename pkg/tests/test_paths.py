import numpy as np
import pytest

from ewhomog import ContractViolation, StreamNode, sample_wiener_increment
from ewhomog.paths import (
    PathIncrement,
    assemble,
    boundary_sup_bound,
    i_sup_bound,
    interaction_I,
    interaction_boundary,
    interaction_terminal,
    self_tilt_exponent,
)

from .conftest import assert_close
from . import oracles


def flat(n, d=3, length=1.0):
    return PathIncrement(np.zeros((n + 1, d)), length)


# -- wiener increments --------------------------------------------------------


def test_wiener_basics():
    node = StreamNode(3)
    ends = np.stack(
        [sample_wiener_increment(1.0, 64, node.child(i), 3).end for i in range(10000)]
    )
    var = ends.var(axis=0, ddof=1)
    se = var * np.sqrt(2.0 / 9999)
    assert np.all(np.abs(var - 1.0) < 5 * se)


def test_wiener_scaling_and_start():
    node = StreamNode(4)
    inc = sample_wiener_increment(0.5, 32, node, 2)
    assert np.all(inc.positions[0] == 0.0)
    assert inc.length == 0.5
    assert inc.step == pytest.approx(0.5 / 32)
    ends = np.stack(
        [sample_wiener_increment(0.5, 32, node.child(i), 1).end for i in range(10000)]
    )
    var = ends.var(ddof=1)
    assert abs(var - 0.5) < 5 * 0.5 * np.sqrt(2.0 / 9999)


def test_increment_contract():
    with pytest.raises(ContractViolation):
        PathIncrement(np.ones((5, 3)), 1.0)  # does not start at 0
    with pytest.raises(ContractViolation):
        PathIncrement(np.zeros((1, 3)), 1.0)
    with pytest.raises(ContractViolation):
        PathIncrement(np.zeros((5, 3)), 3.0)  # too long


# -- self tilt ----------------------------------------------------------------


def test_self_tilt_zero_coupling(kernel3):
    inc = sample_wiener_increment(1.0, 32, StreamNode(5), 3)
    assert self_tilt_exponent(inc, kernel3, 0.0) == 0.0


def test_self_tilt_flat_path_oracle(kernel3):
    lam = 0.3
    want = 0.5 * lam * lam * kernel3.rpsi[0] * oracles.DBL_A
    got32 = self_tilt_exponent(flat(32), kernel3, lam)
    got64 = self_tilt_exponent(flat(64), kernel3, lam)
    assert_close(got32, want, 2e-3, "flat tilt n=32")
    assert_close(got64, want, 5e-4, "flat tilt n=64")
    # midpoint rule is second order: quartering of the error under doubling
    ratio = abs(got32 - want) / abs(got64 - want)
    assert 3.0 < ratio < 5.0


def test_self_tilt_sup_bound(kernel3):
    lam = 0.25
    node = StreamNode(6)
    cap = 0.5 * lam * lam * 1.0 * 2.0 * kernel3.sup_value
    for i in range(200):
        inc = sample_wiener_increment(1.0, 32, node.child(i), 3)
        v = self_tilt_exponent(inc, kernel3, lam)
        assert 0.0 <= v <= cap


def test_self_tilt_slow_oracle(kernel3):
    lam = 0.2
    node = StreamNode(7)
    for i in range(4):
        inc = sample_wiener_increment(1.0, 24, node.child(i), 3)
        assert_close(
            self_tilt_exponent(inc, kernel3, lam),
            oracles.slow_self_energy(inc, kernel3, lam),
            1e-4,
            "self energy vs slow loop",
        )


# -- pair interactions --------------------------------------------------------


def test_interaction_zero_coupling(kernel3):
    node = StreamNode(8)
    x = sample_wiener_increment(1.0, 32, node.child(0), 3)
    y = sample_wiener_increment(1.0, 32, node.child(1), 3)
    assert interaction_I(x, y, kernel3, 0.0) == 0.0


def test_interaction_flat_oracle(kernel3):
    lam = 0.3
    want = lam * lam * kernel3.rpsi[0] * oracles.I_WA
    assert_close(interaction_I(flat(32), flat(32), kernel3, lam), want, 5e-3, "flat I n=32")
    assert_close(interaction_I(flat(64), flat(64), kernel3, lam), want, 1.3e-3, "flat I n=64")


def test_interaction_reflection_exact(kernel3):
    node = StreamNode(9)
    for i in range(8):
        x = sample_wiener_increment(1.0, 32, node.child(i, 0), 3)
        y = sample_wiener_increment(1.0, 32, node.child(i, 1), 3)
        a = interaction_I(x, y, kernel3, 0.2)
        b = interaction_I(x.reflected(), y.reflected(), kernel3, 0.2)
        assert a == b


def test_interaction_slow_oracle(kernel3):
    node = StreamNode(10)
    for i in range(6):
        x = sample_wiener_increment(1.0, 32, node.child(i, 0), 3)
        y = sample_wiener_increment(1.0, 32, node.child(i, 1), 3)
        assert_close(
            interaction_I(x, y, kernel3, 0.25),
            oracles.slow_cross_energy(x, y, kernel3, 0.25),
            1e-4,
            "interaction vs slow loop",
        )


def test_interaction_mismatched_grids(kernel3):
    # different substep counts route through the generic quadrature
    x = sample_wiener_increment(1.0, 32, StreamNode(11).child(0), 3)
    y = sample_wiener_increment(1.0, 48, StreamNode(11).child(1), 3)
    assert_close(
        interaction_I(x, y, kernel3, 0.25),
        oracles.slow_cross_energy(x, y, kernel3, 0.25),
        1e-4,
        "generic interaction",
    )


def test_boundary_matches_unit_interaction_at_tau_one(kernel3):
    node = StreamNode(12)
    x = sample_wiener_increment(1.0, 32, node.child(0), 3)
    y = sample_wiener_increment(1.0, 32, node.child(1), 3)
    a = interaction_boundary(x, y, kernel3, 0.2)
    b = interaction_I(x, y, kernel3, 0.2)
    assert_close(a, b, 1e-4, "boundary at tau=1")


def test_boundary_and_terminal_slow_oracle(kernel3):
    node = StreamNode(13)
    x0 = sample_wiener_increment(0.5, 16, node.child(0), 3)
    y = sample_wiener_increment(1.0, 32, node.child(1), 3)
    assert_close(
        interaction_boundary(x0, y, kernel3, 0.25),
        oracles.slow_cross_energy(x0, y, kernel3, 0.25),
        1e-4,
        "opening interaction",
    )
    frag = sample_wiener_increment(0.25, 8, node.child(2), 3)
    assert_close(
        interaction_terminal(y, frag, kernel3, 0.25),
        oracles.slow_cross_energy(y, frag, kernel3, 0.25),
        1e-4,
        "closing interaction",
    )


def test_interaction_contracts(kernel3):
    unit = flat(32)
    half = flat(16, length=0.5)
    with pytest.raises(ContractViolation):
        interaction_I(half, unit, kernel3, 0.2)
    with pytest.raises(ContractViolation):
        interaction_boundary(unit, half, kernel3, 0.2)
    with pytest.raises(ContractViolation):
        interaction_terminal(half, unit, kernel3, 0.2)


# -- sup bounds ---------------------------------------------------------------


def test_i_sup_bound_formula(kernel3):
    assert_close(i_sup_bound(kernel3, 0.2), 0.02 * kernel3.sup_value, 1e-12, "i_sup")


def test_interaction_domination(kernel3):
    # Monte Carlo domination on 10^4 pairs
    lam = 0.3
    bound = i_sup_bound(kernel3, lam)
    node = StreamNode(14)
    worst = 0.0
    for i in range(10000):
        x = sample_wiener_increment(1.0, 16, node.child(i, 0), 3)
        y = sample_wiener_increment(1.0, 16, node.child(i, 1), 3)
        v = interaction_I(x, y, kernel3, lam)
        worst = max(worst, v)
        assert 0.0 <= v <= bound
    assert worst > 0.0


def test_boundary_sup_bound_monotone(kernel3):
    vals = [boundary_sup_bound(kernel3, 0.2, ell) for ell in (0.1, 0.5, 1.0)]
    assert vals[0] < vals[1] < vals[2]
    assert_close(vals[2], 0.5 * 0.04 * kernel3.sup_value, 1e-12, "boundary bound at 1")


# -- assembly -----------------------------------------------------------------


def test_assemble_single():
    inc = sample_wiener_increment(1.0, 32, StreamNode(15), 3)
    path = assemble(1.0, [inc])
    assert np.array_equal(path.nodes, inc.positions)
    assert path.total_length == pytest.approx(1.0)


def test_assemble_flat():
    path = assemble(0.5, [flat(16, length=0.5), flat(32)])
    assert np.all(path.nodes == 0.0)
    assert path.total_length == pytest.approx(1.5)


def test_assemble_continuity_and_endpoint():
    node = StreamNode(16)
    incs = [sample_wiener_increment(0.5, 16, node.child(0), 3)] + [
        sample_wiener_increment(1.0, 32, node.child(k), 3) for k in range(1, 4)
    ]
    path = assemble(0.5, incs)
    assert path.total_length == pytest.approx(3.5)
    want_end = sum(i.end for i in incs)
    assert np.allclose(path.endpoint, want_end, atol=1e-12)
    # node times strictly increasing (continuity at junctions by construction)
    assert np.all(np.diff(path.node_times) > 0)


def test_assemble_contracts():
    with pytest.raises(ContractViolation):
        assemble(0.5, [flat(16, length=0.4), flat(32)])  # first length != tau
    with pytest.raises(ContractViolation):
        assemble(1.0, [flat(32), flat(16, length=0.5), flat(32)])  # middle not unit
