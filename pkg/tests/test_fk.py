import math
import warnings

import numpy as np
import pytest

from ewhomog import (
    BoxExitWarning,
    ChainConfig,
    ConfigurationError,
    ConstantData,
    ContractViolation,
    FieldBox,
    GaussianBump,
    StatisticalFlag,
    StreamNode,
    fk_solve,
    fluctuation_experiment,
    homogenized_mean_check,
    prepare,
    sample_field,
)

from . import oracles


@pytest.fixture(scope="module")
def field3(pair3):
    box = FieldBox(0.0, 1.0, 4.0)
    return sample_field(pair3, box, 0.125, 0.25, StreamNode(70))


@pytest.fixture(scope="module")
def field1(pair1):
    box = FieldBox(0.0, 1.0, 3.0)
    return sample_field(pair1, box, 0.125, 0.25, StreamNode(71))


# -- quenched solver ----------------------------------------------------------


def test_untilted_matches_heat(field3):
    u0 = GaussianBump(1.0, np.zeros(3))
    x = np.array([0.4, -0.2, 0.1])
    est = fk_solve(field3, u0, 0.0, 1.0, x, 8192, StreamNode(72))
    exact = float(u0.heat_value(np.eye(3), 1.0, x[None, :])[0])
    assert abs(est.value - exact) < 3 * est.stderr
    assert est.exit_fraction < 0.01


def test_zeroed_field_collapses_to_heat(pair1):
    # V identically zero: the tilt weight is 1 whatever lambda is, and the
    # walker draws are unchanged, so the estimates agree bit for bit
    box = FieldBox(0.0, 1.0, 3.0)
    field = sample_field(pair1, box, 0.125, 0.25, StreamNode(73))
    field.values[...] = 0.0
    u0 = GaussianBump(1.0, [0.0])
    a = fk_solve(field, u0, 0.0, 1.0, [0.2], 2048, StreamNode(74))
    b = fk_solve(field, u0, 0.7, 1.0, [0.2], 2048, StreamNode(74))
    assert a.value == b.value
    assert a.stderr == b.stderr


def test_matches_lattice_oracle(field1):
    # explicit integration of the same lattice problem; the walker time step
    # (the field dt) contributes a small systematic on top of the MC error
    lam, t = 0.3, 1.0
    u0 = GaussianBump(1.0, [0.0])
    est = fk_solve(field1, u0, lam, t, [0.0], 60000, StreamNode(75))
    assert est.value > 0
    fine = oracles.fd_lattice_fk(field1, u0, lam, t, 0.02, 4000)
    mid = fine[fine.size // 2]  # x = 0 sits at the center node
    assert abs(est.value - mid) < 3 * est.stderr + 0.01 * abs(mid)


def test_determinism(field1):
    u0 = GaussianBump(1.0, [0.0])
    a = fk_solve(field1, u0, 0.3, 1.0, [0.0], 1024, StreamNode(76))
    b = fk_solve(field1, u0, 0.3, 1.0, [0.0], 1024, StreamNode(76))
    c = fk_solve(field1, u0, 0.3, 1.0, [0.0], 1024, StreamNode(77))
    assert a.value == b.value
    assert c.value != a.value


def test_box_exit_warning(pair1):
    box = FieldBox(0.0, 1.0, 0.75)
    field = sample_field(pair1, box, 0.125, 0.25, StreamNode(78))
    with pytest.warns(BoxExitWarning):
        fk_solve(field, GaussianBump(1.0, [0.0]), 0.0, 1.0, [0.0], 512, StreamNode(79))


def test_solver_contracts(field1):
    u0 = GaussianBump(1.0, [0.0])
    with pytest.raises(ConfigurationError):
        fk_solve(field1, u0, 0.0, 0.9, [0.0], 64, StreamNode(80))  # off the time lattice
    with pytest.raises(ConfigurationError):
        fk_solve(field1, u0, 0.0, 1.0, [5.0], 64, StreamNode(80))  # outside the box
    with pytest.raises(ConfigurationError):
        fk_solve(field1, u0, 0.0, 1.0, [0.0], 1, StreamNode(80))


# -- homogenized mean ---------------------------------------------------------


def test_mean_check_untilted(cfg0, ep0):
    report = homogenized_mean_check(
        cfg0, ep0, 0.1, 0.36, [0.3, 0.0, 0.0], 400, StreamNode(81), n_blocks=4000
    )
    assert report["gap_sigmas"] < 3.0
    assert report["T"] == pytest.approx(36.0)


def test_mean_check_constant_data(cfg02, ep02):
    # constant initial data is carried to 1 exactly by both routes
    report = homogenized_mean_check(
        cfg02,
        ep02,
        0.25,
        0.5,
        np.zeros(3),
        50,
        StreamNode(82),
        u0=ConstantData(1.0, 3),
        a_eff=np.eye(3),
    )
    assert report["mean_value"] == pytest.approx(1.0, abs=1e-12)
    assert abs(report["gap"]) < 1e-9


def test_mean_check_horizon_guard(cfg02, ep02):
    with pytest.raises(ConfigurationError):
        homogenized_mean_check(cfg02, ep02, 0.01, 1.0, np.zeros(3), 10, StreamNode(83))


# -- fluctuation experiment ---------------------------------------------------


def test_fluctuation_untilted_micro(cfg0, ep0):
    g = GaussianBump(0.8, np.zeros(3))
    u0 = GaussianBump(1.0, np.zeros(3))
    with warnings.catch_warnings():
        # at lambda 0 there is no field-to-field variance, so the walker-noise
        # dominance flag is expected
        warnings.simplefilter("ignore", StatisticalFlag)
        report = fluctuation_experiment(
            cfg0, ep0, 0.5, 0.25, g, u0, 12, 32, (1.0, 2), StreamNode(84)
        )
    assert report["target"] == 0.0
    assert report["zeta"] == {"c1": 0.0, "c2": 0.0, "zeta_T": 0.0}
    assert report["centering_sigma"] < 4.0
    assert report["var_xi"] >= 0.0
    # total variance splits into field and walker parts by construction
    assert report["var_xi"] == pytest.approx(report["field_var"] + report["fk_noise_var"])
    assert len(report["xi"]) == 12


def test_fluctuation_decomposition_cross_check():
    # strong coupling in d=1 makes the field-to-field part dominate; the
    # split-half covariance then reproduces it without the walker noise
    cfg = ChainConfig(lam=0.4, dimension=1, n_substeps=32, master_seed=2)
    _, ep = prepare(cfg)
    g = GaussianBump(0.8, [0.0])
    u0 = GaussianBump(1.0, [0.0])
    report = fluctuation_experiment(
        cfg,
        ep,
        0.25,
        0.5,
        g,
        u0,
        64,
        256,
        (1.0, 4),
        StreamNode(85),
        zeta_coeffs=(0.0, 0.0),
        a_eff=np.eye(1),
        nu_eff2=1.0,
    )
    assert report["flags"] == []
    assert report["field_var"] > report["fk_noise_var"]
    assert report["decomposition_gap"] < 0.15


def test_fluctuation_contracts(cfg0, ep0):
    g = GaussianBump(0.8, np.zeros(3))
    u0 = GaussianBump(1.0, np.zeros(3))
    with pytest.raises(ConfigurationError):
        fluctuation_experiment(cfg0, ep0, 0.5, 0.25, g, u0, 4, 32, (1.0, 2), StreamNode(86))
    with pytest.raises(ConfigurationError):
        # t / eps^2 misses the dt lattice
        fluctuation_experiment(cfg0, ep0, 0.3, 1.0, g, u0, 8, 32, (1.0, 2), StreamNode(86))
    with pytest.raises(ContractViolation):
        fluctuation_experiment(
            cfg0, ep0, 0.5, 0.25, ConstantData(0.0, 3), u0, 8, 32, (1.0, 2), StreamNode(86)
        )
