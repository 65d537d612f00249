import numpy as np
import pytest

from ewhomog import ChainConfig, build_kernels, make_bump_mollifiers, prepare


@pytest.fixture(scope="session")
def pair3():
    return make_bump_mollifiers(3, 256)


@pytest.fixture(scope="session")
def kernel3(pair3):
    return build_kernels(pair3)


@pytest.fixture(scope="session")
def pair1():
    return make_bump_mollifiers(1, 256)


@pytest.fixture(scope="session")
def kernel1(pair1):
    return build_kernels(pair1)


@pytest.fixture(scope="session")
def cfg02():
    return ChainConfig(lam=0.2, dimension=3, n_substeps=32, ensemble_size=256, master_seed=1)


@pytest.fixture(scope="session")
def ep02(cfg02):
    kernel, ep = prepare(cfg02)
    return ep


@pytest.fixture(scope="session")
def cfg0():
    return ChainConfig(lam=0.0, dimension=3, n_substeps=32, ensemble_size=256, master_seed=1)


@pytest.fixture(scope="session")
def ep0(cfg0):
    kernel, ep = prepare(cfg0)
    return ep


def assert_close(got, want, rtol, what=""):
    got = float(got)
    want = float(want)
    rel = abs(got - want) / max(abs(want), 1e-300)
    assert rel <= rtol, f"{what}: got {got!r}, want {want!r}, rel err {rel:.3e} > {rtol}"


# one line per acceptance criterion, printed after the test summary so the
# verdicts survive output capture
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
