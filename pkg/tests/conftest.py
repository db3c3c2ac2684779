import numpy as np
import pytest

from risloc.channel import RadioConfig, RisProfileSet, Scenario, build_supports
from risloc.config import TABLE_MC_DIRECTION
from risloc.geometry import RisGeometry

TABLE_BS = np.array([0.0, 0.0, 2.5])
TABLE_RIS = np.array([0.0, 5.0, 2.0])
TABLE_UE = np.array([7.0, 3.0, 1.5])
DESK_UE = np.array([1.4, 4.6, 1.9])
S_DIR = TABLE_MC_DIRECTION / np.linalg.norm(TABLE_MC_DIRECTION)


def make_scenario(m, ue, p_dbm=10.0, seed=0, n_t=15, center=TABLE_RIS, bs=TABLE_BS, **radio_kw):
    radio = RadioConfig(tx_power_dbm=p_dbm, num_pilots=n_t, **radio_kw)
    geom = RisGeometry(m, m, radio.wavelength / 2, center=np.asarray(center, float))
    profiles = RisProfileSet.random(m * m, n_t, np.random.default_rng(seed))
    return Scenario(geom, bs, ue, radio, profiles), build_supports(geom, 3)


@pytest.fixture(scope="session")
def desk():
    return make_scenario(16, DESK_UE)


@pytest.fixture(scope="session")
def small():
    # 6x6 RIS (Fraunhofer ~0.25 m), UE in its near field
    geom_ue = TABLE_RIS + np.array([0.08, -0.2, 0.05])
    return make_scenario(6, geom_ue)


@pytest.fixture(scope="session")
def table():
    return make_scenario(48, TABLE_UE)


_ACCEPTANCE = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
