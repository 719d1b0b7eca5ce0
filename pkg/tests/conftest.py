import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hemsim.plant import BatteryPack, Cell, HvacUnit, Map2D, ThermalHouse

settings.register_profile("ci", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


def flat_map(value, x=(0.0, 1.0), y=(-40.0, 60.0), name="flat"):
    return Map2D(list(x), list(y), np.full((len(x), len(y)), value), name=name)


def make_pack(ns=16, npar=54, cap=5.0, ocv=3.2, r0=0.01, eta=0.95, soc=0.5, **kw):
    return BatteryPack(ns, npar, cap, flat_map(ocv, name="ocv"), flat_map(r0, name="r0"), eta, soc, **kw)


@pytest.fixture
def cell():
    return Cell.load()


@pytest.fixture
def unit():
    return HvacUnit.for_floor_area(180.0)


@pytest.fixture
def house():
    return ThermalHouse.for_floor_area(180.0, 22.0)


@pytest.fixture(scope="session")
def day_runs():
    """One simulated day (case 1, seed 7) under both controllers, shared across test modules."""
    from hemsim.scenario import ScenarioConfig, build_scenario
    from hemsim.simulation import simulate

    sc = build_scenario(ScenarioConfig(case_id=1, seed=7, days=1))
    return {"scenario": sc, "baseline": simulate(sc, "baseline"), "hem": simulate(sc, "hem")}


VERDICTS: list = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
