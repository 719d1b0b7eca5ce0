import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from conftest import flat_map, make_pack
from hemsim.plant import (
    LEVEL2_CHARGER_W,
    BatteryPack,
    DomainError,
    HvacUnit,
    InvalidCommandError,
    Map2D,
    SolarArray,
    ThermalHouse,
    balance_close,
    battery_soc_step,
    battery_terminal,
    charge_steps_needed,
    current_for_power,
    dispatch_storage,
    hvac_power,
    load_pv_efficiency,
    pack_size,
    solar_power,
    thermal_step,
    xev_charge_step,
)

# --- photovoltaics ----------------------------------------------------------


def _array(eta=0.15, area=20.0, g=1000.0):
    times = np.array([0.0, 3600.0, 7200.0])
    irr = np.array([0.0, g, g])
    return SolarArray(area, flat_map(eta, x=(-40, 60), y=(0, 1400)), times, irr)


def test_solar_zero_at_night():
    assert solar_power(_array(), 0.0, 20.0) == 0.0


def test_solar_hand_evaluation():
    # 1000 W/m2 on 20 m2 at 15 % efficiency
    assert solar_power(_array(), 3600.0, 25.0) == pytest.approx(3000.0, rel=1e-12)


@given(st.floats(0, 1400), st.floats(0, 7200))
def test_solar_identity_scaling(g, t):
    arr = _array(eta=1.0, area=1.0, g=g)
    assert solar_power(arr, t, 20.0) == pytest.approx(arr.irradiance_at(t), abs=1e-9)


def test_solar_outside_trace_raises():
    with pytest.raises(DomainError):
        solar_power(_array(), 9000.0, 20.0)


def test_pv_map_bundled_is_physical():
    m = load_pv_efficiency()
    assert np.all((m.values > 0) & (m.values < 0.25))
    # hotter cells convert less
    assert m(35.0, 800.0) < m(5.0, 800.0)


def test_map2d_nodes_and_domain():
    m = Map2D([0, 1], [0, 10], [[0, 10], [1, 11]])
    assert m(1, 10) == 11
    assert m(0.5, 5) == pytest.approx(5.5)
    with pytest.raises(DomainError):
        m(2, 0)


# --- batteries --------------------------------------------------------------


def test_pack_size_nominal_storage(cell):
    assert pack_size(13_500, 50, cell) == (16, 54)
    assert pack_size(14_000, 50, cell) == (16, 56)
    assert pack_size(60_000, 350, cell) == (110, 35)


def test_open_circuit():
    pack = make_pack()
    term = battery_terminal(pack, 0.0, 25.0)
    assert term.power == 0.0
    assert term.voltage == pytest.approx(16 * 3.2)


def test_lossless_symmetry():
    pack = make_pack(r0=1e-15, eta=1.0)
    dis = battery_terminal(pack, 50.0, 25.0).power
    chg = battery_terminal(pack, -50.0, 25.0).power
    assert abs(dis + chg) <= 1e-9 * abs(dis)


@given(st.floats(0.5, 200.0), st.floats(0.5, 0.999))
def test_round_trip_loses_energy(i, eta):
    pack = make_pack(eta=eta)
    out = battery_terminal(pack, i, 25.0).power
    inp = -battery_terminal(pack, -i, 25.0).power
    assert out < inp


@given(st.floats(-5000.0, 5000.0))
def test_current_for_power_inverts_terminal(p):
    pack = make_pack()
    i = current_for_power(pack, p, 25.0)
    assert battery_terminal(pack, i, 25.0).power == pytest.approx(p, abs=1e-6)


def test_soc_unchanged_at_zero_current():
    assert battery_soc_step(make_pack(soc=0.37), 0.0, 600).soc == 0.37


def test_soc_one_c_discharge_saturates():
    pack = make_pack(ns=1, npar=1, soc=0.8)
    step = battery_soc_step(pack, 5.0, 3600.0)
    assert step.soc == 0.0 and step.saturated


def test_soc_inverse_step():
    pack = make_pack(soc=0.5)
    dt = 600.0
    i = pack.n_parallel * pack.cell_capacity * 3600.0 / dt * 0.1
    assert battery_soc_step(pack, i, dt).soc == pytest.approx(0.4, abs=1e-12)


@given(st.floats(0, 1), st.floats(-2000, 2000), st.floats(1, 7200))
def test_soc_stays_in_unit_interval(soc, i, dt):
    s = battery_soc_step(make_pack(soc=soc), i, dt).soc
    assert 0.0 <= s <= 1.0


@given(st.floats(0.2, 0.8), st.floats(-200, 200), st.floats(-8000, 8000), st.floats(0, 20000))
def test_dispatch_respects_bounds(soc, i, net, limit):
    pack = make_pack(soc=soc)
    j = dispatch_storage(pack, i, 25.0, net, 600.0, 0.2, 0.8, charge_limit=limit, absorb_surplus=True)
    assert abs(j) <= pack.max_current + 1e-9
    nxt = battery_soc_step(pack, j, 600.0).soc
    assert 0.2 - 1e-9 <= nxt <= 0.8 + 1e-9
    p = battery_terminal(pack, j, 25.0).power
    if p > 0:
        assert p <= max(net, 0.0) + 1e-6  # no export
    elif net >= 0:
        assert -p <= limit + 1e-6


# --- HVAC and envelope -------------------------------------------------------


def _unit(**kw):
    base = dict(mass_flow=0.5, supply_temp_cool=15.0, supply_temp_heat=35.0, cp_air=1005.0,
                cop_delta_t=[0.0, 40.0], cop_values=[3.0, 3.0], shr=0.8, pressure_drop=250.0,
                fan_eff=0.7, air_density=1.2)
    base.update(kw)
    return HvacUnit(**base)


def test_hvac_off_draws_nothing():
    assert hvac_power(_unit(), 0, 30.0).electrical == 0.0


def test_hvac_cooling_hand_evaluation():
    u = _unit()
    p = hvac_power(u, 1, 30.0)  # dT = 15 K
    assert p.electrical - u.fan_power == pytest.approx(0.5 * 1005 * 15 / (0.8 * 3), rel=1e-12)
    assert p.electrical - u.fan_power == pytest.approx(3140.625)


def test_fan_power_hand_evaluation():
    assert _unit().fan_power == pytest.approx(0.5 * 250 / (0.7 * 1.2))
    assert _unit().fan_power == pytest.approx(148.81, abs=0.01)


def test_heating_half_command_rejected():
    with pytest.raises(InvalidCommandError):
        hvac_power(_unit(), 0.5, 5.0)
    with pytest.raises(InvalidCommandError):
        hvac_power(_unit(), 0.3, 30.0)


@given(st.floats(21, 45), st.floats(0.01, 10))
def test_hvac_power_monotone_in_delta_t(amb, d):
    u = _unit()
    assert hvac_power(u, 1, amb + d).electrical >= hvac_power(u, 1, amb).electrical


def test_thermal_equilibrium(unit, house):
    h = replace(house, indoor_temp=27.0)
    assert thermal_step(h, unit, 0, 27.0, 600.0) == pytest.approx(27.0, abs=1e-12)


def test_thermal_decay_without_undershoot(unit, house):
    h = replace(house, indoor_temp=26.0)
    t = thermal_step(h, unit, 0, 20.0, 600.0)
    assert 20.0 < t < 26.0
    assert thermal_step(h, unit, 0, 20.0, 1e9) == pytest.approx(20.0)


def test_thermal_heating_fixed_point(unit, house):
    # dT/dt = 0: g_h (T_sup - T) + g_e (T_amb - T) = 0
    g_h = unit.mass_flow * unit.cp_air
    g_e = 1.0 / house.thermal_resistance
    amb = 0.0
    t_eq = (g_h * unit.supply_temp_heat + g_e * amb) / (g_h + g_e)
    assert thermal_step(house, unit, 1, amb, 1e8, mode="heat") == pytest.approx(t_eq, rel=1e-9)


@given(st.floats(5, 35), st.sampled_from([0, 1]), st.floats(-10, 40), st.floats(1, 3600))
def test_thermal_step_contractive(t0, cmd, amb, dt):
    unit = HvacUnit.for_floor_area(180.0)
    house = ThermalHouse.for_floor_area(180.0, t0)
    mode = "heat" if amb <= 20 else "cool"
    g_h = cmd * unit.mass_flow * unit.cp_air
    g_e = 1.0 / house.thermal_resistance
    t_eq = (g_h * unit.supply_temp(mode) + g_e * amb) / (g_h + g_e)
    t1 = thermal_step(house, unit, cmd, amb, dt, mode)
    if abs(t0 - t_eq) > 1e-9:
        assert abs(t1 - t_eq) < abs(t0 - t_eq)


# --- vehicle charging -------------------------------------------------------


def _ev(cell, soc=0.2):
    return BatteryPack.from_nominal(60_000, 350, cell, soc=soc, temperature_source="fixed")


def test_xev_at_target_draws_nothing(cell):
    step = xev_charge_step(_ev(cell, 0.8), LEVEL2_CHARGER_W, 600.0)
    assert step.drawn_power == 0.0 and step.soc == 0.8


def _full_charge(cell):
    pack = _ev(cell)
    steps = []
    while pack.soc < 0.8 - 1e-12:
        s = xev_charge_step(pack, LEVEL2_CHARGER_W, 600.0)
        pack.soc = s.soc
        steps.append(s)
    return pack, steps


def test_xev_full_charge_energy_bookkeeping(cell):
    pack, steps = _full_charge(cell)
    stored_wh = 0.6 * pack.capacity_ah * pack.n_series * cell.nominal_voltage
    assert sum(s.energy for s in steps) >= 0.6 * 60_000 / 0.95 * 0.999
    assert sum(s.energy for s in steps) >= stored_wh / 0.95


def test_xev_power_limits_and_cv_tail(cell):
    _, steps = _full_charge(cell)
    powers = [s.drawn_power for s in steps]
    assert max(powers) <= LEVEL2_CHARGER_W + 1e-9
    cv = [s.drawn_power for s in steps if s.cv]
    assert all(b <= a + 1e-9 for a, b in zip(cv, cv[1:]))


def test_xev_completion_steps(cell):
    # energy-bookkeeping estimate: ceil(36 kWh / 0.95 / 7.56 kW / (1/6 h)) = 31
    estimate = math.ceil(36.0 / 0.95 / 7.56 / (600 / 3600))
    n = charge_steps_needed(_ev(cell), 0.8, 600.0)
    assert estimate == 31
    assert n == 32  # resistive loss and CV tail add one step
    assert abs(n - estimate) <= 2


# --- power balance ------------------------------------------------------------


def test_balance_all_zero():
    assert balance_close().grid == 0.0


def test_balance_discharging_storage():
    assert balance_close(non_deferrable=5000, solar=2000, storage=1000).grid == pytest.approx(2000)


def test_balance_charging_sign_convention():
    snap = balance_close(non_deferrable=1000, solar=3000, storage=-2000)
    assert snap.grid == pytest.approx(0.0) and snap.curtailed == 0.0


def test_balance_curtails_instead_of_export():
    snap = balance_close(non_deferrable=1000, solar=3000)
    assert snap.grid == 0.0 and snap.curtailed == pytest.approx(2000)


@given(*[st.floats(0, 10_000)] * 5, st.floats(-5000, 5000))
def test_balance_residual(h, x, d, n, s, es):
    assume(es <= h + x + d + n)  # dispatch never discharges beyond the load
    snap = balance_close(h, x, d, n, s, es)
    assert snap.balanced(1e-6) and snap.grid >= 0.0
