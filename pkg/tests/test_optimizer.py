from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_pack
from hemsim.ga import GA_SETTINGS
from hemsim.optimizer import (
    ApplianceRequest,
    HemConfig,
    HemController,
    XevRequest,
    capping_check,
    deferral_cost,
    mpc_step,
    shrink_horizon,
    solve_appliances_es,
    solve_hvac_es,
    solve_xev_es,
    storage_and_grid,
    t_set_for,
    terminal_price,
)
from hemsim.plant import Map2D, battery_soc_step, battery_terminal, dispatch_storage
from toys import enumerate_appliances, enumerate_hvac, enumerate_xev, relative_gap, toy_es, toy_problem

CFG = HemConfig()


def quiet_problem(n, **kw):
    """Cooling problem with no reason to run the HVAC and an empty pack."""
    rng = np.random.default_rng(0)
    p = toy_problem(rng, n, mode="cool", terminal_price=None, grid_charging=True)
    p.comfort_weight = np.zeros(n)
    p.ambient = 18.5
    p.t_a0 = 18.5
    p.p_solar = 0.0
    p.p_nd = 800.0
    p.es = toy_es(0.2)
    from hemsim.optimizer import HvacModel
    from hemsim.plant import HvacUnit, ThermalHouse

    p.hvac = HvacModel.build(HvacUnit.for_floor_area(150), ThermalHouse.for_floor_area(150, 18.5), 18.5, "cool", 600)
    for k, v in kw.items():
        setattr(p, k, v)
    return p


# --- set-points, horizon, deferral -------------------------------------------


def test_setpoint_by_ambient():
    assert t_set_for(25.0, CFG) == 18.0
    assert t_set_for(10.0, CFG) == 22.0


def test_shrink_horizon():
    assert shrink_horizon(0.0, 8 * 3600, 86400) == 8 * 3600
    assert shrink_horizon(86400, 8 * 3600, 86400) == 0
    assert shrink_horizon(86400 - 1800, 8 * 3600, 86400) == 1800


def test_deferral_cost_examples():
    assert deferral_cost(4, range(4, 10), 6e-7) == 0.0
    assert deferral_cost(0, range(10, 16), 6e-7) == pytest.approx(6e-7 * 10 * 6)
    assert deferral_cost(0, range(20, 26), 6e-7) == pytest.approx(2 * deferral_cost(0, range(10, 16), 6e-7))


@given(st.integers(0, 40), st.integers(1, 9), st.integers(0, 30))
def test_deferral_cost_block_identity(enable, c, d):
    assert deferral_cost(enable, range(enable + d, enable + d + c), 1.0) == pytest.approx(c * d)


def test_terminal_price_rules():
    pr = np.array([0.08, 0.12, 0.24])
    assert terminal_price(pr, "none") is None
    assert terminal_price(pr, "min") == 0.08
    assert terminal_price(pr, "mean") == pytest.approx(pr.mean())


def test_no_requests_skip_flags():
    p = quiet_problem(8)
    assert p.skip_xev and p.skip_appliances
    p.xev = XevRequest(0, 0, 8, np.zeros(0))  # plugged in at target
    assert p.skip_xev


# --- horizon model: two routes -----------------------------------------------


@given(st.integers(0, 10_000), st.booleans())
def test_storage_rollout_matches_plant_dispatch(seed, grid_charging):
    rng = np.random.default_rng(seed)
    n = 6
    p = toy_problem(rng, n, grid_charging=grid_charging)
    es = p.es
    pack = make_pack(es.n_series, es.n_parallel, es.cell_capacity, eta=es.eta, soc=es.soc0)
    pack.ocv_map = Map2D([0, 1], [-40, 60], [[3.1, 3.1], [3.4, 3.4]])
    pack.resistance_map = Map2D([0, 1], [-40, 60], [[0.02, 0.02], [0.02, 0.02]])
    load = rng.uniform(0, 9000, n)
    cmd = rng.uniform(-1.5, 1.5, n) * es.i_max
    grid, i_eff, p_es, socs = storage_and_grid(p, load[None], cmd[None])
    for k in range(n):
        net = load[k] - p.p_solar
        limit = max(p.p_cap - net, 0.0)
        if not grid_charging:
            limit = min(limit, p.p_solar)
        i = dispatch_storage(pack, cmd[k], 25.0, net, p.dt, es.soc_min, es.soc_max, limit, absorb_surplus=True)
        pe = battery_terminal(pack, i, 25.0).power
        assert i == pytest.approx(i_eff[0, k], abs=1e-9)
        assert max(net - pe, 0.0) == pytest.approx(grid[0, k], abs=1e-6)
        pack.soc = battery_soc_step(pack, i, p.dt).soc
        assert pack.soc == pytest.approx(socs[0, k + 1], abs=1e-12)


# --- sub-problem 1 ------------------------------------------------------------


def test_idle_hvac_when_nothing_to_gain():
    p = quiet_problem(6, es_levels=np.array([0.0]))
    plan, info, _ = solve_hvac_es(p, CFG, seed=1)
    assert not plan.u_hvac.any()
    assert plan.objective == pytest.approx((p.p_nd * p.price).sum() * p.dt / 3600 / 1000)


@pytest.mark.parametrize("i", range(5))
def test_hvac_es_matches_enumeration_two_levels(i):
    p = toy_problem(np.random.default_rng([11, i]), 4, levels=2)
    _, info, _ = solve_hvac_es(p, CFG, seed=i)
    assert relative_gap(info.objective, enumerate_hvac(p)) <= 0.01


def _enumerated_hvac_plan(p):
    """Exhaustive optimum over HVAC levels with the pack held idle."""
    import itertools

    from hemsim.ga import HvacEsEncoding
    from hemsim.optimizer import hvac_es_objective

    enc = HvacEsEncoding(p.n_steps, p.hvac.levels, -p.es.i_max, p.es.i_max, p.es_levels)
    idx = np.array(list(itertools.product(range(p.hvac.levels.size), repeat=p.n_steps)), dtype=float)
    pop = np.hstack([idx, np.zeros_like(idx)])
    best = idx[int(np.argmin(hvac_es_objective(p, enc)(pop)))].astype(int)
    return p.hvac.power[best]


def test_price_spike_moves_cooling_earlier():
    # hot afternoon: a spike at steps 3-4 pulls HVAC energy into steps 1-2 (pre-cooling)
    from hemsim.optimizer import HvacModel
    from hemsim.plant import HvacUnit, ThermalHouse

    base = toy_problem(np.random.default_rng(5), 6, mode="cool", es_levels=np.array([0.0]), terminal_price=None)
    base.ambient, base.t_a0 = 32.0, 18.0
    base.hvac = HvacModel.build(HvacUnit.for_floor_area(150), ThermalHouse.for_floor_area(150, 18.0), 32.0,
                                "cool", 600)
    base.comfort_weight = np.full(6, 0.005)
    flat = replace(base, price=np.full(6, 0.12))
    spike = replace(base, price=np.array([0.12, 0.12, 0.12, 1.5, 1.5, 0.12]))
    e_flat, e_spike = _enumerated_hvac_plan(flat), _enumerated_hvac_plan(spike)
    assert e_spike[3:5].sum() < e_flat[3:5].sum()
    assert e_spike[1:3].sum() > e_flat[1:3].sum()
    # the GA reaches the same plans
    assert np.allclose(solve_hvac_es(flat, CFG, seed=0)[0].p_hvac, e_flat)
    assert np.allclose(solve_hvac_es(spike, CFG, seed=0)[0].p_hvac, e_spike)


# --- sub-problem 2 ------------------------------------------------------------


def test_xev_charges_in_cheap_window():
    p = quiet_problem(8, es_levels=np.array([0.0]))
    p.price = np.array([0.24, 0.24, 0.08, 0.08, 0.08, 0.24, 0.24, 0.24])
    p.xev = XevRequest(0, 0, 8, np.full(3, 7000.0))
    h, _, _ = solve_hvac_es(p, CFG, seed=0)
    plan, _, _ = solve_xev_es(p, h, None, CFG, seed=0)
    assert np.flatnonzero(plan.u_xev).tolist() == [2, 3, 4]
    assert relative_gap(plan.objective, enumerate_xev(p, h)) <= 0.01


@pytest.mark.parametrize("i", range(3))
def test_xev_matches_enumeration(i):
    from toys import random_xev

    rng = np.random.default_rng([13, i])
    p = toy_problem(rng, 6, xev=random_xev(rng, 6))
    h, _, _ = solve_hvac_es(p, CFG, seed=i)
    _, info, _ = solve_xev_es(p, h, None, CFG, seed=i)
    assert relative_gap(info.objective, enumerate_xev(p, h)) <= 0.01


# --- sub-problem 3 ------------------------------------------------------------


def test_dishwasher_flat_price_starts_immediately():
    p = quiet_problem(48, es_levels=np.array([0.0]))
    p.price = np.full(48, 0.12)
    p.appliances = [ApplianceRequest("dishwasher", 0, 48, 6, np.full(6, 1225.0))]
    h, _, _ = solve_hvac_es(p, CFG, seed=0)
    plan, _, _ = solve_appliances_es(p, h, None, None, CFG, seed=0)
    assert plan.starts == {"dishwasher": 0}


def test_dishwasher_waits_for_cheap_window():
    p = quiet_problem(48, es_levels=np.array([0.0]))
    p.price = np.full(48, 0.24)
    p.price[30:41] = 0.08
    p.appliances = [ApplianceRequest("dishwasher", 0, 48, 6, np.full(6, 1225.0))]
    h, _, _ = solve_hvac_es(p, CFG, seed=0)
    plan, _, _ = solve_appliances_es(p, h, None, None, CFG, seed=0)
    assert 30 <= plan.starts["dishwasher"] <= 35
    assert plan.starts["dishwasher"] == 30  # earliest start in the window: least deferral


def test_appliances_match_enumeration():
    from toys import random_appliances

    rng = np.random.default_rng(17)
    p = toy_problem(rng, 7, appliances=random_appliances(rng, 7))
    h, _, _ = solve_hvac_es(p, CFG, seed=0)
    _, info, _ = solve_appliances_es(p, h, None, None, CFG, seed=0)
    assert relative_gap(info.objective, enumerate_appliances(p, h)) <= 0.01


# --- capping and the full step --------------------------------------------------


def _plan_with(p, **powers):
    h, _, _ = solve_hvac_es(p, CFG, seed=0)
    z = np.zeros(p.n_steps)
    kw = {k: powers.get(k, z) for k in ("p_xev", "p_laundry", "p_dishwasher")}
    grid = h.p_hvac + p.p_nd + sum(kw.values())
    return replace(h, p_grid=grid, **kw)


def test_capping_check_ok():
    p = quiet_problem(8, es_levels=np.array([0.0]))
    assert capping_check(_plan_with(p), p) is None


def test_capping_check_picks_dryer():
    p = quiet_problem(8, es_levels=np.array([0.0]), p_cap=4000.0)
    lau = np.zeros(8)
    lau[5:7] = 3400.0
    dish = np.zeros(8)
    dish[4:8] = 1225.0
    hit = capping_check(_plan_with(p, p_laundry=lau, p_dishwasher=dish), p)
    assert hit.appliance == "laundry" and hit.steps == frozenset({5, 6})


def test_tabu_loop_staggers_appliances():
    p = quiet_problem(12, es_levels=np.array([0.0]))
    p.price = np.full(12, 0.24)
    p.price[2:6] = 0.08
    p.p_cap = p.p_nd + 3500.0
    prof = np.array([425.0, 425.0, 3400.0, 3400.0])
    p.appliances = [ApplianceRequest("laundry", 0, 12, 4, prof),
                    ApplianceRequest("dishwasher", 0, 12, 3, np.full(3, 1225.0))]
    res = mpc_step(p, CFG, seed=0)
    assert res.flags["tabu_passes"] >= 1
    assert (res.plan.p_grid <= p.p_cap + 1e-6).all()
    assert not res.flags["cap_violation"]
    overlap = (res.plan.p_laundry > 3000) & (res.plan.p_dishwasher > 0)
    assert not overlap.any()


def test_all_idle_without_requests():
    p = quiet_problem(8, es_levels=np.array([0.0]))
    res = mpc_step(p, CFG, seed=3)
    assert res.hvac == 0.0 and res.es_current == 0.0 and not res.xev_on and res.start_now == []


def test_mpc_step_deterministic():
    rng = np.random.default_rng(21)
    from toys import random_appliances, random_xev

    p = toy_problem(rng, 8, xev=random_xev(rng, 8), appliances=random_appliances(rng, 8), es_levels=None)
    a = mpc_step(p, CFG, seed=9, step=4)
    b = mpc_step(p, CFG, seed=9, step=4)
    for f in ("u_hvac", "u_es", "u_xev", "u_laundry", "u_dishwasher", "p_grid"):
        assert np.array_equal(getattr(a.plan, f), getattr(b.plan, f))


def test_solve_time_limit():
    rng = np.random.default_rng(4)
    from toys import random_appliances, random_xev

    p = toy_problem(rng, 48, xev=random_xev(rng, 48), appliances=random_appliances(rng, 48), es_levels=None)
    res = mpc_step(p, CFG, seed=0)
    assert all(i.elapsed < 30.0 for i in res.infos)
    assert res.elapsed < 90.0
    assert all(c.time_limit == 30.0 for c in GA_SETTINGS.values())


@given(st.integers(0, 2**20))
def test_accepted_plan_constraints(seed):
    from toys import random_appliances, random_xev

    rng = np.random.default_rng(seed)
    n = 10
    p = toy_problem(rng, n, xev=random_xev(rng, n), appliances=random_appliances(rng, n), es_levels=None)
    res = HemController(CFG, seed).step(p, 0)
    plan, q = res.plan, res.problem
    assert (plan.soc_es >= 0.2 - 1e-9).all() and (plan.soc_es <= 0.8 + 1e-9).all()
    assert (plan.p_grid <= q.p_cap + 1e-6).all() or res.flags["cap_violation"]
    assert all(s.balanced(1e-6) for s in plan.snapshots(q))
    for r in q.appliances:
        u = getattr(plan, "u_" + r.appliance)
        on = np.flatnonzero(u)
        assert on.size == r.completion_steps
        assert on[-1] - on[0] + 1 == r.completion_steps
        assert on[0] >= r.enable_step and on[-1] < r.deadline_step
    x = q.xev
    on = np.flatnonzero(plan.u_xev)
    assert on.size == x.completion_steps
    assert (on >= x.enable_step).all() and (on < x.deadline_step).all()
    if plan.band_excess == 0.0:
        assert (np.abs(plan.temps - q.t_set) <= q.band + 1e-9).all()
