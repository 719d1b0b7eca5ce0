"""Closed-loop simulation of one household under either controller."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from hemsim.baseline import CHARGE, DISCHARGE, SOC_CHARGE_MAX, SOC_DISCHARGE_MIN, BaselineController, DeadbandConfig
from hemsim.metrics import RunLedger
from hemsim.optimizer import ApplianceRequest, HemConfig, HemController, Observation, XevRequest, build_horizon
from hemsim.plant import (
    LEVEL2_CHARGER_W,
    BatteryPack,
    Cell,
    HvacUnit,
    SolarArray,
    ThermalHouse,
    balance_close,
    battery_soc_step,
    battery_terminal,
    dispatch_storage,
    hvac_power,
    load_pv_efficiency,
    solar_power,
    thermal_step,
    xev_charge_step,
)
from hemsim.scenario import DEADLINE_STEPS, Scenario

XEV_TARGET = 0.8

STEP_COLUMNS = (
    "step", "time_s", "price", "ambient", "mode_ambient", "t_set", "indoor", "soc_es", "soc_xev",
    "u_hvac", "u_es", "u_xev", "u_laundry", "u_dishwasher",
    "p_grid", "p_solar", "p_curtailed", "p_solar_stored", "p_es", "p_hvac", "p_xev", "p_laundry",
    "p_dishwasher", "p_nd", "band_excess", "flag_band", "flag_late", "flag_cap",
    "ga_generations", "ga_timeouts", "tabu_passes",
)


@dataclass
class PlantState:
    house: ThermalHouse
    unit: HvacUnit
    es: BatteryPack
    ev: BatteryPack
    solar: SolarArray


@dataclass
class _Pending:
    rid: int
    appliance: str
    enable: int
    deadline: int
    completion: int
    profile: Optional[np.ndarray] = None
    activation: Optional[int] = None
    done: Optional[int] = None
    steps_run: list = field(default_factory=list)
    late: bool = False


def build_plant(sc: Scenario) -> PlantState:
    cell = Cell.load()
    cfg = sc.cfg
    t_set0 = 22.0 if sc.mode_ambient[0] <= 20.0 else 18.0
    indoor = t_set0 if cfg.initial_indoor is None else cfg.initial_indoor
    es_src = "indoor" if sc.case.es_temp_controlled else "ambient"
    es = BatteryPack.from_nominal(sc.case.es_capacity * 1000.0, cfg.es_voltage, cell, soc=cfg.es_initial_soc,
                                  temperature_source=es_src)
    ev = BatteryPack.from_nominal(sc.case.xev_capacity * 1000.0, cfg.ev_voltage, cell, soc=XEV_TARGET,
                                  temperature_source="fixed")
    solar = SolarArray(cfg.panel_area, load_pv_efficiency(), sc.times, sc.irradiance)
    return PlantState(ThermalHouse.for_floor_area(sc.floor_m2, indoor), HvacUnit.for_floor_area(sc.floor_m2),
                      es, ev, solar)


def _xev_power_sequence(ev: BatteryPack, dt: float) -> np.ndarray:
    probe = replace(ev)
    seq = []
    while probe.soc < XEV_TARGET - 1e-12:
        st = xev_charge_step(probe, LEVEL2_CHARGER_W, dt, XEV_TARGET, probe.fixed_temperature)
        if st.energy <= 0:
            break
        seq.append(st.drawn_power)
        probe.soc = st.soc
    return np.array(seq)


def simulate(sc: Scenario, controller: str = "baseline", hem_cfg: Optional[HemConfig] = None,
             seed: Optional[int] = None, progress=None) -> RunLedger:
    """Run ``controller`` ("baseline" or "hem") over the scenario and return its ledger."""
    if controller not in ("baseline", "hem"):
        raise ValueError(f"unknown controller {controller!r}")
    hem_cfg = hem_cfg or HemConfig(dt=sc.dt)
    if hem_cfg.dt != sc.dt:
        raise ValueError("controller and scenario step lengths differ")
    seed = sc.cfg.seed if seed is None else seed
    plant = build_plant(sc)
    n, dt = sc.n_steps, sc.dt
    end_s = sc.times[0] + n * dt
    base = BaselineController(DeadbandConfig(hem_cfg.t_set_heat, hem_cfg.t_set_cool, hem_cfg.band / 2.0))
    hem = HemController(hem_cfg, seed) if controller == "hem" else None

    req_by_step: dict[int, list] = {}
    for r in sc.activities.requests:
        dl = min(r.enable_step + DEADLINE_STEPS, n)
        req_by_step.setdefault(r.enable_step, []).append(
            _Pending(r.request_id, r.appliance, r.enable_step, dl, r.completion_steps, r.profile))
    trips = {t.plug_in_step: t for t in sc.ev_trips}
    n_app = len(sc.activities.requests)

    rows = {c: np.zeros(n) for c in STEP_COLUMNS}
    events: list[_Pending] = []
    pending_app: dict[str, _Pending] = {}
    running: list[tuple[_Pending, int]] = []  # (request, start step)
    ev_req: Optional[_Pending] = None
    wall = []

    for k in range(n):
        t = float(sc.times[k])
        amb, mode_amb = float(sc.ambient[k]), float(sc.mode_ambient[k])
        mode = "heat" if mode_amb <= hem_cfg.t_ref else "cool"
        t_set = hem_cfg.t_set_heat if mode == "heat" else hem_cfg.t_set_cool
        p_nd = float(sc.nd_power[k])
        p_sol = solar_power(plant.solar, t, amb)

        if k in trips:
            trip = trips[k]
            plant.ev.soc = trip.soc0
            ev_req = _Pending(n_app + trip.request_id, "xev", k, min(k + DEADLINE_STEPS, n), 0)
            events.append(ev_req)
        for r in req_by_step.get(k, []):
            if r.appliance in pending_app:
                raise RuntimeError(f"{r.appliance} request at step {k} while another is pending")
            pending_app[r.appliance] = r
            events.append(r)
        ev_active = ev_req is not None and ev_req.done is None
        if ev_active and plant.ev.soc >= XEV_TARGET - 1e-12:
            ev_req.done = k
            ev_active = False
        run_load = np.zeros(n - k)
        for r, s in running:
            off = k - s
            seg = r.profile[off:]
            run_load[:len(seg)] += seg

        flags = {"late": False, "cap": False, "band": 0.0, "gens": 0, "timeouts": 0, "tabu": 0}
        es_temp = plant.es.temperature(amb, plant.house.indoor_temp)
        t0 = time.perf_counter()
        if controller == "baseline":
            u_hvac = float(base.hvac(plant.house.indoor_temp, mode))
            xev_on = ev_active
            starts = list(pending_app)
            es_cmd = None
        else:
            seq = _xev_power_sequence(plant.ev, dt) if ev_active else None
            xreq = None
            if ev_active and seq.size:
                xreq = XevRequest(ev_req.rid, k, max(ev_req.deadline, k + seq.size) if ev_req.deadline - k < seq.size
                                  else ev_req.deadline, seq)
                if ev_req.deadline - k < seq.size:
                    ev_req.late = True
            apps = [ApplianceRequest(r.appliance, max(r.enable, k), max(r.deadline, k + r.completion),
                                     r.completion, r.profile, r.rid) for r in pending_app.values()]
            obs = Observation(k, t, end_s, amb, mode_amb, p_nd, p_sol, plant.house.indoor_temp,
                              sc.prices[k:], xreq, apps, run_load)
            prob = build_horizon(obs, plant.es, es_temp, plant.unit, plant.house, hem_cfg)
            res = hem.step(prob, k)
            u_hvac = res.hvac
            xev_on = res.xev_on and ev_active
            starts = res.start_now
            es_cmd = res.es_current
            flags.update(late=bool(res.flags.get("late")), cap=bool(res.flags.get("cap_violation")),
                         band=float(res.flags.get("band_excess", 0.0)),
                         gens=sum(i.generations for i in res.infos),
                         timeouts=sum(int(i.timed_out) for i in res.infos),
                         tabu=int(res.flags.get("tabu_passes", 0)))
        wall.append(time.perf_counter() - t0)

        # appliances
        u_app = {"laundry": 0, "dishwasher": 0}
        for name in starts:
            r = pending_app.pop(name)
            r.activation = k
            r.done = k + r.completion
            running.append((r, k))
        p_app = {"laundry": 0.0, "dishwasher": 0.0}
        still = []
        for r, s in running:
            off = k - s
            if off < r.completion:
                p_app[r.appliance] += float(r.profile[off])
                u_app[r.appliance] = 1
                r.steps_run.append(k)
                still.append((r, s))
        running = still

        # vehicle
        p_xev = 0.0
        if xev_on:
            st = xev_charge_step(plant.ev, LEVEL2_CHARGER_W, dt, XEV_TARGET, plant.ev.fixed_temperature)
            p_xev = st.drawn_power
            if p_xev > 0:
                if ev_req.activation is None:
                    ev_req.activation = k
                ev_req.steps_run.append(k)
                ev_req.completion += 1
            plant.ev.soc = st.soc
            if plant.ev.soc >= XEV_TARGET - 1e-12:
                ev_req.done = k + 1

        # HVAC and storage
        p_hvac = hvac_power(plant.unit, u_hvac, amb, mode_amb).electrical
        load = p_hvac + p_xev + p_app["laundry"] + p_app["dishwasher"] + p_nd
        net = load - p_sol
        if es_cmd is None:
            rule = base.storage(plant.es.soc, p_sol, load)
            if rule == CHARGE:
                i = dispatch_storage(plant.es, -plant.es.max_current, es_temp, net, dt,
                                     SOC_DISCHARGE_MIN, SOC_CHARGE_MAX, charge_limit=-net)
            elif rule == DISCHARGE:
                i = dispatch_storage(plant.es, plant.es.max_current, es_temp, net, dt,
                                     SOC_DISCHARGE_MIN, SOC_CHARGE_MAX)
            else:
                i = 0.0
        else:
            i = dispatch_storage(plant.es, es_cmd, es_temp, net, dt, hem_cfg.soc_min, hem_cfg.soc_max,
                                 charge_limit=hem_cfg.p_cap - net if hem_cfg.grid_charging
                                 else min(hem_cfg.p_cap - net, p_sol), absorb_surplus=True)
        term = battery_terminal(plant.es, i, es_temp)
        snap = balance_close(p_hvac, p_xev, p_app["laundry"] + p_app["dishwasher"], p_nd, p_sol, term.power)
        stored = min(snap.solar, max(-term.power, 0.0))

        row = rows
        row["step"][k] = k
        row["time_s"][k] = t
        row["price"][k] = sc.prices[k]
        row["ambient"][k] = amb
        row["mode_ambient"][k] = mode_amb
        row["t_set"][k] = t_set
        row["indoor"][k] = plant.house.indoor_temp
        row["soc_es"][k] = plant.es.soc
        row["soc_xev"][k] = plant.ev.soc
        row["u_hvac"][k] = u_hvac
        row["u_es"][k] = i
        row["u_xev"][k] = float(xev_on and p_xev > 0)
        row["u_laundry"][k] = u_app["laundry"]
        row["u_dishwasher"][k] = u_app["dishwasher"]
        row["p_grid"][k] = snap.grid
        row["p_solar"][k] = snap.solar
        row["p_curtailed"][k] = snap.curtailed
        row["p_solar_stored"][k] = stored
        row["p_es"][k] = snap.storage
        row["p_hvac"][k] = p_hvac
        row["p_xev"][k] = p_xev
        row["p_laundry"][k] = p_app["laundry"]
        row["p_dishwasher"][k] = p_app["dishwasher"]
        row["p_nd"][k] = p_nd
        row["band_excess"][k] = flags["band"]
        row["flag_late"][k] = float(flags["late"] or (ev_req is not None and ev_req.late and xev_on))
        row["flag_cap"][k] = float(flags["cap"])
        row["ga_generations"][k] = flags["gens"]
        row["ga_timeouts"][k] = flags["timeouts"]
        row["tabu_passes"][k] = flags["tabu"]

        # advance plant
        plant.house.indoor_temp = thermal_step(plant.house, plant.unit, u_hvac, amb, dt, mode)
        plant.es.soc = battery_soc_step(plant.es, i, dt).soc
        dev = abs(plant.house.indoor_temp - t_set) - hem_cfg.band
        row["flag_band"][k] = float(dev > 1e-9)
        if progress is not None:
            progress(k, n)

    ev_list = []
    for e in sorted(events, key=lambda e: e.rid):
        ev_list.append({
            "request_id": e.rid,
            "appliance": e.appliance,
            "enable": e.enable,
            "deadline": e.deadline,
            "completion_steps": e.completion if e.appliance != "xev" else len(e.steps_run),
            "activation": -1 if e.activation is None else e.activation,
            "done": -1 if e.done is None else e.done,
            "steps_run": " ".join(map(str, e.steps_run)),
            "late": int(e.late),
        })
    meta = {
        "controller": controller,
        "case": sc.case.id,
        "location": sc.case.location,
        "seed": int(seed),
        "days": sc.cfg.days,
        "start_day": sc.cfg.start_day,
        "dt": dt,
        "house_area_ft2": sc.house_area_ft2,
        "panel_area_m2": sc.cfg.panel_area,
        "es_cells": [plant.es.n_series, plant.es.n_parallel],
        "xev_cells": [plant.ev.n_series, plant.ev.n_parallel],
        "fingerprint": sc.fingerprint(),
    }
    return RunLedger(rows, ev_list, meta, {"step_wall_s": wall})
