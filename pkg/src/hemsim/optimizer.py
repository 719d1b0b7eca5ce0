"""Sequential receding-horizon HEM strategy.

Each control step builds a :class:`HorizonProblem` from the current
observation (disturbances held constant over the horizon, prices taken
from the tariff), then solves three sub-problems in order:

1. HVAC and storage, minimising grid cost plus temperature discomfort;
2. vehicle charging and storage, with the HVAC power of (1) fixed;
3. laundry, dishwasher and storage, with (1) and (2) fixed.

The combined plan is checked against the grid power cap; the largest
deferrable contributor in the violation window is barred from those
steps (tabu) and the affected sub-problems are re-solved. Only the first
step of the final plan is applied.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from hemsim.ga import (
    GA_SETTINGS,
    ActivationEncoding,
    GaConfig,
    HvacEsEncoding,
    InfeasibleRequestError,
    StartTimeEncoding,
    activation_window,
    block_starts,
    evolve,
    init_population,
)
from hemsim.plant import BatteryPack, HvacUnit, ThermalHouse, hvac_power, thermal_coefficients

DEFERRABLE = ("xev", "laundry", "dishwasher")


@dataclass
class HemConfig:
    horizon_h: float = 8.0
    dt: float = 600.0
    p_cap: float = 14000.0
    band: float = 1.0
    t_ref: float = 20.0
    t_set_heat: float = 22.0
    t_set_cool: float = 18.0
    soc_min: float = 0.2
    soc_max: float = 0.8
    deferral_weight: float = 6e-7  # $ per step of delay per completion step
    comfort_weight: float = 0.005  # $ / K^2 per step at zero stress
    comfort_norm: float = 10.0  # K
    violation_weight: float = 5.0  # $ / K per step outside the band
    warm_start: bool = True
    grid_charging: bool = False  # storage may charge from the grid, not only from solar
    soc_holding: float = 0.05  # tie-break credit on the SOC trajectory, fraction of the terminal price
    terminal_value: str = "mean"  # price of energy left in storage at the horizon end: mean | min | none
    ga: dict = field(default_factory=lambda: dict(GA_SETTINGS))

    @property
    def n_horizon(self) -> int:
        return int(round(self.horizon_h * 3600.0 / self.dt))


# ---------------------------------------------------------------------------
# Problem data
# ---------------------------------------------------------------------------


@dataclass
class ApplianceRequest:
    """A deferrable request. ``deadline_step`` is exclusive."""

    appliance: str
    enable_step: int
    deadline_step: int
    completion_steps: int
    profile: Optional[np.ndarray] = None  # W per block step
    request_id: int = -1

    def __post_init__(self):
        if self.enable_step > self.deadline_step:
            raise ValueError("enable_step must not exceed deadline_step")
        if self.completion_steps > self.deadline_step - self.enable_step + 1:
            raise ValueError("completion_steps exceed the request window")
        if self.profile is not None:
            self.profile = np.asarray(self.profile, dtype=float)

    def shifted(self, offset: int) -> "ApplianceRequest":
        return replace(self, enable_step=self.enable_step - offset, deadline_step=self.deadline_step - offset)


@dataclass
class XevRequest:
    request_id: int
    enable_step: int
    deadline_step: int  # exclusive
    power_seq: np.ndarray  # W drawn at the j-th charging step until target

    @property
    def completion_steps(self) -> int:
        return len(self.power_seq)

    def shifted(self, offset: int) -> "XevRequest":
        return replace(self, enable_step=self.enable_step - offset, deadline_step=self.deadline_step - offset)


@dataclass
class EsModel:
    """Stationary pack frozen at the horizon's temperature."""

    soc_nodes: np.ndarray
    ocv: np.ndarray
    r0: np.ndarray
    n_series: int
    n_parallel: int
    cell_capacity: float
    eta: float
    i_max: float
    soc_min: float
    soc_max: float
    soc0: float

    @classmethod
    def from_pack(cls, pack: BatteryPack, temp: float, soc_min: float, soc_max: float) -> "EsModel":
        return cls(pack.ocv_map.x, pack.ocv_map.slice_y(temp), pack.resistance_map.slice_y(temp),
                   pack.n_series, pack.n_parallel, pack.cell_capacity, pack.round_trip_eff,
                   pack.max_current, soc_min, soc_max, pack.soc)


@dataclass
class HvacModel:
    mode: str
    levels: np.ndarray
    power: np.ndarray  # W per level
    a: np.ndarray  # T' = a T + b per level
    b: np.ndarray

    @classmethod
    def build(cls, unit: HvacUnit, house: ThermalHouse, ambient: float, mode: str, dt: float) -> "HvacModel":
        levels = np.array([0.0, 1.0] if mode == "heat" else [0.0, 0.5, 1.0])
        mode_amb = -1e9 if mode == "heat" else 1e9
        power = np.array([hvac_power(unit, float(u) if u != 0.5 else 0.5, ambient, mode_amb).electrical
                          for u in levels])
        ab = np.array([thermal_coefficients(house, unit, float(u), ambient, dt, mode) for u in levels])
        return cls(mode, levels, power, ab[:, 0], ab[:, 1])


@dataclass
class HorizonProblem:
    n_steps: int
    dt: float
    price: np.ndarray  # $/kWh
    ambient: float
    p_nd: float
    p_solar: float
    t_set: float
    comfort_weight: np.ndarray
    deferral_weight: float
    band: float
    p_cap: float
    violation_weight: float
    t_a0: float
    hvac: HvacModel
    es: EsModel
    season: str = "summer"
    xev: Optional[XevRequest] = None
    appliances: list = field(default_factory=list)
    base_load: Optional[np.ndarray] = None  # W, appliances already running
    es_levels: Optional[np.ndarray] = None
    terminal_price: Optional[float] = None  # $/kWh credited for stored energy at the horizon end
    soc_holding: float = 0.0
    grid_charging: bool = True

    def __post_init__(self):
        if self.n_steps < 1 or self.dt <= 0:
            raise ValueError("horizon needs n_steps >= 1 and dt > 0")
        if self.base_load is None:
            self.base_load = np.zeros(self.n_steps)
        if self.es.soc_min > self.es.soc_max:
            raise ValueError("storage SOC bounds are not ordered")

    @property
    def skip_xev(self) -> bool:
        return self.xev is None or self.xev.completion_steps == 0

    @property
    def skip_appliances(self) -> bool:
        return not self.appliances


@dataclass
class Observation:
    """What the controller sees at the start of a control step (absolute step indices)."""

    step: int
    time_s: float
    end_s: float
    ambient: float
    mode_ambient: float
    p_nd: float
    p_solar: float
    indoor_temp: float
    prices: np.ndarray  # one per step from now, at least the horizon length
    xev: Optional[XevRequest] = None
    appliances: list = field(default_factory=list)
    running_load: Optional[np.ndarray] = None


def terminal_price(prices, rule: str) -> Optional[float]:
    if rule == "none":
        return None
    if rule == "min":
        return float(np.min(prices))
    if rule == "mean":
        return float(np.mean(prices))
    raise ValueError(f"unknown terminal value rule {rule!r}")


def t_set_for(mode_ambient: float, cfg: HemConfig) -> float:
    return cfg.t_set_heat if mode_ambient <= cfg.t_ref else cfg.t_set_cool


def shrink_horizon(clock: float, t_h: float, t_end: float) -> float:
    """Horizon length at time ``clock``; truncated so it never runs past ``t_end``."""
    if t_end < clock:
        raise ValueError("clock is past the end of the simulation")
    return t_end - clock if clock + t_h > t_end else t_h


def build_horizon(obs: Observation, es_pack: BatteryPack, es_temp: float, unit: HvacUnit,
                  house: ThermalHouse, cfg: HemConfig) -> Optional[HorizonProblem]:
    """Freeze the current disturbances into a horizon problem; None once the run has ended."""
    t_h = shrink_horizon(obs.time_s, cfg.horizon_h * 3600.0, obs.end_s)
    n = int(math.floor(t_h / cfg.dt + 1e-9))
    if n < 1:
        return None
    mode = "heat" if obs.mode_ambient <= cfg.t_ref else "cool"
    t_set = t_set_for(obs.mode_ambient, cfg)
    c_t = cfg.comfort_weight * (1.0 + abs(obs.ambient - t_set) / cfg.comfort_norm)
    base = np.zeros(n)
    if obs.running_load is not None:
        m = min(n, len(obs.running_load))
        base[:m] = obs.running_load[:m]
    xev = obs.xev.shifted(obs.step) if obs.xev is not None else None
    apps = [a.shifted(obs.step) for a in obs.appliances]
    house_now = replace(house, indoor_temp=obs.indoor_temp)
    return HorizonProblem(
        n_steps=n,
        dt=cfg.dt,
        price=np.asarray(obs.prices[:n], dtype=float),
        terminal_price=terminal_price(obs.prices[:n], cfg.terminal_value),
        soc_holding=cfg.soc_holding,
        grid_charging=cfg.grid_charging,
        ambient=obs.ambient,
        p_nd=obs.p_nd,
        p_solar=obs.p_solar,
        t_set=t_set,
        comfort_weight=np.full(n, c_t),
        deferral_weight=cfg.deferral_weight,
        band=cfg.band,
        p_cap=cfg.p_cap,
        violation_weight=cfg.violation_weight,
        t_a0=obs.indoor_temp,
        hvac=HvacModel.build(unit, house_now, obs.ambient, mode, cfg.dt),
        es=EsModel.from_pack(es_pack, es_temp, cfg.soc_min, cfg.soc_max),
        season="winter" if mode == "heat" else "summer",
        xev=xev,
        appliances=apps,
        base_load=base,
    )


# ---------------------------------------------------------------------------
# Vectorised horizon models
# ---------------------------------------------------------------------------


def storage_and_grid(p: HorizonProblem, load: np.ndarray, i_cmd: np.ndarray):
    """Roll the storage pack over the horizon for a population of current commands.

    ``load`` and ``i_cmd`` have shape (P, N). Commands are clipped so the
    SOC stays in bounds, discharge never exceeds the net load (no export)
    and charging never lifts the grid above the cap. Returns grid power,
    effective current, storage bus power and SOC trajectory (P, N + 1).
    """
    es = p.es
    P, N = i_cmd.shape
    per_amp = p.dt / (3600.0 * es.cell_capacity * es.n_parallel)
    soc = np.full(P, es.soc0)
    socs = np.empty((P, N + 1))
    socs[:, 0] = soc
    grid = np.empty((P, N))
    i_eff = np.empty((P, N))
    p_es = np.empty((P, N))
    ns, npar, eta = es.n_series, es.n_parallel, es.eta
    for k in range(N):
        voc = np.interp(soc, es.soc_nodes, es.ocv)
        r0 = np.interp(soc, es.soc_nodes, es.r0)
        a = ns * voc
        kk = ns * r0 / npar
        i = np.clip(i_cmd[:, k], -es.i_max, es.i_max)
        i = np.minimum(i, np.maximum(soc - es.soc_min, 0.0) / per_amp)
        i = np.maximum(i, -np.maximum(es.soc_max - soc, 0.0) / per_amp)
        net = load[:, k] - p.p_solar
        # discharge: (a - kk i) i eta <= max(net, 0)
        q = np.maximum(net, 0.0) / eta
        disc = np.maximum(a * a - 4.0 * kk * q, 0.0)
        i = np.minimum(i, (a - np.sqrt(disc)) / (2.0 * kk))
        # charge: (a + kk j) j / eta <= max(cap - net, 0)
        q = np.maximum(p.p_cap - net, 0.0)
        if not p.grid_charging:
            q = np.minimum(q, p.p_solar)
        q = q * eta
        j = (-a + np.sqrt(a * a + 4.0 * kk * q)) / (2.0 * kk)
        i = np.maximum(i, -j)
        # surplus solar goes to storage before it is curtailed
        q = np.maximum(-net, 0.0) * eta
        j = (-a + np.sqrt(a * a + 4.0 * kk * q)) / (2.0 * kk)
        room = np.minimum(np.maximum(es.soc_max - soc, 0.0) / per_amp, es.i_max)
        i = np.where(net < 0, np.minimum(i, -np.minimum(j, room)), i)
        v = a - kk * i
        pe = np.where(i > 0, v * i * eta, v * i / eta)
        grid[:, k] = np.maximum(net - pe, 0.0)
        i_eff[:, k] = i
        p_es[:, k] = pe
        soc = soc - i * per_amp
        socs[:, k + 1] = soc
    return grid, i_eff, p_es, socs


def grid_cost(p: HorizonProblem, grid: np.ndarray) -> np.ndarray:
    return (grid * p.price).sum(axis=-1) * (p.dt / 3600.0) / 1000.0


def temperature_rollout(p: HorizonProblem, idx: np.ndarray):
    """Indoor temperature after each step for HVAC level indices (P, N) -> (P, N)."""
    P, N = idx.shape
    t = np.full(P, p.t_a0)
    out = np.empty((P, N))
    a, b = p.hvac.a, p.hvac.b
    for k in range(N):
        t = a[idx[:, k]] * t + b[idx[:, k]]
        out[:, k] = t
    return out


def energy_cost(p: HorizonProblem, grid: np.ndarray, socs: np.ndarray) -> np.ndarray:
    """Grid cost less the credit for energy held in storage.

    The terminal part values energy added over the horizon; a small holding
    part on the SOC trajectory makes storing sooner win ties, which the
    constant-disturbance forecast otherwise leaves undecided.
    """
    cost = grid_cost(p, grid)
    if p.terminal_price is None:
        return cost
    es = p.es
    wh_per_soc = es.n_series * float(np.mean(es.ocv)) * es.cell_capacity * es.n_parallel
    gain = socs[:, -1] - es.soc0
    if p.soc_holding:
        gain = gain + p.soc_holding * (socs[:, 1:] - es.soc0).mean(axis=1)
    return cost - p.terminal_price * es.eta * gain * wh_per_soc / 1000.0


def comfort_terms(p: HorizonProblem, temps: np.ndarray):
    dev = temps - p.t_set
    comfort = (p.comfort_weight * dev * dev).sum(axis=-1)
    excess = np.maximum(np.abs(dev) - p.band, 0.0)
    return comfort, excess


def deferral_cost(enable_step: int, activation_steps, weight: float) -> float:
    """Linear delay penalty: weight * sum_j (k_j - (enable + j)) over sorted activations.

    For a contiguous block of C steps starting ``d`` steps after enable this
    is ``weight * C * d``.
    """
    k = np.sort(np.asarray(activation_steps, dtype=int))
    if k.size and k[0] < enable_step:
        raise ValueError(f"activation at step {k[0]} precedes enable step {enable_step}")
    return float(weight * (k - (enable_step + np.arange(k.size))).sum())


def _deferral_sets(acts: np.ndarray, enable: int, weight: float) -> np.ndarray:
    c = acts.shape[1]
    return weight * (acts - (enable + np.arange(c))[None, :]).sum(axis=1)


# ---------------------------------------------------------------------------
# Plans
# ---------------------------------------------------------------------------


@dataclass
class ControlPlan:
    u_hvac: np.ndarray
    u_es: np.ndarray
    u_xev: np.ndarray
    u_laundry: np.ndarray
    u_dishwasher: np.ndarray
    p_hvac: np.ndarray
    p_xev: np.ndarray
    p_laundry: np.ndarray
    p_dishwasher: np.ndarray
    p_es: np.ndarray
    p_grid: np.ndarray
    temps: np.ndarray
    soc_es: np.ndarray
    objective: float
    band_excess: float = 0.0  # K, worst predicted excursion beyond the band
    starts: dict = field(default_factory=dict)
    activations: Optional[np.ndarray] = None
    hvac_idx: Optional[np.ndarray] = None

    def snapshots(self, p: HorizonProblem):
        from hemsim.plant import PowerSnapshot

        out = []
        for k in range(len(self.u_hvac)):
            load = (self.p_hvac[k] + self.p_xev[k] + self.p_laundry[k] + self.p_dishwasher[k]
                    + p.p_nd + p.base_load[k])
            solar_used = min(p.p_solar, load - self.p_es[k])
            out.append(PowerSnapshot(self.p_grid[k], max(solar_used, 0.0), self.p_es[k], self.p_hvac[k],
                                     self.p_xev[k], self.p_laundry[k] + self.p_dishwasher[k] + p.base_load[k],
                                     p.p_nd, p.p_solar - max(solar_used, 0.0)))
        return out


@dataclass
class SolveInfo:
    name: str
    generations: int = 0
    stalled: int = 0
    timed_out: bool = False
    elapsed: float = 0.0
    objective: float = float("nan")
    skipped: bool = False


def _config_for(cfg: HemConfig, name: str, season: str) -> GaConfig:
    if name == "hvac":
        return cfg.ga["hvac_" + season]
    return cfg.ga[name]


def storage_seeds(p: HorizonProblem, load: np.ndarray) -> np.ndarray:
    """Rule-based storage schedules used to seed the population.

    Rows: idle; charge at the cheapest price and discharge otherwise; and
    follow the solar surplus (charge with the surplus, discharge on deficit).
    """
    es = p.es
    n = p.n_steps
    idle = np.zeros(n)
    greedy = np.where(p.price <= p.price.min(), -es.i_max, es.i_max)
    net = load - p.p_solar
    v = es.n_series * float(np.mean(es.ocv))
    follow = np.where(net < 0, np.maximum(net / v, -es.i_max), es.i_max)
    return np.vstack([idle, greedy, follow])


def _run_ga(encoding, objective, gcfg: GaConfig, seed, seeds, es_seeds=None):
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    s_init, s_evo, s_seed = ss.spawn(3)
    rows = [] if seeds is None else list(np.atleast_2d(seeds))
    if es_seeds is not None and len(es_seeds):
        base = encoding.sample(np.random.default_rng(s_seed), len(es_seeds))
        base[:, -es_seeds.shape[1]:] = es_seeds
        rows.extend(base)
    seeds = np.array(rows) if rows else None
    pop = init_population(gcfg, encoding, s_init, seeds)
    return evolve(pop, gcfg, objective, s_evo, encoding)


def hvac_es_objective(p: HorizonProblem, enc: HvacEsEncoding):
    load_fixed = p.p_nd + p.base_load

    def objective(pop):
        d = enc.decode(pop)
        idx = d["hvac_idx"]
        temps = temperature_rollout(p, idx)
        comfort, excess = comfort_terms(p, temps)
        load = p.hvac.power[idx] + load_fixed
        grid, _, _, socs = storage_and_grid(p, load, d["es"])
        return energy_cost(p, grid, socs) + comfort + p.violation_weight * (excess + excess ** 2).sum(axis=1)

    return objective


def solve_hvac_es(p: HorizonProblem, cfg: Optional[HemConfig] = None, seed=0, seeds=None):
    """Sub-problem 1: HVAC levels and storage currents over the horizon."""
    cfg = cfg or HemConfig()
    enc = HvacEsEncoding(p.n_steps, p.hvac.levels, -p.es.i_max, p.es.i_max, p.es_levels)
    obj = hvac_es_objective(p, enc)
    res = _run_ga(enc, obj, _config_for(cfg, "hvac", p.season), seed, seeds,
                  storage_seeds(p, p.p_nd + p.base_load + p.hvac.power[0]))
    d = enc.decode(res.best[None, :])
    idx = d["hvac_idx"]
    temps = temperature_rollout(p, idx)
    load = p.hvac.power[idx] + p.p_nd + p.base_load
    grid, i_eff, p_es, socs = storage_and_grid(p, load, d["es"])
    _, excess = comfort_terms(p, temps)
    z = np.zeros(p.n_steps)
    plan = ControlPlan(d["hvac"][0], i_eff[0], z.astype(int), z.astype(int), z.astype(int), p.hvac.power[idx[0]],
                       z.copy(), z.copy(), z.copy(), p_es[0], grid[0], temps[0], socs[0], res.objective,
                       float(excess.max()), hvac_idx=idx[0])
    info = SolveInfo("hvac", res.generations, res.stalled, res.timed_out, res.elapsed, res.objective)
    return plan, info, res.best


def _xev_power(p: HorizonProblem, acts: np.ndarray) -> np.ndarray:
    P = acts.shape[0]
    power = np.zeros((P, p.n_steps))
    if acts.shape[1]:
        np.put_along_axis(power, acts, np.broadcast_to(p.xev.power_seq, acts.shape), axis=1)
    return power


def xev_window(p: HorizonProblem, tabu: Optional[dict] = None) -> np.ndarray:
    x = p.xev
    return activation_window(x.enable_step, x.deadline_step, p.n_steps, (tabu or {}).get("xev", ()))


def xev_es_objective(p: HorizonProblem, enc: ActivationEncoding, fixed: np.ndarray):
    enable = p.xev.enable_step

    def objective(pop):
        d = enc.decode(pop)
        load = fixed[None, :] + _xev_power(p, d["activations"])
        grid, _, _, socs = storage_and_grid(p, load, d["es"])
        return energy_cost(p, grid, socs) + _deferral_sets(d["activations"], enable, p.deferral_weight)

    return objective


def solve_xev_es(p: HorizonProblem, hvac_plan: ControlPlan, tabu: Optional[dict] = None,
                 cfg: Optional[HemConfig] = None, seed=0, seeds=None):
    """Sub-problem 2: vehicle activation steps and storage currents, HVAC power fixed."""
    cfg = cfg or HemConfig()
    x = p.xev
    allowed = xev_window(p, tabu)
    c = x.completion_steps
    if c > allowed.size:
        earliest = int(allowed[c - 1]) + 1 if allowed.size >= c else x.enable_step + c
        raise InfeasibleRequestError(
            f"vehicle needs {c} charging steps but only {allowed.size} remain before step "
            f"{x.deadline_step}; earliest feasible completion at relative step {max(earliest, c)}"
        )
    enc = ActivationEncoding(p.n_steps, allowed, c, -p.es.i_max, p.es.i_max, p.es_levels)
    fixed = hvac_plan.p_hvac + p.p_nd + p.base_load
    objective = xev_es_objective(p, enc, fixed)
    res = _run_ga(enc, objective, _config_for(cfg, "xev", p.season), seed, seeds,
                  storage_seeds(p, fixed + x.power_seq.mean()))
    d = enc.decode(res.best[None, :])
    p_xev = _xev_power(p, d["activations"])
    load = fixed[None, :] + p_xev
    grid, i_eff, p_es, socs = storage_and_grid(p, load, d["es"])
    plan = replace(hvac_plan, u_xev=d["xev"][0], p_xev=p_xev[0], u_es=i_eff[0], p_es=p_es[0], p_grid=grid[0],
                   soc_es=socs[0], objective=res.objective, activations=d["activations"][0])
    info = SolveInfo("xev", res.generations, res.stalled, res.timed_out, res.elapsed, res.objective)
    return plan, info, res.best


def appliance_starts(p: HorizonProblem, tabu: Optional[dict] = None) -> dict:
    out = {}
    for r in p.appliances:
        out[r.appliance] = block_starts(r.enable_step, r.deadline_step, r.completion_steps, p.n_steps,
                                        (tabu or {}).get(r.appliance, ()))
    return out


def _block_power(p: HorizonProblem, r: ApplianceRequest, starts: np.ndarray) -> np.ndarray:
    P = starts.shape[0]
    power = np.zeros((P, p.n_steps))
    c = r.completion_steps
    prof = r.profile if r.profile is not None else np.ones(c)
    cols = starts[:, None] + np.arange(c)[None, :]
    power[np.arange(P)[:, None], cols] = prof[None, :]
    return power


def _appliance_loads(p: HorizonProblem, fixed: np.ndarray, d: dict):
    reqs = {r.appliance: r for r in p.appliances}
    total = np.broadcast_to(fixed, (d["es"].shape[0], p.n_steps)).copy()
    parts = {}
    for name, s in d["starts"].items():
        parts[name] = _block_power(p, reqs[name], s)
        total += parts[name]
    return total, parts


def appliances_es_objective(p: HorizonProblem, enc: StartTimeEncoding, fixed: np.ndarray):
    reqs = {r.appliance: r for r in p.appliances}

    def objective(pop):
        d = enc.decode(pop)
        load, _ = _appliance_loads(p, fixed, d)
        grid, _, _, socs = storage_and_grid(p, load, d["es"])
        cost = energy_cost(p, grid, socs)
        for name, s in d["starts"].items():
            r = reqs[name]
            cost = cost + p.deferral_weight * r.completion_steps * (s - r.enable_step)
        return cost

    return objective


def solve_appliances_es(p: HorizonProblem, hvac_plan: ControlPlan, xev_plan: Optional[ControlPlan],
                        tabu: Optional[dict] = None, cfg: Optional[HemConfig] = None, seed=0, seeds=None):
    """Sub-problem 3: start steps of laundry/dishwasher and storage currents, HVAC and vehicle fixed."""
    cfg = cfg or HemConfig()
    starts = appliance_starts(p, tabu)
    for name, s in starts.items():
        if s.size == 0:
            raise InfeasibleRequestError(f"no start for {name} completes inside its window")
    enc = StartTimeEncoding(p.n_steps, starts, -p.es.i_max, p.es.i_max, p.es_levels)
    base_plan = xev_plan or hvac_plan
    fixed = hvac_plan.p_hvac + base_plan.p_xev + p.p_nd + p.base_load
    objective = appliances_es_objective(p, enc, fixed)
    res = _run_ga(enc, objective, _config_for(cfg, "ld", p.season), seed, seeds, storage_seeds(p, fixed))
    d = enc.decode(res.best[None, :])
    load, parts = _appliance_loads(p, fixed, d)
    reqs = {r.appliance: r for r in p.appliances}
    grid, i_eff, p_es, socs = storage_and_grid(p, load, d["es"])
    z = np.zeros(p.n_steps)
    st = {k: int(v[0]) for k, v in d["starts"].items()}
    u = {k: (parts[k][0] > 0).astype(int) if k in parts else z.astype(int) for k in ("laundry", "dishwasher")}
    for k, s in st.items():
        u[k] = np.zeros(p.n_steps, dtype=int)
        u[k][s:s + reqs[k].completion_steps] = 1
    plan = replace(base_plan, u_laundry=u["laundry"], u_dishwasher=u["dishwasher"],
                   p_laundry=parts.get("laundry", np.zeros((1, p.n_steps)))[0],
                   p_dishwasher=parts.get("dishwasher", np.zeros((1, p.n_steps)))[0],
                   u_es=i_eff[0], p_es=p_es[0], p_grid=grid[0], soc_es=socs[0], objective=res.objective,
                   starts=st)
    info = SolveInfo("ld", res.generations, res.stalled, res.timed_out, res.elapsed, res.objective)
    return plan, info, res.best


# ---------------------------------------------------------------------------
# Power capping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TabuAppliance:
    appliance: str
    steps: frozenset


def capping_check(plan: ControlPlan, p: HorizonProblem, exclude=()) -> Optional[TabuAppliance]:
    """None if the plan's grid power respects the cap everywhere.

    Otherwise the deferrable appliance with the largest energy demand over
    the violating steps (ignoring ``exclude``), together with those steps.
    The appliance is ``None``-named ("") when no deferrable load is active
    in the window.
    """
    viol = np.flatnonzero(plan.p_grid > p.p_cap * (1 + 1e-9))
    if viol.size == 0:
        return None
    contrib = {
        "xev": plan.p_xev[viol].sum(),
        "laundry": plan.p_laundry[viol].sum(),
        "dishwasher": plan.p_dishwasher[viol].sum(),
    }
    cands = {k: v for k, v in contrib.items() if v > 0 and k not in exclude}
    steps = frozenset(int(k) for k in viol)
    if not cands:
        return TabuAppliance("", steps)
    return TabuAppliance(max(cands, key=lambda k: (cands[k], -DEFERRABLE.index(k))), steps)


def shed_storage_charging(p: HorizonProblem, plan: ControlPlan) -> ControlPlan:
    """Zero the storage charging current on steps where the grid exceeds the cap."""
    u = plan.u_es.copy()
    over = plan.p_grid > p.p_cap
    u[over & (u < 0)] = 0.0
    load = (plan.p_hvac + plan.p_xev + plan.p_laundry + plan.p_dishwasher + p.p_nd + p.base_load)[None, :]
    grid, i_eff, p_es, socs = storage_and_grid(p, load, u[None, :])
    return replace(plan, u_es=i_eff[0], p_es=p_es[0], p_grid=grid[0], soc_es=socs[0])


# ---------------------------------------------------------------------------
# One MPC step
# ---------------------------------------------------------------------------


@dataclass
class StepResult:
    plan: Optional[ControlPlan]
    problem: Optional[HorizonProblem]
    infos: list
    tabu: dict
    flags: dict
    elapsed: float
    genomes: dict = field(default_factory=dict)

    @property
    def hvac(self) -> float:
        return float(self.plan.u_hvac[0]) if self.plan is not None else 0.0

    @property
    def es_current(self) -> float:
        return float(self.plan.u_es[0]) if self.plan is not None else 0.0

    @property
    def xev_on(self) -> bool:
        return bool(self.plan is not None and self.plan.u_xev[0])

    @property
    def start_now(self) -> list:
        if self.plan is None:
            return []
        return [k for k, s in self.plan.starts.items() if s == 0]


def _seed(base, step, sub, attempt=0):
    return np.random.SeedSequence([int(base) & 0xFFFFFFFF, int(step), sub, attempt])


def mpc_step(p: Optional[HorizonProblem], cfg: HemConfig, seed: int = 0, step: int = 0,
             warm: Optional[dict] = None) -> StepResult:
    """Solve the sequential scheme with the power-capping tabu loop.

    The returned plan carries the whole horizon; the caller applies step 0.
    """
    t0 = time.perf_counter()
    if p is None:
        return StepResult(None, None, [], {}, {}, 0.0)
    warm = warm or {}
    flags = {"band_excess": 0.0, "cap_violation": False, "late": [], "tabu_passes": 0}
    plan1, info1, g1 = solve_hvac_es(p, cfg, _seed(seed, step, 1), warm.get("hvac"))
    flags["band_excess"] = plan1.band_excess
    tabu: dict = {}
    used: set = set()
    genomes = {"hvac": g1}
    attempt = 0
    while True:
        infos = [info1]
        plan = plan1
        plan2 = None
        if not p.skip_xev:
            try:
                plan2, info2, g2 = solve_xev_es(p, plan1, tabu, cfg, _seed(seed, step, 2, attempt), warm.get("xev"))
            except InfeasibleRequestError:
                if "xev" in tabu:
                    tabu.pop("xev")
                    plan2, info2, g2 = solve_xev_es(p, plan1, tabu, cfg, _seed(seed, step, 2, attempt),
                                                    warm.get("xev"))
                else:
                    # deadline can no longer be met: charge at every remaining step
                    flags["late"].append("xev")
                    window = xev_window(p)
                    x = p.xev
                    p = replace(p, xev=replace(x, deadline_step=p.n_steps,
                                               power_seq=x.power_seq))
                    if x.completion_steps > p.n_steps - max(x.enable_step, 0):
                        p = replace(p, xev=replace(x, enable_step=0, deadline_step=p.n_steps,
                                                   power_seq=x.power_seq[:p.n_steps]))
                    plan2, info2, g2 = solve_xev_es(p, plan1, None, cfg, _seed(seed, step, 2, attempt),
                                                    warm.get("xev"))
            infos.append(info2)
            genomes["xev"] = g2
            plan = plan2
        else:
            infos.append(SolveInfo("xev", skipped=True))
        if not p.skip_appliances:
            try:
                plan3, info3, g3 = solve_appliances_es(p, plan1, plan2, tabu, cfg, _seed(seed, step, 3, attempt),
                                                       warm.get("ld"))
            except InfeasibleRequestError:
                for k in ("laundry", "dishwasher"):
                    tabu.pop(k, None)
                try:
                    plan3, info3, g3 = solve_appliances_es(p, plan1, plan2, tabu, cfg,
                                                           _seed(seed, step, 3, attempt), warm.get("ld"))
                except InfeasibleRequestError:
                    flags["late"].extend(r.appliance for r in p.appliances)
                    p = replace(p, appliances=[replace(r, enable_step=0, deadline_step=max(
                        p.n_steps, r.completion_steps)) for r in p.appliances])
                    plan3, info3, g3 = solve_appliances_es(p, plan1, plan2, None, cfg,
                                                           _seed(seed, step, 3, attempt), warm.get("ld"))
            infos.append(info3)
            genomes["ld"] = g3
            plan = plan3
        else:
            infos.append(SolveInfo("ld", skipped=True))
        hit = capping_check(plan, p, exclude=used)
        if hit is None:
            break
        if not hit.appliance:
            plan = shed_storage_charging(p, plan)
            flags["cap_violation"] = bool(capping_check(plan, p) is not None)
            break
        used.add(hit.appliance)
        tabu[hit.appliance] = set(tabu.get(hit.appliance, set())) | set(hit.steps)
        attempt += 1
        flags["tabu_passes"] = attempt
    return StepResult(plan, p, infos, tabu, flags, time.perf_counter() - t0, genomes)


class HemController:
    """Receding-horizon controller holding the previous plan for warm starts."""

    name = "hem"

    def __init__(self, cfg: Optional[HemConfig] = None, seed: int = 0):
        self.cfg = cfg or HemConfig()
        self.seed = seed
        self._prev: Optional[StepResult] = None
        self._prev_step = 0

    def warm_seeds(self, p: HorizonProblem, step: int) -> dict:
        prev = self._prev
        if not self.cfg.warm_start or prev is None or prev.plan is None:
            return {}
        shift = step - self._prev_step
        n = p.n_steps
        out = {}
        plan = prev.plan

        def shifted(arr, fill):
            arr = np.asarray(arr, dtype=float)[shift:]
            if arr.size >= n:
                return arr[:n]
            return np.concatenate([arr, np.full(n - arr.size, fill if arr.size == 0 else arr[-1] * 0 + fill)])

        if plan.hvac_idx is not None:
            idx = shifted(plan.hvac_idx, 0)
            idx = np.clip(idx, 0, p.hvac.levels.size - 1)
            if plan.hvac_idx.size and p.hvac.levels.size != 3:
                idx = np.minimum(idx, 1)
            out["hvac"] = np.concatenate([idx, shifted(plan.u_es, 0.0)])[None, :]
        es_seed = shifted(plan.u_es, 0.0)
        if not p.skip_xev and plan.activations is not None:
            c = p.xev.completion_steps
            acts = np.asarray(plan.activations) - shift
            acts = acts[acts >= 0][:c]
            allowed = xev_window(p)
            if acts.size < c:
                fill = np.setdiff1d(allowed, acts)[: c - acts.size]
                acts = np.concatenate([acts, fill])
            if acts.size == c:
                out["xev"] = np.concatenate([np.sort(acts), es_seed])[None, :]
        if not p.skip_appliances and plan.starts:
            genes = []
            for r in p.appliances:
                s = plan.starts.get(r.appliance)
                genes.append(max(s - shift, 0) if s is not None else r.enable_step)
            out["ld"] = np.concatenate([np.asarray(genes, dtype=float), es_seed])[None, :]
        return out

    def step(self, p: Optional[HorizonProblem], step: int) -> StepResult:
        warm = self.warm_seeds(p, step) if p is not None else {}
        res = mpc_step(p, self.cfg, self.seed, step, warm)
        self._prev, self._prev_step = res, step
        return res
