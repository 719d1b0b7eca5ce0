"""Physical component models of the smart home and the household power balance.

Sign conventions
----------------
* Stationary storage pack current is positive when discharging; a positive
  storage power at the bus therefore feeds the house.
* Vehicle charging current is positive when charging (the vehicle never
  discharges into the house).
* Powers are in W, energies in Wh, temperatures in degC, time in s.
"""
from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, replace
from typing import Mapping, NamedTuple, Optional

import numpy as np

from hemsim import data as _data

LEVEL2_CHARGER_W = 7560.0


class DomainError(ValueError):
    """Raised when a lookup falls outside the tabulated domain."""


class InvalidCommandError(ValueError):
    pass


class Map2D:
    """Bilinear lookup on a rectilinear grid, raising outside the grid."""

    def __init__(self, x, y, values, name="map"):
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != (self.x.size, self.y.size):
            raise ValueError(f"{name}: values shape {self.values.shape} != ({self.x.size}, {self.y.size})")
        self.name = name
        self._xs = self.x.tolist()
        self._ys = self.y.tolist()
        self._v = self.values.tolist()

    @staticmethod
    def _cell(nodes, v):
        i = min(max(bisect_right(nodes, v) - 1, 0), len(nodes) - 2)
        w = (v - nodes[i]) / (nodes[i + 1] - nodes[i])
        return i, w

    def __call__(self, x: float, y: float) -> float:
        xs, ys = self._xs, self._ys
        if not (xs[0] <= x <= xs[-1] and ys[0] <= y <= ys[-1]):
            raise DomainError(
                f"{self.name}: ({x:g}, {y:g}) outside [{xs[0]:g}, {xs[-1]:g}] x [{ys[0]:g}, {ys[-1]:g}]"
            )
        i, wx = self._cell(xs, x)
        j, wy = self._cell(ys, y)
        v = self._v
        lo = v[i][j] * (1 - wy) + v[i][j + 1] * wy
        hi = v[i + 1][j] * (1 - wy) + v[i + 1][j + 1] * wy
        return lo * (1 - wx) + hi * wx

    def slice_y(self, y: float) -> np.ndarray:
        """Column of the map at fixed second coordinate, one value per x node."""
        if not self.y[0] <= y <= self.y[-1]:
            raise DomainError(f"{self.name}: {y:g} outside [{self.y[0]:g}, {self.y[-1]:g}]")
        return np.array([np.interp(y, self.y, row) for row in self.values])


# ---------------------------------------------------------------------------
# Photovoltaics
# ---------------------------------------------------------------------------


@dataclass
class SolarArray:
    panel_area: float
    efficiency: Map2D  # (ambient degC, irradiance W/m2) -> eta
    times: np.ndarray  # s
    irradiance: np.ndarray  # W/m2

    def __post_init__(self):
        if self.panel_area <= 0:
            raise ValueError("panel_area must be positive")
        if np.any(self.efficiency.values < 0) or np.any(self.efficiency.values > 1):
            raise ValueError("PV efficiency map entries must lie in [0, 1]")
        if np.any(np.asarray(self.irradiance) < 0):
            raise ValueError("irradiance must be non-negative")

    def irradiance_at(self, t: float) -> float:
        if not self.times[0] <= t <= self.times[-1]:
            raise DomainError(f"t={t:g} s outside irradiance trace [{self.times[0]:g}, {self.times[-1]:g}]")
        return float(np.interp(t, self.times, self.irradiance))


def solar_power(array: SolarArray, t: float, ambient: float) -> float:
    g = array.irradiance_at(t)
    if g <= 0.0:
        return 0.0
    eta = array.efficiency(float(np.clip(ambient, array.efficiency.x[0], array.efficiency.x[-1])),
                           min(g, array.efficiency.y[-1]))
    return max(0.0, g * array.panel_area * eta)


def load_pv_efficiency(path=None) -> Map2D:
    raw = _data.load_json(path or "pv_efficiency.json")
    return Map2D(raw["ambient"], raw["irradiance"], raw["efficiency"], name="eta_pv")


# ---------------------------------------------------------------------------
# Batteries (0th-order equivalent circuit)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Cell:
    nominal_voltage: float
    capacity_ah: float
    max_voltage: float
    ocv: Map2D  # (soc, degC) -> V
    r0: Map2D  # (soc, degC) -> ohm

    @classmethod
    def load(cls, path=None) -> "Cell":
        raw = _data.load_json(path or "cell_lfp_3v2_5ah.json")
        return cls(
            nominal_voltage=raw["nominal_voltage"],
            capacity_ah=raw["capacity_ah"],
            max_voltage=raw["max_voltage"],
            ocv=Map2D(raw["soc"], raw["temperature"], raw["ocv"], name="V_OC"),
            r0=Map2D(raw["soc"], raw["temperature"], raw["r0"], name="R_0"),
        )


def pack_size(capacity_wh: float, voltage: float, cell: Cell) -> tuple[int, int]:
    """Series and parallel cell counts for a nominal pack, rounded up."""
    n_series = math.ceil(voltage / cell.nominal_voltage - 1e-9)
    n_parallel = math.ceil(capacity_wh / voltage / cell.capacity_ah - 1e-9)
    return max(1, n_series), max(1, n_parallel)


@dataclass
class BatteryPack:
    n_series: int
    n_parallel: int
    cell_capacity: float  # Ah
    ocv_map: Map2D
    resistance_map: Map2D
    round_trip_eff: float
    soc: float
    temperature_source: str = "indoor"  # ambient | indoor | fixed
    fixed_temperature: float = 25.0
    max_cell_voltage: float = 3.65
    current_factor: float = 2.5  # |I| <= factor * n_series

    def __post_init__(self):
        if self.n_series < 1 or self.n_parallel < 1:
            raise ValueError("cell counts must be >= 1")
        if not 0.0 <= self.soc <= 1.0:
            raise ValueError(f"soc {self.soc} outside [0, 1]")
        if np.any(self.resistance_map.values <= 0):
            raise ValueError("resistance map must be positive")
        if np.any(np.diff(self.ocv_map.values, axis=0) < 0):
            raise ValueError("OCV map must be nondecreasing in SOC")
        if self.temperature_source not in ("ambient", "indoor", "fixed"):
            raise ValueError(f"unknown temperature_source {self.temperature_source!r}")

    @classmethod
    def from_nominal(cls, capacity_wh, voltage, cell: Cell, soc=0.2, eta=0.95, **kw) -> "BatteryPack":
        ns, np_ = pack_size(capacity_wh, voltage, cell)
        return cls(ns, np_, cell.capacity_ah, cell.ocv, cell.r0, eta, soc,
                   max_cell_voltage=cell.max_voltage, **kw)

    @property
    def capacity_ah(self) -> float:
        return self.n_parallel * self.cell_capacity

    @property
    def max_current(self) -> float:
        return self.current_factor * self.n_series

    def temperature(self, ambient: float, indoor: float) -> float:
        if self.temperature_source == "ambient":
            return ambient
        if self.temperature_source == "indoor":
            return indoor
        return self.fixed_temperature

    def ocv(self, temp: float, soc: Optional[float] = None) -> float:
        return self.ocv_map(self.soc if soc is None else soc, temp)

    def r0(self, temp: float, soc: Optional[float] = None) -> float:
        return self.resistance_map(self.soc if soc is None else soc, temp)


class Terminal(NamedTuple):
    voltage: float
    power: float


class SocStep(NamedTuple):
    soc: float
    saturated: bool


def battery_terminal(pack: BatteryPack, pack_current: float, temp: float) -> Terminal:
    """Pack voltage and bus-side power for a given pack current.

    Positive current discharges the pack; the returned bus power then
    carries the discharge efficiency. Charging (negative current) returns
    a negative bus power inflated by ``1/eta``.
    """
    voc = pack.ocv(temp)
    r0 = pack.r0(temp)
    v = pack.n_series * (voc - r0 * pack_current / pack.n_parallel)
    if pack_current > 0:
        p = v * pack_current * pack.round_trip_eff
    elif pack_current < 0:
        p = v * pack_current / pack.round_trip_eff
    else:
        p = 0.0
    return Terminal(v, p)


def current_for_power(pack: BatteryPack, bus_power: float, temp: float) -> float:
    """Pack current that produces ``bus_power`` at the bus (inverse of battery_terminal).

    Raises DomainError when a discharge power exceeds what the pack can deliver.
    """
    if bus_power == 0.0:
        return 0.0
    voc = pack.ocv(temp)
    k = pack.n_series * pack.r0(temp) / pack.n_parallel
    a = pack.n_series * voc
    # V(I) * I = q with V(I) = a - k I
    q = bus_power / pack.round_trip_eff if bus_power > 0 else bus_power * pack.round_trip_eff
    disc = a * a - 4.0 * k * q
    if disc < 0:
        raise DomainError(f"bus power {bus_power:g} W beyond pack capability")
    return (a - math.sqrt(disc)) / (2.0 * k)


def battery_soc_step(pack: BatteryPack, pack_current: float, dt: float) -> SocStep:
    """Advance SOC by one explicit Euler step; clips to [0, 1] and flags saturation."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    soc = pack.soc - (pack_current / pack.n_parallel) * dt / (3600.0 * pack.cell_capacity)
    if soc < 0.0:
        return SocStep(0.0, True)
    if soc > 1.0:
        return SocStep(1.0, True)
    return SocStep(soc, False)


def soc_limited_current(pack: BatteryPack, current: float, dt: float, soc_min: float, soc_max: float) -> float:
    """Clip a pack current so one step of length dt keeps SOC inside [soc_min, soc_max]."""
    per_amp = dt / (3600.0 * pack.cell_capacity * pack.n_parallel)
    hi = max(0.0, (pack.soc - soc_min) / per_amp)
    lo = -max(0.0, (soc_max - pack.soc) / per_amp)
    return float(min(max(current, lo), hi))


def dispatch_storage(pack: BatteryPack, current: float, temp: float, net_load: float, dt: float,
                     soc_min: float, soc_max: float, charge_limit: float = math.inf,
                     absorb_surplus: bool = False) -> float:
    """Clip a requested pack current to what the household can use.

    On top of the current bound and the SOC window, discharge never exceeds
    ``net_load`` (no export) and charging never draws more than
    ``charge_limit`` watts at the bus. With ``absorb_surplus`` the pack takes
    any solar surplus it has room for, so curtailment is the last resort.
    """
    a = pack.n_series * pack.ocv(temp)
    k = pack.n_series * pack.r0(temp) / pack.n_parallel
    eta = pack.round_trip_eff
    i = min(max(current, -pack.max_current), pack.max_current)
    i = soc_limited_current(pack, i, dt, soc_min, soc_max)
    q = max(net_load, 0.0) / eta
    i = min(i, (a - math.sqrt(max(a * a - 4.0 * k * q, 0.0))) / (2.0 * k))
    q = max(charge_limit, 0.0) * eta
    if math.isfinite(q):
        i = max(i, -(-a + math.sqrt(a * a + 4.0 * k * q)) / (2.0 * k))
    if absorb_surplus and net_load < 0.0:
        # surplus solar goes to storage before it is curtailed
        q = -net_load * eta
        j = (-a + math.sqrt(a * a + 4.0 * k * q)) / (2.0 * k)
        room = -soc_limited_current(pack, -pack.max_current, dt, soc_min, soc_max)
        i = min(i, -min(j, room))
    return i


# ---------------------------------------------------------------------------
# HVAC and thermal envelope
# ---------------------------------------------------------------------------


@dataclass
class HvacUnit:
    mass_flow: float  # kg/s
    supply_temp_cool: float
    supply_temp_heat: float
    cp_air: float
    cop_delta_t: np.ndarray
    cop_values: np.ndarray
    shr: float
    pressure_drop: float
    fan_eff: float
    air_density: float
    mode_threshold: float = 20.0

    def __post_init__(self):
        self.cop_delta_t = np.asarray(self.cop_delta_t, dtype=float)
        self.cop_values = np.asarray(self.cop_values, dtype=float)
        if np.any(self.cop_values <= 0):
            raise ValueError("COP must be positive")
        if not 0 < self.shr <= 1 or not 0 < self.fan_eff <= 1:
            raise ValueError("shr and fan_eff must lie in (0, 1]")
        if self.mass_flow <= 0:
            raise ValueError("mass_flow must be positive")

    @classmethod
    def for_floor_area(cls, floor_m2: float, params: Optional[Mapping] = None) -> "HvacUnit":
        p = dict(params or _data.load_json("hvac.json"))
        return cls(
            mass_flow=p["mass_flow_per_m2"] * floor_m2,
            supply_temp_cool=p["supply_temp_cool"],
            supply_temp_heat=p["supply_temp_heat"],
            cp_air=p["cp_air"],
            cop_delta_t=p["cop_map"]["delta_t"],
            cop_values=p["cop_map"]["cop"],
            shr=p["shr"],
            pressure_drop=p["pressure_drop"],
            fan_eff=p["fan_eff"],
            air_density=p["air_density"],
            mode_threshold=p.get("mode_threshold", 20.0),
        )

    def cop(self, delta_t: float) -> float:
        return float(np.interp(delta_t, self.cop_delta_t, self.cop_values))

    def mode(self, ambient: float) -> str:
        return "heat" if ambient <= self.mode_threshold else "cool"

    def supply_temp(self, mode: str) -> float:
        return self.supply_temp_heat if mode == "heat" else self.supply_temp_cool

    @property
    def fan_power(self) -> float:
        return self.mass_flow * self.pressure_drop / (self.fan_eff * self.air_density)


class HvacPower(NamedTuple):
    electrical: float
    thermal_supply: float
    mode: str


def hvac_power(unit: HvacUnit, command: float, ambient: float, mode_ambient: Optional[float] = None) -> HvacPower:
    """Electrical draw of the HVAC at a fan command in {0, 0.5, 1}.

    ``mode_ambient`` selects heating or cooling against the unit's threshold;
    it defaults to ``ambient``. The capacity temperature difference always
    uses the instantaneous ambient.
    """
    mode = unit.mode(ambient if mode_ambient is None else mode_ambient)
    if command not in (0, 0.5, 1):
        raise InvalidCommandError(f"HVAC command must be 0, 0.5 or 1, got {command!r}")
    if mode == "heat" and command == 0.5:
        raise InvalidCommandError("fan command can only be on or off in heating mode")
    if command == 0:
        return HvacPower(0.0, 0.0, mode)
    if mode == "heat":
        dT = max(unit.supply_temp_heat - ambient, 0.0)
        thermal = unit.mass_flow * command * unit.cp_air * dT
        p = thermal / unit.cop(dT)
    else:
        dT = max(ambient - unit.supply_temp_cool, 0.0)
        thermal = unit.mass_flow * command * unit.cp_air * dT
        p = thermal / (unit.shr * unit.cop(dT))
    return HvacPower(p + command * unit.fan_power, thermal, mode)


@dataclass
class ThermalHouse:
    air_mass: float  # kg, effective (air plus interior capacitance)
    cv_air: float
    thermal_resistance: float  # K/W
    indoor_temp: float

    def __post_init__(self):
        if min(self.air_mass, self.cv_air, self.thermal_resistance) <= 0:
            raise ValueError("thermal parameters must be positive")

    @classmethod
    def for_floor_area(cls, floor_m2: float, indoor_temp: float, params: Optional[Mapping] = None) -> "ThermalHouse":
        p = dict(params or _data.load_json("house.json"))
        air = floor_m2 * p["ceiling_height"] * p["air_density"]
        return cls(
            air_mass=air * p["thermal_mass_factor"],
            cv_air=p["cv_air"],
            thermal_resistance=1.0 / (p["ua_per_m2"] * floor_m2),
            indoor_temp=indoor_temp,
        )

    @property
    def capacitance(self) -> float:
        return self.air_mass * self.cv_air


def thermal_coefficients(house: ThermalHouse, unit: HvacUnit, command: float, ambient: float,
                         dt: float, mode: str) -> tuple[float, float]:
    """(a, b) such that T(t + dt) = a * T(t) + b for constant inputs over the step."""
    g_hvac = command * unit.mass_flow * unit.cp_air
    g_env = 1.0 / house.thermal_resistance
    t_eq = (g_hvac * unit.supply_temp(mode) + g_env * ambient) / (g_hvac + g_env)
    a = math.exp(-(g_hvac + g_env) * dt / house.capacitance)
    return a, (1.0 - a) * t_eq


def thermal_step(house: ThermalHouse, unit: HvacUnit, command: float, ambient: float, dt: float,
                 mode: Optional[str] = None) -> float:
    """Exact update of the first-order envelope over one step of constant inputs."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    a, b = thermal_coefficients(house, unit, command, ambient, dt, mode or unit.mode(ambient))
    return a * house.indoor_temp + b


# ---------------------------------------------------------------------------
# Vehicle charging (CC-CV on a Level-2 charger)
# ---------------------------------------------------------------------------


class ChargeStep(NamedTuple):
    soc: float
    drawn_power: float  # W averaged over the step
    energy: float  # Wh drawn from the bus
    cv: bool  # constant-voltage phase active at the end of the step


def xev_charge_step(pack: BatteryPack, charger_limit: float, dt: float, target: float = 0.8,
                    temp: float = 25.0, substeps: int = 10) -> ChargeStep:
    """Charge the vehicle pack for one control step under a CC-CV protocol.

    The pack current is limited by the per-pack current bound, by the
    charger power (bus side, including ``1/eta``) and, once the terminal
    voltage reaches ``n_series * max_cell_voltage``, by the constant-voltage
    condition. Charging stops exactly at ``target``.
    """
    charger_limit = min(charger_limit, LEVEL2_CHARGER_W)
    soc = pack.soc
    if soc >= target:
        return ChargeStep(soc, 0.0, 0.0, False)
    h = dt / substeps
    energy_ws = 0.0
    cv = False
    per_amp = h / (3600.0 * pack.capacity_ah)
    for _ in range(substeps):
        if soc >= target:
            break
        voc = pack.ocv(temp, soc)
        r0 = pack.r0(temp, soc)
        k = pack.n_series * r0 / pack.n_parallel
        a = pack.n_series * voc
        # CC: largest current with V(I)*I/eta <= limit, V(I) = a + k I while charging
        q = charger_limit * pack.round_trip_eff
        i_power = (-a + math.sqrt(a * a + 4.0 * k * q)) / (2.0 * k)
        i = min(pack.max_current, i_power)
        i_cv = (pack.n_series * pack.max_cell_voltage - a) / k
        if i >= i_cv:
            i = max(0.0, i_cv)
            cv = True
        i = min(i, (target - soc) / per_amp)
        if i <= 0.0:
            break
        v = a + k * i
        energy_ws += v * i / pack.round_trip_eff * h
        soc += i * per_amp
    soc = min(soc, target)
    return ChargeStep(soc, energy_ws / dt, energy_ws / 3600.0, cv)


def charge_steps_needed(pack: BatteryPack, target: float, dt: float, temp: float = 25.0,
                        charger_limit: float = LEVEL2_CHARGER_W, max_steps: int = 10_000) -> int:
    """Completion steps of an uninterrupted charge from the pack's SOC to ``target``.

    Obtained by running :func:`xev_charge_step` on a copy, so the count is
    exactly what immediate dispatch takes in the plant.
    """
    probe = replace(pack)
    n = 0
    while probe.soc < target - 1e-12 and n < max_steps:
        step = xev_charge_step(probe, charger_limit, dt, target, temp)
        if step.energy <= 0.0:
            raise DomainError("vehicle pack cannot reach the target SOC")
        probe.soc = step.soc
        n += 1
    return n


# ---------------------------------------------------------------------------
# Power balance
# ---------------------------------------------------------------------------


@dataclass
class PowerSnapshot:
    grid: float
    solar: float  # utilised solar
    storage: float
    hvac: float
    xev: float
    deferrable: float
    non_deferrable: float
    curtailed: float = 0.0

    def residual(self) -> float:
        return self.grid + self.solar + self.storage - self.hvac - self.xev - self.deferrable - self.non_deferrable

    def scale(self) -> float:
        return sum(abs(v) for v in (self.grid, self.solar, self.storage, self.hvac, self.xev,
                                    self.deferrable, self.non_deferrable))

    def balanced(self, rtol: float = 1e-6) -> bool:
        return abs(self.residual()) <= rtol * max(self.scale(), 1.0)


def balance_close(hvac: float = 0.0, xev: float = 0.0, deferrable: float = 0.0, non_deferrable: float = 0.0,
                  solar: float = 0.0, storage: float = 0.0) -> PowerSnapshot:
    """Close the household balance with the grid as the residual.

    Export is not modelled: any surplus that would push the grid term
    negative is curtailed from the solar term.
    """
    load = hvac + xev + deferrable + non_deferrable
    grid = load - solar - storage
    curtailed = 0.0
    if grid < 0.0:
        curtailed = min(-grid, solar)
        grid += curtailed
    return PowerSnapshot(grid, solar - curtailed, storage, hvac, xev, deferrable, non_deferrable, curtailed)
