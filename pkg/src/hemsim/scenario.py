"""Scenario inputs: tariff, case studies, weather traces and seeded
household activity / vehicle usage streams."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from hemsim import data as _data

DAY = 86400.0
FT2_TO_M2 = 0.09290304

# ---------------------------------------------------------------------------
# Time-of-use tariff
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TouSchedule:
    """Piecewise-constant daily prices as (start_h, end_h, $/kWh), left-closed."""

    weekday: tuple
    weekend: tuple = ()
    first_weekday: int = 0  # weekday index (Mon=0) of day 0

    def __post_init__(self):
        object.__setattr__(self, "weekday", tuple(tuple(map(float, s)) for s in self.weekday))
        object.__setattr__(self, "weekend", tuple(tuple(map(float, s)) for s in (self.weekend or self.weekday)))
        for segs in (self.weekday, self.weekend):
            _check_segments(segs)

    @classmethod
    def flat(cls, rate: float) -> "TouSchedule":
        return cls(((0, 24, rate),))

    def segments(self, day: int) -> tuple:
        return self.weekend if (day + self.first_weekday) % 7 >= 5 else self.weekday


def _check_segments(segs):
    if not segs:
        raise ValueError("tariff needs at least one segment")
    segs = sorted(segs)
    if segs[0][0] != 0.0 or segs[-1][1] != 24.0:
        raise ValueError("tariff segments must cover 0-24 h")
    for (a0, a1, r), (b0, _, _) in zip(segs, segs[1:]):
        if a1 != b0:
            raise ValueError(f"tariff segments leave a gap or overlap at {a1} h")
    for a0, a1, r in segs:
        if a1 <= a0:
            raise ValueError("tariff segment end must follow its start")
        if r <= 0:
            raise ValueError("tariff prices must be positive")


DEFAULT_TOU = TouSchedule(
    weekday=((0, 7, 0.08), (7, 14, 0.12), (14, 20, 0.24), (20, 22, 0.12), (22, 24, 0.08)),
    weekend=((0, 14, 0.08), (14, 20, 0.12), (20, 24, 0.08)),
)


def price(sched: TouSchedule, t: float) -> float:
    """$/kWh at ``t`` seconds from the start of day 0."""
    day = int(t // DAY)
    hour = (t - day * DAY) / 3600.0
    for a, b, r in sorted(sched.segments(day)):
        if a <= hour < b:
            return r
    raise AssertionError("segments cover the day")  # unreachable after validation


def price_trace(sched: TouSchedule, start_s: float, n: int, dt: float) -> np.ndarray:
    return np.array([price(sched, start_s + k * dt) for k in range(n)])


# ---------------------------------------------------------------------------
# Case studies
# ---------------------------------------------------------------------------

LOCATIONS = ("Columbus", "LosAngeles", "SanAntonio", "Boston")


@dataclass(frozen=True)
class CaseStudy:
    id: int
    location: str
    house_area_range: tuple
    xev_capacity: float  # kWh
    es_capacity: float  # kWh
    es_temp_controlled: bool


_CASE_ROWS = {
    1: ("Columbus", (1500, 2500), 60, 14, True),
    2: ("Columbus", (500, 1500), 60, 14, True),
    3: ("Columbus", (2500, 3500), 60, 14, True),
    4: ("Columbus", (3500, 4500), 60, 28, True),
    5: ("LosAngeles", (1500, 2500), 60, 14, True),
    6: ("SanAntonio", (1500, 2500), 60, 14, True),
    7: ("Boston", (1500, 2500), 60, 14, True),
    8: ("Columbus", (1500, 2500), 25, 14, True),
    9: ("Columbus", (1500, 2500), 100, 14, True),
    10: ("Columbus", (2500, 3500), 60, 28, True),
    11: ("Columbus", (3500, 4500), 60, 14, True),
    12: ("Columbus", (1500, 2500), 60, 14, False),
}


def load_case(case_id: int) -> CaseStudy:
    try:
        loc, area, ev, es, ctl = _CASE_ROWS[int(case_id)]
    except (KeyError, ValueError):
        raise KeyError(f"unknown case id {case_id!r}; expected 1-12") from None
    return CaseStudy(int(case_id), loc, area, float(ev), float(es), ctl)


# ---------------------------------------------------------------------------
# Weather
# ---------------------------------------------------------------------------


class WeatherError(ValueError):
    pass


@dataclass
class WeatherTrace:
    times: np.ndarray  # s from start of year
    ambient: np.ndarray  # degC
    irradiance: np.ndarray  # W/m2

    def daily_mean_ambient(self, t: float) -> float:
        """Mean ambient over the calendar day containing ``t`` (from the source nodes)."""
        d0 = math.floor(t / DAY) * DAY
        m = (self.times >= d0) & (self.times < d0 + DAY)
        if not m.any():
            raise WeatherError(f"no weather data on the day of t={t}")
        return float(self.ambient[m].mean())


def read_weather(path) -> WeatherTrace:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"weather trace not found: {p}")
    with open(p, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise WeatherError(f"weather trace {p} is empty")
    t = np.array([float(r["time_s"]) for r in rows])
    if np.any(np.diff(t) <= 0):
        bad = int(np.flatnonzero(np.diff(t) <= 0)[0]) + 1
        raise WeatherError(f"timestamps in {p} are not strictly increasing at row {bad + 1}")
    return WeatherTrace(t, np.array([float(r["ambient_C"]) for r in rows]),
                        np.array([float(r["irradiance_Wm2"]) for r in rows]))


def load_weather(location: str, start_s: float, end_s: float, dt: float, path=None):
    """Ambient and irradiance at ``dt`` resolution over [start_s, end_s).

    The source is linearly interpolated; the source trace must span the
    requested window (any length of year, including 366 days). Returns
    (grid times, ambient, irradiance, source trace).
    """
    src = read_weather(path or _data.data_path(f"weather/{location}.csv"))
    grid = start_s + dt * np.arange(int(round((end_s - start_s) / dt)))
    if grid.size and (grid[0] < src.times[0] or grid[-1] > src.times[-1]):
        raise WeatherError(f"requested window [{start_s}, {end_s}) is outside the {location} trace")
    amb = np.interp(grid, src.times, src.ambient)
    irr = np.maximum(np.interp(grid, src.times, src.irradiance), 0.0)
    return grid, amb, irr, src


# ---------------------------------------------------------------------------
# Household activities
# ---------------------------------------------------------------------------

# non-deferrable activity powers (W)
ACTIVITY_POWER = {"sleeping": 0.0, "no_power": 0.0, "cleaning": 1250.0, "cooking": 1225.0, "leisure": 300.0}
# deferrable appliance power (W) and run time (min)
APPLIANCE_POWER = {"washer": 425.0, "dryer": 3400.0, "dishwasher": 1800.0}
APPLIANCE_MINUTES = {"washer": 30, "dryer": 30, "dishwasher": 60}
COMPLETION_STEPS = {"laundry": 9, "dishwasher": 6}
DEADLINE_STEPS = 48


def laundry_profile(dt: float = 600.0) -> np.ndarray:
    """Washer then dryer back to back, padded with idle steps to the laundry completion time."""
    w = int(round(APPLIANCE_MINUTES["washer"] * 60 / dt))
    d = int(round(APPLIANCE_MINUTES["dryer"] * 60 / dt))
    prof = np.zeros(COMPLETION_STEPS["laundry"])
    prof[:w] = APPLIANCE_POWER["washer"]
    prof[w:w + d] = APPLIANCE_POWER["dryer"]
    return prof


def dishwasher_profile(dt: float = 600.0) -> np.ndarray:
    n = int(round(APPLIANCE_MINUTES["dishwasher"] * 60 / dt))
    prof = np.zeros(COMPLETION_STEPS["dishwasher"])
    prof[:n] = APPLIANCE_POWER["dishwasher"]
    return prof


def _hourly(peaks: Sequence[tuple], base: float) -> np.ndarray:
    h = np.full(24, base)
    for hour, val in peaks:
        h[hour] = val
    return h


@dataclass
class ActivityModel:
    """Per-occupant start probabilities per 10-minute step by hour of day, and duration ranges (min)."""

    occupants: int = 2
    start_prob: dict = field(default_factory=lambda: {
        "cooking": _hourly([(7, 0.08), (8, 0.05), (12, 0.06), (17, 0.10), (18, 0.12), (19, 0.06)], 0.002),
        "cleaning": _hourly([(9, 0.03), (10, 0.04), (11, 0.03), (14, 0.02), (15, 0.02), (16, 0.02)], 0.002),
        "leisure": _hourly([(19, 0.15), (20, 0.15), (21, 0.12), (22, 0.05), (13, 0.04), (16, 0.05)], 0.01),
    })
    duration_min: dict = field(default_factory=lambda: {
        "cooking": (20, 60), "cleaning": (20, 60), "leisure": (30, 180)})
    sleep_hours: tuple = (23, 7)
    laundry_per_day: float = 0.8
    dishwasher_per_day: float = 0.6
    laundry_hours: tuple = (8, 9, 10, 11, 13, 17, 18, 19)


@dataclass
class ActivityEvent:
    activity: str
    start_step: int
    duration: int  # steps
    power: float  # W


@dataclass
class DeferrableRequest:
    request_id: int
    appliance: str
    enable_step: int
    completion_steps: int
    profile: np.ndarray  # W per step of the block


@dataclass
class ActivityStream:
    events: list
    requests: list
    n_steps: int
    dt: float

    def nd_power(self) -> np.ndarray:
        p = np.zeros(self.n_steps)
        for e in self.events:
            p[e.start_step:e.start_step + e.duration] += e.power
        return p


def gen_activities(seed, n_days: int, dt: float = 600.0, start_day: int = 0,
                   model: Optional[ActivityModel] = None) -> ActivityStream:
    """Seeded occupant activities (non-deferrable power) and laundry/dishwasher requests."""
    model = model or ActivityModel()
    n = int(round(n_days * DAY / dt))
    rng = np.random.default_rng(seed)
    if n <= 0:
        return ActivityStream([], [], 0, dt)
    steps_per_hour = 3600.0 / dt
    hours = ((np.arange(n) * dt) % DAY / 3600.0).astype(int)
    s0, s1 = model.sleep_hours
    asleep = (hours >= s0) | (hours < s1) if s0 > s1 else (hours >= s0) & (hours < s1)
    names = list(model.start_prob)
    events: list[ActivityEvent] = []
    for _ in range(model.occupants):
        k = 0
        while k < n:
            if asleep[k]:
                j = k
                while j < n and asleep[j]:
                    j += 1
                events.append(ActivityEvent("sleeping", k, j - k, ACTIVITY_POWER["sleeping"]))
                k = j
                continue
            probs = np.array([model.start_prob[a][hours[k]] for a in names])
            u = rng.random()
            cum = np.cumsum(probs)
            idx = int(np.searchsorted(cum, u, side="right"))
            if idx < len(names):
                a = names[idx]
                lo, hi = model.duration_min[a]
                dur = max(1, int(round(rng.uniform(lo, hi) * 60.0 / dt)))
                dur = min(dur, n - k)
                events.append(ActivityEvent(a, k, dur, ACTIVITY_POWER[a]))
                k += dur
            else:
                k += 1
    events.sort(key=lambda e: (e.start_step, e.activity))

    requests: list[DeferrableRequest] = []
    last_enable = {"laundry": -10 ** 9, "dishwasher": -10 ** 9}
    cooking_ends = {}
    for e in events:
        if e.activity == "cooking":
            d = e.start_step // int(round(DAY / dt))
            cooking_ends[d] = max(cooking_ends.get(d, 0), e.start_step + e.duration)
    per_day = int(round(DAY / dt))
    rid = 0
    for d in range(n_days):
        cands = []
        if rng.random() < model.laundry_per_day:
            h = int(rng.choice(model.laundry_hours))
            cands.append(("laundry", d * per_day + int((h + rng.random()) * steps_per_hour)))
        if rng.random() < model.dishwasher_per_day:
            k = cooking_ends.get(d, d * per_day + int(20 * steps_per_hour))
            cands.append(("dishwasher", k + int(rng.integers(0, 6))))
        for app, k in cands:
            # one outstanding request per appliance: wait until the previous deadline
            k = max(k, last_enable[app] + DEADLINE_STEPS)
            prof = laundry_profile(dt) if app == "laundry" else dishwasher_profile(dt)
            if k + len(prof) > n:
                continue
            last_enable[app] = k
            requests.append(DeferrableRequest(rid, app, k, len(prof), prof))
            rid += 1
    requests.sort(key=lambda r: (r.enable_step, r.appliance))
    for i, r in enumerate(requests):
        r.request_id = i
    return ActivityStream(events, requests, n, dt)


# ---------------------------------------------------------------------------
# Vehicle usage
# ---------------------------------------------------------------------------


def ev_initial_soc(miles: float, efficiency: float, capacity: float) -> float:
    """Plug-in SOC after a day's driving from a full (80 %) vehicle. ``capacity`` in kWh."""
    if miles < 0:
        raise ValueError("miles must be non-negative")
    return min(max(0.8 - miles * efficiency / capacity, 0.0), 0.8)


@dataclass
class EvUsage:
    plug_in_mean_h: float = 18.0
    plug_in_sd_h: float = 1.5
    miles_mean: float = 30.0
    miles_sd: float = 15.0
    efficiency: float = 0.3  # kWh/mile
    min_soc: float = 0.2


@dataclass
class EvTrip:
    request_id: int
    plug_in_step: int
    miles: float
    soc0: float


def gen_ev_trips(seed, n_days: int, capacity_kwh: float, dt: float = 600.0,
                 usage: Optional[EvUsage] = None) -> list:
    """One plug-in per day; miles are capped so the arrival SOC stays above ``min_soc``."""
    usage = usage or EvUsage()
    rng = np.random.default_rng(seed)
    per_hour = 3600.0 / dt
    n = int(round(n_days * DAY / dt))
    max_miles = (0.8 - usage.min_soc) * capacity_kwh / usage.efficiency
    trips = []
    for d in range(n_days):
        h = float(np.clip(rng.normal(usage.plug_in_mean_h, usage.plug_in_sd_h), 12.0, 23.5))
        miles = float(np.clip(rng.normal(usage.miles_mean, usage.miles_sd), 0.0, max_miles))
        k = int(round(d * DAY / dt + h * per_hour))
        if k >= n:
            continue
        trips.append(EvTrip(len(trips), k, miles, ev_initial_soc(miles, usage.efficiency, capacity_kwh)))
    return trips


# ---------------------------------------------------------------------------
# Scenario assembly
# ---------------------------------------------------------------------------


@dataclass
class ScenarioConfig:
    case_id: int = 1
    seed: int = 0
    days: int = 7
    start_day: int = 189
    dt: float = 600.0
    panel_area: float = 25.0  # m2
    initial_indoor: Optional[float] = None
    es_initial_soc: float = 0.2
    es_voltage: float = 50.0
    ev_voltage: float = 350.0
    mode_basis: str = "daily_mean"
    weather_path: Optional[str] = None
    tou: TouSchedule = DEFAULT_TOU
    activity: ActivityModel = field(default_factory=ActivityModel)
    ev: EvUsage = field(default_factory=EvUsage)
    house_area_ft2: Optional[float] = None

    def __post_init__(self):
        if self.days <= 0:
            raise ValueError("days must be positive")
        if self.mode_basis not in ("daily_mean", "instant"):
            raise ValueError("mode_basis must be 'daily_mean' or 'instant'")


@dataclass
class Scenario:
    cfg: ScenarioConfig
    case: CaseStudy
    house_area_ft2: float
    start_s: float
    times: np.ndarray  # s from start of year, one per step
    ambient: np.ndarray
    irradiance: np.ndarray
    mode_ambient: np.ndarray
    prices: np.ndarray
    nd_power: np.ndarray
    activities: ActivityStream
    ev_trips: list
    weather: WeatherTrace

    @property
    def n_steps(self) -> int:
        return len(self.times)

    @property
    def dt(self) -> float:
        return self.cfg.dt

    @property
    def floor_m2(self) -> float:
        return self.house_area_ft2 * FT2_TO_M2

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(repr((self.case.id, self.cfg.seed, self.cfg.days, self.cfg.start_day, self.cfg.dt,
                       self.house_area_ft2, self.cfg.panel_area)).encode())
        for a in (self.ambient, self.irradiance, self.prices, self.nd_power):
            h.update(np.ascontiguousarray(a).tobytes())
        for r in self.activities.requests:
            h.update(repr((r.appliance, r.enable_step, r.completion_steps)).encode())
        for t in self.ev_trips:
            h.update(repr((t.plug_in_step, t.soc0)).encode())
        return h.hexdigest()[:16]


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    case = load_case(cfg.case_id)
    ss = np.random.SeedSequence(cfg.seed)
    s_area, s_act, s_ev = ss.spawn(3)
    area = cfg.house_area_ft2
    if area is None:
        lo, hi = case.house_area_range
        area = float(np.random.default_rng(s_area).uniform(lo, hi))
    start_s = cfg.start_day * DAY
    end_s = start_s + cfg.days * DAY
    times, amb, irr, src = load_weather(case.location, start_s, end_s, cfg.dt, cfg.weather_path)
    if cfg.mode_basis == "daily_mean":
        day_ids = np.floor(times / DAY).astype(int)
        means = {d: src.daily_mean_ambient(d * DAY) for d in np.unique(day_ids)}
        mode_amb = np.array([means[d] for d in day_ids])
    else:
        mode_amb = amb.copy()
    prices = price_trace(cfg.tou, start_s, len(times), cfg.dt)
    acts = gen_activities(s_act, cfg.days, cfg.dt, cfg.start_day, cfg.activity)
    trips = gen_ev_trips(s_ev, cfg.days, case.xev_capacity, cfg.dt, cfg.ev)
    return Scenario(cfg, case, area, start_s, times, amb, irr, mode_amb, prices, acts.nd_power(), acts,
                    trips, src)
