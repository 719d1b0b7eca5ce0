"""Regenerate the bundled parameter maps and example weather traces.

The weather traces are synthetic: monthly climate normals per city, a
diurnal cosine, day-to-day AR(1) noise and a clear-sky irradiance model
scaled by a random daily clearness index. They are meant to be realistic
in shape, not to reproduce any particular measured year.

    python tools/make_data.py
"""
import json
from pathlib import Path

import numpy as np

DATA = Path(__file__).resolve().parents[1] / "src" / "hemsim" / "data"

CITIES = {
    # latitude, monthly mean temperature [C], diurnal range [K], mean clearness
    "Columbus": (40.0, [-1.7, 0.3, 5.3, 11.6, 17.3, 22.2, 24.1, 23.2, 19.6, 13.0, 6.9, 1.1], 10.0, 0.62),
    "LosAngeles": (34.05, [14.0, 14.5, 15.3, 16.4, 17.8, 19.6, 21.8, 22.4, 22.0, 19.8, 16.6, 13.9], 8.0, 0.75),
    "SanAntonio": (29.4, [10.8, 13.0, 17.0, 21.0, 25.3, 28.6, 29.7, 29.9, 26.8, 21.7, 15.9, 11.6], 11.0, 0.68),
    "Boston": (42.36, [-1.5, -0.3, 3.4, 8.9, 14.6, 19.8, 23.1, 22.3, 18.6, 12.4, 6.9, 1.8], 8.0, 0.58),
}
MONTH_MID_DOY = np.array([15, 46, 74, 105, 135, 166, 196, 227, 258, 288, 319, 349])


def cell_maps():
    soc = [0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 1.0]
    ocv25 = [2.50, 3.00, 3.15, 3.22, 3.25, 3.27, 3.28, 3.29, 3.31, 3.33, 3.34, 3.36, 3.45]
    temps = [-40.0, -20.0, 0.0, 25.0, 45.0, 70.0]
    shift = [-0.03, -0.02, -0.01, 0.0, 0.005, 0.01]
    r25 = [0.020, 0.016, 0.015, 0.012, 0.012, 0.012, 0.012, 0.012, 0.012, 0.012, 0.013, 0.014, 0.015]
    rfac = [4.5, 3.0, 1.8, 1.0, 0.85, 0.8]
    return {
        "name": "LFP 3.2 V / 5 Ah",
        "nominal_voltage": 3.2,
        "capacity_ah": 5.0,
        "max_voltage": 3.65,
        "soc": soc,
        "temperature": temps,
        "ocv": [[v + s for s in shift] for v in ocv25],
        "r0": [[r * f for f in rfac] for r in r25],
    }


def pv_map():
    temps = [-40.0, -20.0, 0.0, 20.0, 40.0, 60.0]
    irr = [0.0, 200.0, 400.0, 600.0, 800.0, 1000.0, 1200.0, 1400.0]
    eta_ref, beta, noct = 0.18, 0.004, 45.0
    eta = []
    for t in temps:
        row = []
        for g in irr:
            t_cell = t + g * (noct - 20.0) / 800.0
            row.append(round(min(1.0, max(0.0, eta_ref * (1.0 - beta * (t_cell - 25.0)))), 6))
        eta.append(row)
    return {"ambient": temps, "irradiance": irr, "efficiency": eta}


def hvac():
    return {
        "supply_temp_cool": 12.0,
        "supply_temp_heat": 35.0,
        "cp_air": 1005.0,
        "shr": 0.8,
        "pressure_drop": 250.0,
        "fan_eff": 0.7,
        "air_density": 1.2,
        "mode_threshold": 20.0,
        "mass_flow_per_m2": 0.0034,
        "cop_map": {"delta_t": [0.0, 10.0, 20.0, 30.0, 40.0, 60.0], "cop": [4.0, 3.5, 2.9, 2.5, 2.2, 1.8]},
    }


def house():
    return {
        "ceiling_height": 2.44,
        "air_density": 1.2,
        "cv_air": 718.0,
        "thermal_mass_factor": 8.0,
        "ua_per_m2": 0.9,
    }


def clear_sky(lat, doy, hour):
    decl = np.deg2rad(23.45) * np.sin(2 * np.pi * (284 + doy) / 365.0)
    ha = np.deg2rad(15.0 * (hour - 12.0))
    phi = np.deg2rad(lat)
    sin_el = np.sin(phi) * np.sin(decl) + np.cos(phi) * np.cos(decl) * np.cos(ha)
    sin_el = np.clip(sin_el, 0.0, None)
    return 1100.0 * sin_el ** 1.15


def weather(city, seed):
    lat, normals, rng_k, clear = CITIES[city]
    rng = np.random.default_rng(seed)
    days = 365
    doy = np.arange(1, days + 1)
    # periodic interpolation of monthly normals
    xp = np.concatenate([MONTH_MID_DOY - 365, MONTH_MID_DOY, MONTH_MID_DOY + 365])
    fp = np.tile(normals, 3)
    daily_mean = np.interp(doy, xp, fp)
    noise = np.zeros(days)
    for d in range(1, days):
        noise[d] = 0.7 * noise[d - 1] + rng.normal(0.0, 1.4)
    daily_mean = daily_mean + noise
    kt = np.clip(rng.normal(clear, 0.15, size=days), 0.15, 0.95)
    rows = []
    for d in range(days):
        for h in range(24):
            t = daily_mean[d] + 0.5 * rng_k * np.cos(2 * np.pi * (h - 15) / 24.0)
            g = clear_sky(lat, d + 1, h + 0.5) * kt[d]
            rows.append((d * 86400 + h * 3600, round(float(t), 2), round(float(g), 1)))
    return rows


def main():
    (DATA / "cell_lfp_3v2_5ah.json").write_text(json.dumps(cell_maps(), indent=1) + "\n")
    (DATA / "pv_efficiency.json").write_text(json.dumps(pv_map(), indent=1) + "\n")
    (DATA / "hvac.json").write_text(json.dumps(hvac(), indent=1) + "\n")
    (DATA / "house.json").write_text(json.dumps(house(), indent=1) + "\n")
    for i, city in enumerate(CITIES):
        lines = ["time_s,ambient_C,irradiance_Wm2"]
        lines += [f"{t},{a},{g}" for t, a, g in weather(city, 1000 + i)]
        (DATA / "weather" / f"{city}.csv").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
