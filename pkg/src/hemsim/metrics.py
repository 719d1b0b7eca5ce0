"""Run ledger, its persistence, and the evaluation metrics computed from it."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

EVENT_COLUMNS = ("request_id", "appliance", "enable", "deadline", "completion_steps", "activation", "done",
                 "steps_run", "late")


class LedgerIntegrityError(ValueError):
    pass


class EmptyLedgerError(ValueError):
    pass


class FingerprintMismatch(ValueError):
    pass


@dataclass
class RunLedger:
    steps: dict  # column -> ndarray, one entry per control step
    events: list  # request records
    meta: dict  # deterministic run description
    telemetry: dict = field(default_factory=dict)  # wall-clock data, not part of the byte-stable record

    def __post_init__(self):
        n = {len(v) for v in self.steps.values()}
        if len(n) > 1:
            raise LedgerIntegrityError("ledger columns have different lengths")
        if "time_s" in self.steps and np.any(np.diff(self.steps["time_s"]) <= 0):
            raise LedgerIntegrityError("ledger clock is not monotone")

    @property
    def n_steps(self) -> int:
        return len(next(iter(self.steps.values()))) if self.steps else 0

    @property
    def dt(self) -> float:
        return float(self.meta.get("dt", 600.0))

    def col(self, name) -> np.ndarray:
        return self.steps[name]


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def steps_csv(ledger: RunLedger) -> str:
    cols = list(ledger.steps)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for k in range(ledger.n_steps):
        w.writerow([_fmt(ledger.steps[c][k]) for c in cols])
    return buf.getvalue()


def events_csv(ledger: RunLedger) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVENT_COLUMNS)
    for e in ledger.events:
        w.writerow([_fmt(e[c]) for c in EVENT_COLUMNS])
    return buf.getvalue()


def write_ledger(ledger: RunLedger, directory, stem: str) -> dict:
    """Write ``<stem>.steps.csv``, ``<stem>.events.csv`` and the ``<stem>.meta.json`` sidecar."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    s_txt, e_txt = steps_csv(ledger), events_csv(ledger)
    paths = {"steps": d / f"{stem}.steps.csv", "events": d / f"{stem}.events.csv", "meta": d / f"{stem}.meta.json"}
    paths["steps"].write_text(s_txt)
    paths["events"].write_text(e_txt)
    side = {
        "meta": ledger.meta,
        "rows": ledger.n_steps,
        "events": len(ledger.events),
        "sha256": {"steps": hashlib.sha256(s_txt.encode()).hexdigest(),
                   "events": hashlib.sha256(e_txt.encode()).hexdigest()},
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "wall": ledger.telemetry,
    }
    paths["meta"].write_text(json.dumps(side, indent=1, sort_keys=True))
    return paths


def _parse(v: str):
    if v in ("True", "False"):
        return v == "True"
    for conv in (int, float):
        try:
            return conv(v)
        except ValueError:
            pass
    return float("nan") if v == "" else v


def read_ledger(path) -> RunLedger:
    """Load a ledger from its steps CSV (or common stem); validates against the sidecar."""
    p = Path(path)
    stem = p.name
    for suf in (".steps.csv", ".events.csv", ".meta.json"):
        if stem.endswith(suf):
            stem = stem[: -len(suf)]
    d = p.parent
    sp, ep, mp = d / f"{stem}.steps.csv", d / f"{stem}.events.csv", d / f"{stem}.meta.json"
    for f in (sp, ep, mp):
        if not f.exists():
            raise FileNotFoundError(f"ledger file missing: {f}")
    side = json.loads(mp.read_text())
    s_txt = sp.read_text()
    lines = s_txt.splitlines()
    if len(lines) <= 1:
        raise EmptyLedgerError(f"ledger {sp} holds no step records")
    header = lines[0].split(",")
    body = lines[1:]
    partial_tail = not s_txt.endswith("\n")
    rows = []
    for i, line in enumerate(body):
        parts = line.split(",")
        if len(parts) != len(header) or (partial_tail and i == len(body) - 1):
            raise LedgerIntegrityError(f"ledger {sp} is truncated; last valid record is {i - 1}")
        rows.append(parts)
    if len(rows) != side["rows"]:
        raise LedgerIntegrityError(
            f"ledger {sp} has {len(rows)} of {side['rows']} records; last valid record is {len(rows) - 1}")
    if hashlib.sha256(s_txt.encode()).hexdigest() != side["sha256"]["steps"]:
        raise LedgerIntegrityError(f"ledger {sp} does not match its checksum")
    steps = {c: np.array([float(r[j]) for r in rows]) for j, c in enumerate(header)}
    e_txt = ep.read_text()
    if hashlib.sha256(e_txt.encode()).hexdigest() != side["sha256"]["events"]:
        raise LedgerIntegrityError(f"event log {ep} does not match its checksum")
    events = []
    for r in csv.DictReader(io.StringIO(e_txt)):
        e = {k: _parse(v) for k, v in r.items()}
        e["appliance"] = r["appliance"]
        e["steps_run"] = r["steps_run"]
        events.append(e)
    return RunLedger(steps, events, side["meta"], side.get("wall", {}))


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def grid_cost(ledger: RunLedger) -> float:
    """Sum of price x grid energy, in $ (price in $/kWh, power in W)."""
    g, c = ledger.col("p_grid"), ledger.col("price")
    return float(np.sum(g * c) * ledger.dt / 3600.0 / 1000.0)


def comfort_cost(ledger: RunLedger) -> float:
    """Sum of (T_a - T_set)^2 over steps, K^2 x steps."""
    d = ledger.col("indoor") - ledger.col("t_set")
    return float(np.sum(d * d))


def band_violations(ledger: RunLedger) -> int:
    return int(np.sum(ledger.col("flag_band") > 0))


def _steps_run(e) -> list:
    s = e["steps_run"]
    if isinstance(s, (int, float)):
        return [int(s)]
    return [int(x) for x in str(s).split()] if str(s).strip() else []


def _request_powers(ledger: RunLedger, e) -> tuple[np.ndarray, np.ndarray]:
    """(steps, actual W at those steps) for a request."""
    steps = np.array(_steps_run(e), dtype=int)
    if steps.size == 0:
        return steps, np.zeros(0)
    col = {"xev": "p_xev", "laundry": "p_laundry", "dishwasher": "p_dishwasher"}[e["appliance"]]
    if e["activation"] < 0 or steps[0] < e["enable"]:
        raise LedgerIntegrityError(f"request {e['request_id']} runs without a matching enable")
    return steps, ledger.col(col)[steps]


def request_deferred_energy(ledger: RunLedger, e) -> float:
    """Wh of the request served outside its immediate-dispatch profile.

    The counterfactual places the realised power sequence contiguously from
    the enable step; the deferred part is the positive difference between
    that profile and the actual one, step by step.
    """
    steps, p = _request_powers(ledger, e)
    if steps.size == 0:
        return 0.0
    imm_steps = e["enable"] + np.arange(steps.size)
    imm = dict(zip(imm_steps.tolist(), p.tolist()))
    act = dict(zip(steps.tolist(), p.tolist()))
    tot = 0.0
    for k, v in imm.items():
        tot += max(0.0, v - act.get(k, 0.0))
    return tot * ledger.dt / 3600.0


def deferrable_energy(ledger: RunLedger) -> float:
    """Wh of all deferrable requests served."""
    tot = 0.0
    for e in ledger.events:
        _, p = _request_powers(ledger, e)
        tot += float(p.sum())
    return tot * ledger.dt / 3600.0


def deferred_power(ledger: RunLedger) -> float:
    """Wh deferred relative to immediate dispatch, summed over requests."""
    return float(sum(request_deferred_energy(ledger, e) for e in ledger.events))


def total_delay(ledger: RunLedger) -> int:
    """Steps between enable and first activation, summed over requests."""
    return int(sum(e["activation"] - e["enable"] for e in ledger.events if e["activation"] >= 0))


def deferral_efficiency(deferred: float, deferrable: float) -> float:
    """Percentage of deferrable energy actually deferred; NaN (not applicable) without deferrable energy."""
    if deferrable <= 0:
        return float("nan")
    return 100.0 * deferred / deferrable


def solar_split(ledger: RunLedger) -> dict:
    """Shares of utilised solar feeding loads directly and charging storage, plus curtailment.

    ``direct`` and ``stored`` are percent of utilised solar and add to 100;
    ``curtailed`` is percent of generation.
    """
    used = float(ledger.col("p_solar").sum())
    stored = float(ledger.col("p_solar_stored").sum())
    curt = float(ledger.col("p_curtailed").sum())
    gen = used + curt
    if used <= 0:
        return {"direct": float("nan"), "stored": 0.0, "curtailed": 100.0 if gen > 0 else 0.0}
    return {"direct": 100.0 * (used - stored) / used, "stored": 100.0 * stored / used,
            "curtailed": 100.0 * curt / gen if gen > 0 else 0.0}


def ah_throughput(ledger: RunLedger) -> float:
    """Cumulative |I| dt of the stationary pack, Ah."""
    return float(np.sum(np.abs(ledger.col("u_es"))) * ledger.dt / 3600.0)


@dataclass
class MetricsReport:
    grid_cost: float  # $
    comfort_cost: float  # K^2 steps
    band_violations: int  # steps
    total_delay: int  # steps
    deferred_energy: float  # MWh
    deferrable_energy: float  # MWh
    deferral_efficiency: float  # %
    solar_direct: float  # % of utilised solar
    solar_stored: float  # % of utilised solar
    solar_curtailed: float  # % of generation
    ah_throughput: float  # Ah
    grid_energy: float  # kWh
    peak_grid: float  # W
    n_steps: int
    fingerprint: str = ""
    controller: str = ""

    def as_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(_json_safe(self.as_dict()), indent=1, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("metric", "value", "unit"))
        for k, v in self.as_dict().items():
            w.writerow((k, _fmt(v), UNITS.get(k, "")))
        return buf.getvalue()


UNITS = {
    "grid_cost": "$", "comfort_cost": "K^2*step", "band_violations": "step", "total_delay": "step",
    "deferred_energy": "MWh", "deferrable_energy": "MWh", "deferral_efficiency": "%", "solar_direct": "%",
    "solar_stored": "%", "solar_curtailed": "%", "ah_throughput": "Ah", "grid_energy": "kWh", "peak_grid": "W",
    "n_steps": "step",
}


def _json_safe(d):
    if isinstance(d, dict):
        return {k: _json_safe(v) for k, v in d.items()}
    if isinstance(d, float) and not math.isfinite(d):
        return None
    return d


def report(ledger: RunLedger) -> MetricsReport:
    if ledger.n_steps == 0:
        raise EmptyLedgerError("cannot report on an empty ledger")
    deferred = deferred_power(ledger)
    deferrable = deferrable_energy(ledger)
    split = solar_split(ledger)
    return MetricsReport(
        grid_cost=grid_cost(ledger),
        comfort_cost=comfort_cost(ledger),
        band_violations=band_violations(ledger),
        total_delay=total_delay(ledger),
        deferred_energy=deferred / 1e6,
        deferrable_energy=deferrable / 1e6,
        deferral_efficiency=deferral_efficiency(deferred, deferrable),
        solar_direct=split["direct"],
        solar_stored=split["stored"],
        solar_curtailed=split["curtailed"],
        ah_throughput=ah_throughput(ledger),
        grid_energy=float(ledger.col("p_grid").sum() * ledger.dt / 3.6e6),
        peak_grid=float(ledger.col("p_grid").max()),
        n_steps=ledger.n_steps,
        fingerprint=str(ledger.meta.get("fingerprint", "")),
        controller=str(ledger.meta.get("controller", "")),
    )


def replay(path) -> MetricsReport:
    return report(read_ledger(path))


COMPARED = ("grid_cost", "comfort_cost", "band_violations", "total_delay", "deferred_energy",
            "deferrable_energy", "deferral_efficiency", "solar_direct", "solar_stored", "solar_curtailed",
            "ah_throughput", "grid_energy", "peak_grid")


def compare(base: MetricsReport, hem: MetricsReport) -> list:
    """Rows of (metric, baseline, hem, delta, delta %) with delta = hem - baseline."""
    if base.fingerprint != hem.fingerprint:
        raise FingerprintMismatch(f"scenario fingerprints differ: {base.fingerprint} vs {hem.fingerprint}")
    rows = []
    for m in COMPARED:
        b, h = float(getattr(base, m)), float(getattr(hem, m))
        d = 0.0 if math.isnan(b) and math.isnan(h) else h - b
        pct = 100.0 * d / abs(b) if b not in (0.0,) and math.isfinite(b) else (0.0 if d == 0 else float("nan"))
        rows.append({"metric": m, "baseline": b, "hem": h, "delta": d, "delta_pct": pct, "unit": UNITS.get(m, "")})
    return rows


def comparison_csv(rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    keys = ("metric", "baseline", "hem", "delta", "delta_pct", "unit")
    w.writerow(keys)
    for r in rows:
        w.writerow([_fmt(r[k]) for k in keys])
    return buf.getvalue()
