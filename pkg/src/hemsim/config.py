"""YAML run/campaign configuration, validated against the bundled JSON schema."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import jsonschema
import yaml

from hemsim import data as _data
from hemsim.ga import GA_SETTINGS
from hemsim.optimizer import HemConfig
from hemsim.scenario import ActivityModel, EvUsage, ScenarioConfig, TouSchedule

DEFAULTS = {"case": 1, "seed": 0, "days": 7, "start_day": 189, "controllers": ["baseline", "hem"]}


class ConfigError(ValueError):
    pass


def schema() -> dict:
    return json.loads(_data.data_path("schemas/config.schema.json").read_text())


def validate(cfg: dict) -> list:
    """Schema diagnostics as readable strings; empty when valid."""
    v = jsonschema.Draft202012Validator(schema())
    out = []
    for err in sorted(v.iter_errors(cfg), key=lambda e: list(e.absolute_path)):
        where = "/".join(map(str, err.absolute_path)) or "<root>"
        out.append(f"{where}: {err.message}")
    return out


def load_config(path) -> dict:
    p = Path(path)
    if not p.exists() and _data.data_path(Path("campaigns") / p.name).exists():
        p = _data.data_path(Path("campaigns") / p.name)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = yaml.safe_load(p.read_text()) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"{p}: not valid YAML: {e}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    errs = validate(cfg)
    if errs:
        raise ConfigError(f"{p}: " + "; ".join(errs))
    return cfg


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class RunSpec:
    case: int
    seed: int
    days: int
    start_day: int
    controllers: tuple
    settings: dict = field(default_factory=dict)

    @property
    def name(self) -> str:
        return f"case{self.case:02d}_seed{self.seed}"

    def scenario_config(self) -> ScenarioConfig:
        s = self.settings
        kw = dict(s.get("scenario", {}))
        if "tou" in s:
            kw["tou"] = TouSchedule(**s["tou"])
        if "ev" in s:
            kw["ev"] = EvUsage(**s["ev"])
        if "activity" in s:
            kw["activity"] = replace(ActivityModel(), **s["activity"])
        return ScenarioConfig(case_id=self.case, seed=self.seed, days=self.days, start_day=self.start_day, **kw)

    def hem_config(self) -> HemConfig:
        o = dict(self.settings.get("optimizer", {}))
        ga = dict(GA_SETTINGS)
        for k, v in o.pop("ga", {}).items():
            ga[k] = replace(ga[k], **v)
        return HemConfig(ga=ga, **o)


def expand(cfg: dict, **cli) -> list:
    """Run list from a config mapping; explicit CLI values override the file."""
    base = _merge(DEFAULTS, {k: v for k, v in cfg.items() if k not in ("runs", "cases", "seeds")})
    base.update({k: v for k, v in cli.items() if v is not None})
    settings = {k: base[k] for k in ("scenario", "tou", "ev", "activity", "optimizer") if k in base}
    runs = []
    if "runs" in cfg:
        for r in cfg["runs"]:
            merged = _merge(settings, r.get("overrides", {}))
            errs = validate({k: v for k, v in merged.items()})
            if errs:
                raise ConfigError(f"run for case {r['case']}: " + "; ".join(errs))
            runs.append(RunSpec(r["case"], r.get("seed", base["seed"]), r.get("days", base["days"]),
                                r.get("start_day", base["start_day"]),
                                tuple(r.get("controllers", base["controllers"])), merged))
        return runs
    cases = [base["case"]] if cli.get("case") is not None or "cases" not in cfg else cfg["cases"]
    seeds = [base["seed"]] if cli.get("seed") is not None or "seeds" not in cfg else cfg["seeds"]
    for c in cases:
        for s in seeds:
            runs.append(RunSpec(c, s, base["days"], base["start_day"], tuple(base["controllers"]), settings))
    if not runs:
        raise ConfigError("campaign holds no runs")
    return runs


def build_specs(config_path: Optional[str] = None, **cli) -> list:
    cfg = load_config(config_path) if config_path else {}
    return expand(cfg, **cli)
