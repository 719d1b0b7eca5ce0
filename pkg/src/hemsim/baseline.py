"""Rule-based reference controller: dead-band thermostat, surplus-driven
storage, and immediate dispatch of every deferrable request."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

CHARGE, IDLE, DISCHARGE = -1, 0, 1
SOC_CHARGE_MAX = 0.9
SOC_DISCHARGE_MIN = 0.2


@dataclass(frozen=True)
class DeadbandConfig:
    heat_setpoint: float = 22.0
    cool_setpoint: float = 18.0
    half_band: float = 0.5

    def __post_init__(self):
        if self.half_band <= 0:
            raise ValueError("half_band must be positive")


def hvac_deadband(cfg: DeadbandConfig, indoor: float, mode: str, prev_command: int) -> int:
    """Hysteresis thermostat; inside the band the previous command is held.

    ``mode`` is ``"cool"`` or ``"heat"`` (chosen by the caller from ambient
    against the mode threshold).
    """
    if mode == "cool":
        if indoor > cfg.cool_setpoint + cfg.half_band:
            return 1
        if indoor <= cfg.cool_setpoint - cfg.half_band:
            return 0
    elif mode == "heat":
        if indoor < cfg.heat_setpoint - cfg.half_band:
            return 1
        if indoor >= cfg.heat_setpoint + cfg.half_band:
            return 0
    else:
        raise ValueError(f"unknown HVAC mode {mode!r}")
    return int(prev_command)


def storage_rule(soc: float, p_solar: float, p_household: float) -> int:
    # Charge on surplus, discharge on deficit. The printed case table pairs
    # the conditions the other way round; the prose and observed behaviour
    # agree on this reading.
    if p_solar > p_household and soc < SOC_CHARGE_MAX:
        return CHARGE
    if p_solar < p_household and soc > SOC_DISCHARGE_MIN:
        return DISCHARGE
    return IDLE


class DispatchError(ValueError):
    pass


@dataclass(frozen=True)
class Request:
    appliance: str
    enable_step: int
    completion_steps: int


def immediate_dispatch(requests: Iterable[Request], n_steps: int) -> dict[str, np.ndarray]:
    """Binary command vectors with every request running from its enable step.

    Two requests for the same appliance whose blocks overlap are rejected.
    """
    out: dict[str, np.ndarray] = {}
    busy: dict[str, list[tuple[int, int]]] = {}
    for r in sorted(requests, key=lambda r: (r.appliance, r.enable_step)):
        lo, hi = r.enable_step, r.enable_step + r.completion_steps
        for a, b in busy.get(r.appliance, []):
            if lo < b and a < hi:
                raise DispatchError(
                    f"{r.appliance} request at step {lo} overlaps the one running over [{a}, {b})"
                )
        busy.setdefault(r.appliance, []).append((lo, hi))
        u = out.setdefault(r.appliance, np.zeros(n_steps, dtype=int))
        u[max(lo, 0):min(hi, n_steps)] = 1
    return out


def storage_current(rule: int, p_solar: float, p_household: float, voltage: float,
                    max_current: float) -> float:
    """Pack current that follows the surplus or deficit, within the current bound.

    The exact bus-side match is solved by the plant; this is the first-order
    request in amperes.
    """
    if rule == CHARGE:
        return -min(max_current, (p_solar - p_household) / voltage)
    if rule == DISCHARGE:
        return min(max_current, (p_household - p_solar) / voltage)
    return 0.0


class BaselineController:
    """Stateful wrapper holding the thermostat's last command."""

    name = "baseline"

    def __init__(self, cfg: DeadbandConfig | None = None):
        self.cfg = cfg or DeadbandConfig()
        self.prev_hvac = 0

    def hvac(self, indoor: float, mode: str) -> int:
        self.prev_hvac = hvac_deadband(self.cfg, indoor, mode, self.prev_hvac)
        return self.prev_hvac

    @staticmethod
    def storage(soc: float, p_solar: float, p_household: float) -> int:
        return storage_rule(soc, p_solar, p_household)

    @staticmethod
    def start_now(pending: Sequence) -> list:
        """Every pending deferrable request starts at its enable step."""
        return list(pending)
