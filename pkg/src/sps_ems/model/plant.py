# src/sps_ems/model/plant.py
"""
Continuous-time plant integrated by explicit Euler:

    l_g di_g/dt = -r_line i_g + v_g - v_c          (PGM line)
    c_g dv_c/dt = i_g + i_b - i_L                   (bus node)
    l_L di_L/dt = -r_L i_L + v~                     (PLM current sink)
    dq/dt       = -p_b / (Q_b v_c)                  (PCM state of charge)

PGM DLC:  v_g = v_c + kp e_g + integ_g,  e_g = r_line (p_ref / v_c - i_g)
PLM DLC:  v~  = kp e_L + integ_L,        e_L = p_L / v_c - i_L
PCM:      i_b = cmd_pb / v_c + g_droop (v_nom - v_c)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

from sps_ems.errors import DomainError, NumericalDivergenceError
from sps_ems.model.params import SystemParams


@dataclass(frozen=True, slots=True)
class PlantState:
    i_g: float
    v_c: float
    i_L: float
    soc: float
    pi_pgm_integ: float
    pi_plm_integ: float
    t: float = 0.0


class BusPowers(NamedTuple):
    p_g: float
    p_b: float
    p_load: float
    i_b: float
    residual: float  # p_load - p_g - p_b


def soc_update(soc: float, p_b: float, v_c: float, ts: float, capacity_as: float) -> float:
    """One Euler step of the SoC model. No clamping: bound violations are for the caller to see."""
    for name, val in (("soc", soc), ("p_b", p_b), ("v_c", v_c), ("ts", ts), ("capacity_as", capacity_as)):
        if not math.isfinite(val):
            raise DomainError(f"soc_update: {name} is not finite ({val!r})")
    if capacity_as <= 0.0 or v_c <= 0.0:
        raise DomainError(f"soc_update needs capacity_as > 0 and v_c > 0 (got {capacity_as}, {v_c})")
    return soc - (ts / (capacity_as * v_c)) * p_b


def pcm_current(v_c: float, cmd_pb: float, params: SystemParams) -> float:
    bus = params.bus
    return cmd_pb / v_c + bus.g_droop * (bus.v_nominal - v_c)


def bus_powers(state: PlantState, cmd_pb: float, params: SystemParams) -> BusPowers:
    """Branch powers measured at the bus for the given state."""
    v = state.v_c
    i_b = pcm_current(v, cmd_pb, params)
    p_g = v * state.i_g
    p_b = v * i_b
    p_load = v * state.i_L
    return BusPowers(p_g, p_b, p_load, i_b, p_load - p_g - p_b)


def initial_state(params: SystemParams, p_g0: float, p_load0: float, soc0: Optional[float] = None) -> PlantState:
    """Settled operating point at nominal bus voltage with DLC integrators at steady state."""
    v = params.bus.v_nominal
    i_g = p_g0 / v
    i_L = p_load0 / v
    return PlantState(
        i_g=i_g,
        v_c=v,
        i_L=i_L,
        soc=params.pcm.soc_init if soc0 is None else soc0,
        pi_pgm_integ=params.pgm.r_line * i_g,
        pi_plm_integ=params.plm.r_L * i_L,
        t=0.0,
    )


def plant_step(
    state: PlantState,
    cmd_pg: float,
    cmd_pb: float,
    p_load: float,
    dt: float,
    params: SystemParams,
) -> PlantState:
    """Advance every continuous state by one explicit-Euler step of length dt."""
    if not dt > 0.0:
        raise DomainError(f"plant_step needs dt > 0 (got {dt!r})")

    pgm, plm = params.pgm, params.plm
    v = state.v_c

    e_g = pgm.r_line * (cmd_pg / v - state.i_g)
    v_g = v + pgm.kp * e_g + state.pi_pgm_integ
    di_g = (-pgm.r_line * state.i_g + v_g - v) / pgm.l_g

    e_L = p_load / v - state.i_L
    v_tilde = plm.kp * e_L + state.pi_plm_integ
    di_L = (-plm.r_L * state.i_L + v_tilde) / plm.l_L

    i_b = pcm_current(v, cmd_pb, params)
    dv = (state.i_g + i_b - state.i_L) / pgm.c_g
    p_b = v * i_b
    if not math.isfinite(p_b):
        raise NumericalDivergenceError("p_b", p_b, state.t)

    nxt = PlantState(
        i_g=state.i_g + dt * di_g,
        v_c=v + dt * dv,
        i_L=state.i_L + dt * di_L,
        soc=soc_update(state.soc, p_b, v, dt, params.pcm.capacity_as),
        pi_pgm_integ=state.pi_pgm_integ + dt * pgm.ki * e_g,
        pi_plm_integ=state.pi_plm_integ + dt * plm.ki * e_L,
        t=state.t + dt,
    )
    _check_finite(nxt)
    return nxt


def dispatch_step(
    state: PlantState,
    cmd_pg: float,
    cmd_pb: float,
    p_load: float,
    dt: float,
    params: SystemParams,
) -> PlantState:
    """Dispatch fidelity: commands realised instantly, bus held at nominal voltage."""
    if not dt > 0.0:
        raise DomainError(f"dispatch_step needs dt > 0 (got {dt!r})")
    v = params.bus.v_nominal
    nxt = replace(
        state,
        i_g=cmd_pg / v,
        v_c=v,
        i_L=p_load / v,
        soc=soc_update(state.soc, cmd_pb, v, dt, params.pcm.capacity_as),
        t=state.t + dt,
    )
    _check_finite(nxt)
    return nxt


def _check_finite(state: PlantState) -> None:
    for name in ("i_g", "v_c", "i_L", "soc", "pi_pgm_integ", "pi_plm_integ"):
        val = getattr(state, name)
        if not math.isfinite(val):
            raise NumericalDivergenceError(name, val, state.t)
    if state.v_c <= 0.0:
        raise NumericalDivergenceError("v_c", state.v_c, state.t)
    if not 0.0 <= state.soc <= 1.0:
        raise NumericalDivergenceError("soc", state.soc, state.t)
