# src/sps_ems/pipeline/orchestrator.py

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from sps_ems.control.mpc import HorizonSolution, MpcConfig, MpcController, initial_commands
from sps_ems.control.scenarios import scenario_weights
from sps_ems.degradation.capacity import CapacityFadeModel, DegradationParams, DegradationState
from sps_ems.errors import NumericalDivergenceError, SimulationAbortedError
from sps_ems.model.params import SystemParams
from sps_ems.model.plant import PlantState, bus_powers, dispatch_step, initial_state, pcm_current, plant_step
from sps_ems.model.profile import LoadProfile, load_power

logger = logging.getLogger(__name__)

CUSTOM_SCENARIO = "custom"
_GRID_TOL = 1e-9

LOG_COLUMNS = (
    "t",
    "p_load",
    "cmd_pg",
    "cmd_pb",
    "p_g",
    "p_b",
    "v_c",
    "soc",
    "ah_throughput",
    "q_loss",
    "delta_q_pct",
    "loss_pct",
    "balance_residual",
    "mpc_boundary",
    "status",
    "iterations",
    "active",
    "slack",
)

SOLVE_COLUMNS = (
    "t",
    "p_load",
    "prev_pg",
    "prev_pb",
    "soc",
    "cmd_pg",
    "cmd_pb",
    "status",
    "iterations",
    "primal_residual",
    "dual_residual",
    "objective",
    "polished",
    "relaxed",
    "max_slack",
)


def _ratio(a: float, b: float) -> int:
    """a / b as an integer, or -1 if it is not one."""
    r = a / b
    k = int(round(r))
    return k if abs(r - k) <= _GRID_TOL * max(1.0, abs(r)) else -1


class RunSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    scenario: str = "scenario-1"
    system: SystemParams = SystemParams()
    mpc: MpcConfig = MpcConfig()
    degradation: DegradationParams = DegradationParams()
    profile: LoadProfile = LoadProfile()
    mode: Literal["device", "dispatch"] = "device"
    t_final: Optional[float] = Field(None, gt=0, description="defaults to the profile end")
    plant_dt: float = Field(1e-3, gt=0)
    mpc_period: float = Field(1.0, gt=0)
    log_period: Optional[float] = Field(None, gt=0, description="device mode only; defaults to 0.1 s")
    seed: int = 0
    max_consecutive_failures: int = Field(3, ge=0)

    @model_validator(mode="after")
    def _check_timing(self) -> "RunSpec":
        if self.scenario != CUSTOM_SCENARIO:
            scenario_weights(self.scenario)
        if _ratio(self.mpc_period, self.plant_dt) < 1:
            raise ValueError(f"mpc_period ({self.mpc_period}) must be an integer multiple of plant_dt ({self.plant_dt})")
        if abs(self.mpc.ts - self.mpc_period) > _GRID_TOL * self.mpc_period:
            raise ValueError(f"mpc.ts ({self.mpc.ts}) must equal mpc_period ({self.mpc_period})")
        t_final = self.horizon_end
        if t_final < self.mpc_period:
            raise ValueError(f"t_final ({t_final}) must be >= mpc_period ({self.mpc_period})")
        if t_final > self.profile.t_final + _GRID_TOL:
            raise ValueError(f"t_final ({t_final}) exceeds the load profile end ({self.profile.t_final})")
        if _ratio(t_final, self.mpc_period) < 1:
            raise ValueError(f"t_final ({t_final}) must be an integer multiple of mpc_period ({self.mpc_period})")
        if self.mode == "device":
            log_period = self.device_log_period
            if _ratio(log_period, self.plant_dt) < 1 or _ratio(self.mpc_period, log_period) < 1:
                raise ValueError(
                    f"log_period ({log_period}) must be a multiple of plant_dt and divide mpc_period"
                )
        return self

    @property
    def horizon_end(self) -> float:
        return self.profile.t_final if self.t_final is None else self.t_final

    @property
    def device_log_period(self) -> float:
        return 0.1 if self.log_period is None else self.log_period

    def resolved_mpc(self) -> MpcConfig:
        """MPC config with the scenario's weights applied."""
        if self.scenario == CUSTOM_SCENARIO:
            return self.mpc
        return self.mpc.with_preset(scenario_weights(self.scenario))


class LogRow(NamedTuple):
    t: float
    p_load: float
    cmd_pg: float
    cmd_pb: float
    p_g: float
    p_b: float
    v_c: float
    soc: float
    ah_throughput: float
    q_loss: float
    delta_q_pct: float
    loss_pct: float
    balance_residual: float
    mpc_boundary: int
    status: str
    iterations: int
    active: str
    slack: float


@dataclass(frozen=True)
class SolveRecord:
    """Diagnostics of one MPC solve; horizon sequences kept for figure export."""

    t: float
    p_load: float
    prev_pg: float
    prev_pb: float
    soc: float
    cmd_pg: float
    cmd_pb: float
    status: str
    iterations: int
    primal_residual: float
    dual_residual: float
    objective: float
    polished: bool
    relaxed: bool
    max_slack: float
    p_g: Tuple[float, ...]
    p_b: Tuple[float, ...]
    q: Tuple[float, ...]
    active: Tuple[Tuple[str, ...], ...]
    solve_time: float = field(default=0.0, compare=False)

    @property
    def is_optimal(self) -> bool:
        return self.status == "optimal"


@dataclass
class SimLog:
    scenario: str
    mode: str
    rows: List[LogRow] = field(default_factory=list)
    solves: List[SolveRecord] = field(default_factory=list)
    meta: Dict[str, Any] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame.from_records(self.rows, columns=list(LOG_COLUMNS))

    def solves_frame(self) -> pd.DataFrame:
        records = [[getattr(s, c) for c in SOLVE_COLUMNS] for s in self.solves]
        return pd.DataFrame.from_records(records, columns=list(SOLVE_COLUMNS))

    def column(self, name: str) -> np.ndarray:
        idx = LOG_COLUMNS.index(name)
        return np.array([r[idx] for r in self.rows])

    @property
    def final(self) -> LogRow:
        return self.rows[-1]


def _solve_record(t: float, p_load: float, prev_pg: float, prev_pb: float, soc: float, hs: HorizonSolution) -> SolveRecord:
    return SolveRecord(
        t=t,
        p_load=p_load,
        prev_pg=prev_pg,
        prev_pb=prev_pb,
        soc=soc,
        cmd_pg=float(hs.p_g[0]),
        cmd_pb=float(hs.p_b[0]),
        status=hs.log_status,
        iterations=hs.iterations,
        primal_residual=hs.primal_residual,
        dual_residual=hs.dual_residual,
        objective=hs.objective,
        polished=hs.polished,
        relaxed=hs.relaxed,
        max_slack=hs.max_slack,
        p_g=tuple(float(v) for v in hs.p_g),
        p_b=tuple(float(v) for v in hs.p_b),
        q=tuple(float(v) for v in hs.q),
        active=hs.active,
        solve_time=hs.solve_time,
    )


def run(spec: RunSpec) -> SimLog:
    """
    Co-simulate plant and MPC:
    - plant stepped at plant_dt (device) or at the MPC period (dispatch)
    - MPC solved at every boundary from the measured load and SoC
    - commands held (zero-order hold) until the next boundary
    - Ah-throughput accumulated at the stepping rate
    """
    params = spec.system
    cfg = spec.resolved_mpc()
    profile = spec.profile
    t_final = spec.horizon_end
    dispatch = spec.mode == "dispatch"

    dt = spec.mpc_period if dispatch else spec.plant_dt
    n_steps = _ratio(t_final, dt)
    steps_per_mpc = 1 if dispatch else _ratio(spec.mpc_period, dt)
    steps_per_log = 1 if dispatch else _ratio(spec.device_log_period, dt)

    p_load0 = load_power(profile, 0.0)
    prev_pg, prev_pb = initial_commands(params, p_load0)
    state = initial_state(params, prev_pg, p_load0)
    controller = MpcController(cfg, params)
    fade = CapacityFadeModel(spec.degradation, params.pcm.capacity_ahr)
    deg = fade.initial()

    log = SimLog(
        scenario=spec.scenario,
        mode=spec.mode,
        meta={
            "scenario": spec.scenario,
            "mode": spec.mode,
            "t_final": t_final,
            "mpc_period": spec.mpc_period,
            "plant_dt": dt,
            "seed": spec.seed,
            "q0": cfg.anchor(params),
            "weights": {"beta": cfg.beta, "gamma_p": cfg.gamma_p, "gamma_q": cfg.gamma_q},
            "pgm_ramp_limit": params.pgm.ramp_limit,
            "pcm_ramp_limit": params.pcm.ramp_limit,
            "soc_min": params.pcm.soc_min,
            "soc_max": params.pcm.soc_max,
            "capacity_ahr": params.pcm.capacity_ahr,
            "initial_commands": [prev_pg, prev_pb],
            "profile": [[s.t_start, s.t_end, s.power] for s in profile.segments],
        },
    )

    logger.info(
        "run %s (%s mode): t_final=%.3gs, %d MPC solves, beta=%g gamma_p=%g gamma_q=%g",
        spec.scenario, spec.mode, t_final, n_steps // steps_per_mpc, cfg.beta, cfg.gamma_p, cfg.gamma_q,
    )

    cmd_pg, cmd_pb = prev_pg, prev_pb
    last: Optional[HorizonSolution] = None
    failures = 0

    for k in range(n_steps + 1):
        t = round(k * dt, 12)
        p_load = load_power(profile, min(t, profile.t_final))
        boundary = k % steps_per_mpc == 0 and k < n_steps

        if boundary:
            cmd_pg, cmd_pb, last = controller.step(p_load, prev_pg, prev_pb, state.soc)
            log.solves.append(_solve_record(t, p_load, prev_pg, prev_pb, state.soc, last))
            prev_pg, prev_pb = cmd_pg, cmd_pb

            failures = 0 if last.is_optimal else failures + 1
            if failures > spec.max_consecutive_failures:
                log.rows.append(_row(t, p_load, cmd_pg, cmd_pb, state, deg, params, dispatch, True, last))
                raise SimulationAbortedError(
                    f"{spec.scenario}: {failures} consecutive MPC solves without an optimal solution "
                    f"(last status {last.log_status} at t={t:.3f}s)",
                    log,
                )

        if k % steps_per_log == 0 or k == n_steps:
            log.rows.append(_row(t, p_load, cmd_pg, cmd_pb, state, deg, params, dispatch, boundary, last))
        if k == n_steps:
            break

        try:
            if dispatch:
                deg = fade.accumulate(deg, cmd_pb / params.bus.v_nominal, dt)
                state = dispatch_step(state, cmd_pg, cmd_pb, p_load, dt, params)
            else:
                deg = fade.accumulate(deg, pcm_current(state.v_c, cmd_pb, params), dt)
                state = plant_step(state, cmd_pg, cmd_pb, p_load, dt, params)
        except NumericalDivergenceError as e:
            raise SimulationAbortedError(f"{spec.scenario}: {e}", log) from e

    relaxed = sum(1 for s in log.solves if s.relaxed)
    log.meta["relaxed_steps"] = relaxed
    logger.info(
        "run %s done: final Q_L=%.6e Ah, throughput=%.6g A*s, soc=%.6f, relaxed steps=%d",
        spec.scenario, deg.q_loss, deg.ah_throughput, state.soc, relaxed,
    )
    return log


def _row(
    t: float,
    p_load: float,
    cmd_pg: float,
    cmd_pb: float,
    state: PlantState,
    deg: DegradationState,
    params: SystemParams,
    dispatch: bool,
    boundary: bool,
    hs: Optional[HorizonSolution],
) -> LogRow:
    if dispatch:
        # commands realised exactly
        p_g, p_b = cmd_pg, cmd_pb
        residual = p_load - p_g - p_b
    else:
        bp = bus_powers(state, cmd_pb, params)
        p_g, p_b, residual = bp.p_g, bp.p_b, bp.residual
    return LogRow(
        t=t,
        p_load=p_load,
        cmd_pg=cmd_pg,
        cmd_pb=cmd_pb,
        p_g=p_g,
        p_b=p_b,
        v_c=state.v_c,
        soc=state.soc,
        ah_throughput=deg.ah_throughput,
        q_loss=deg.q_loss,
        delta_q_pct=deg.delta_q_pct,
        loss_pct=deg.loss_pct,
        balance_residual=residual,
        mpc_boundary=int(boundary),
        status="" if hs is None else hs.log_status,
        iterations=0 if hs is None else hs.iterations,
        active="" if hs is None else "|".join(hs.active[0]),
        slack=0.0 if hs is None else float(hs.slack[0]),
    )
