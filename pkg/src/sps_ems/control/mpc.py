# src/sps_ems/control/mpc.py
"""
Receding-horizon energy management.

Decision vector (per-unit powers, p / power_base):

    x = [p_g(1..H), p_b(1..H), q(1..H), s(1..H)]     (s only when relaxed)

    minimize  beta/2 |p_g - p_ref|^2 + gamma_p/2 |p_b|^2
              + gamma_q/2 |q - q0|^2 + slack_penalty/2 |s|^2

    p_g(k) + p_b(k) + s(k) = p_L                      power balance
    q(k) - q(k-1) + kappa p_b(k) = 0, q(0) = soc_now  SoC recursion
    |p_g(k) - p_g(k-1)| <= r_g, |p_b(k) - p_b(k-1)| <= r_b
    p_g, p_b, q inside their boxes

kappa = ts * power_base / (Q_as * V_nom). The load is held constant over
the horizon and the k = 1 ramp is taken against the previous command.
"""

from __future__ import annotations

import copy
import logging
import math
import os
import time
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from sps_ems.control.scenarios import ScenarioPreset
from sps_ems.errors import DomainError
from sps_ems.model.params import SystemParams
from sps_ems.solver.admm import QpSolver
from sps_ems.solver.qp import STATUS_OPTIMAL, QpProblem, ToleranceSet, dump_problem

logger = logging.getLogger(__name__)

# activity detection on per-unit powers and on SoC
ACTIVE_TOL_POWER = 1e-6
ACTIVE_TOL_SOC = 1e-9

STATUS_FALLBACK = "fallback"


class MpcConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    horizon: int = Field(5, ge=1)
    ts: float = Field(1.0, gt=0, description="MPC sample time [s]")
    beta: float = Field(1.0, ge=0)
    gamma_p: float = Field(0.0, ge=0)
    gamma_q: float = Field(0.0, ge=0)
    p_g_ref: float = Field(15e6, description="desired PGM operating point [W]")
    q0_ref: Optional[float] = Field(None, ge=0, le=1, description="SoC anchor; defaults to pcm.soc_init")
    power_base: Optional[float] = Field(None, gt=0, description="per-unit base [W]; defaults to pgm.p_max")
    slack_penalty: float = Field(1e6, gt=0, description="weight on per-unit balance slack squared")
    tolerances: ToleranceSet = ToleranceSet()

    @model_validator(mode="after")
    def _check_weights(self) -> "MpcConfig":
        if self.beta + self.gamma_p + self.gamma_q <= 0.0:
            raise ValueError("at least one of beta, gamma_p, gamma_q must be positive")
        return self

    def anchor(self, params: SystemParams) -> float:
        return params.pcm.soc_init if self.q0_ref is None else self.q0_ref

    def base(self, params: SystemParams) -> float:
        return params.pgm.p_max if self.power_base is None else self.power_base

    def with_preset(self, preset: ScenarioPreset) -> "MpcConfig":
        return self.model_copy(update={"beta": preset.beta, "gamma_p": preset.gamma_p, "gamma_q": preset.gamma_q})


@dataclass(frozen=True)
class HorizonLayout:
    """Column and row blocks of the horizon QP."""

    horizon: int
    relaxed: bool = False

    def _col(self, block: int) -> slice:
        return slice(block * self.horizon, (block + 1) * self.horizon)

    def _row(self, block: int) -> slice:
        return slice(block * self.horizon, (block + 1) * self.horizon)

    @property
    def n(self) -> int:
        return (4 if self.relaxed else 3) * self.horizon

    @property
    def m(self) -> int:
        return 7 * self.horizon

    pg = property(lambda self: self._col(0))
    pb = property(lambda self: self._col(1))
    q = property(lambda self: self._col(2))
    slack = property(lambda self: self._col(3))

    balance = property(lambda self: self._row(0))
    soc = property(lambda self: self._row(1))
    pg_ramp = property(lambda self: self._row(2))
    pb_ramp = property(lambda self: self._row(3))
    pg_box = property(lambda self: self._row(4))
    pb_box = property(lambda self: self._row(5))
    q_box = property(lambda self: self._row(6))


@dataclass(frozen=True)
class HorizonSolution:
    """Optimal sequences in watts (q as a fraction) with solver diagnostics."""

    p_g: np.ndarray
    p_b: np.ndarray
    q: np.ndarray
    objective: float
    status: str
    iterations: int
    primal_residual: float
    dual_residual: float
    slack: np.ndarray
    active: Tuple[Tuple[str, ...], ...]
    relaxed: bool = False
    polished: bool = False
    solve_time: float = field(default=0.0, compare=False)
    strict_status: str = STATUS_OPTIMAL
    raw: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def is_optimal(self) -> bool:
        return self.status == STATUS_OPTIMAL

    @property
    def log_status(self) -> str:
        """Status string for logs: strict outcome plus how the step was rescued."""
        if not self.relaxed:
            return self.status
        if self.status == STATUS_OPTIMAL:
            return f"relaxed:{self.strict_status}"
        return f"{STATUS_FALLBACK}:{self.strict_status}"

    @property
    def max_slack(self) -> float:
        return float(np.max(np.abs(self.slack))) if self.slack.size else 0.0


# ----------------------------------------------------------------------
# problem construction
# ----------------------------------------------------------------------
def _check_inputs(p_load: float, prev_pg: float, prev_pb: float, soc_now: float) -> None:
    for name, val in (("p_load", p_load), ("prev_pg", prev_pg), ("prev_pb", prev_pb), ("soc_now", soc_now)):
        if not math.isfinite(val):
            raise DomainError(f"{name} is not finite ({val!r})")
    if not 0.0 <= soc_now <= 1.0:
        raise DomainError(f"soc_now={soc_now} outside [0, 1]")


def _soc_gain(cfg: MpcConfig, params: SystemParams) -> float:
    return cfg.ts * cfg.base(params) / (params.pcm.capacity_as * params.bus.v_nominal)


def horizon_matrices(cfg: MpcConfig, params: SystemParams, relaxed: bool = False) -> Tuple[HorizonLayout, np.ndarray, np.ndarray, np.ndarray]:
    """(layout, P, c, A): the parts of the QP that do not depend on the measured state."""
    H = cfg.horizon
    L = HorizonLayout(H, relaxed)
    base = cfg.base(params)
    eye = np.eye(H)
    # first-difference operator; row 0 compares against the previous command (moved to the bounds)
    diff = eye - np.eye(H, k=-1)

    weights = [cfg.beta, cfg.gamma_p, cfg.gamma_q] + ([cfg.slack_penalty] if relaxed else [])
    P = np.diag(np.repeat(weights, H))
    c = np.zeros(L.n)
    c[L.pg] = -cfg.beta * cfg.p_g_ref / base
    c[L.q] = -cfg.gamma_q * cfg.anchor(params)

    A = np.zeros((L.m, L.n))
    A[L.balance, L.pg] = eye
    A[L.balance, L.pb] = eye
    if relaxed:
        A[L.balance, L.slack] = eye
    A[L.soc, L.q] = diff
    A[L.soc, L.pb] = _soc_gain(cfg, params) * eye
    A[L.pg_ramp, L.pg] = diff
    A[L.pb_ramp, L.pb] = diff
    A[L.pg_box, L.pg] = eye
    A[L.pb_box, L.pb] = eye
    A[L.q_box, L.q] = eye
    return L, P, c, A


def horizon_bounds(
    cfg: MpcConfig,
    params: SystemParams,
    layout: HorizonLayout,
    p_load: float,
    prev_pg: float,
    prev_pb: float,
    soc_now: float,
) -> Tuple[np.ndarray, np.ndarray]:
    base = cfg.base(params)
    pgm, pcm = params.pgm, params.pcm
    lo = np.empty(layout.m)
    up = np.empty(layout.m)

    lo[layout.balance] = up[layout.balance] = p_load / base

    lo[layout.soc] = up[layout.soc] = 0.0
    lo[layout.soc.start] = up[layout.soc.start] = soc_now

    rg = pgm.ramp_limit / base
    lo[layout.pg_ramp], up[layout.pg_ramp] = -rg, rg
    lo[layout.pg_ramp.start] = prev_pg / base - rg
    up[layout.pg_ramp.start] = prev_pg / base + rg

    rb = pcm.ramp_limit / base
    lo[layout.pb_ramp], up[layout.pb_ramp] = -rb, rb
    lo[layout.pb_ramp.start] = prev_pb / base - rb
    up[layout.pb_ramp.start] = prev_pb / base + rb

    lo[layout.pg_box], up[layout.pg_box] = pgm.p_min / base, pgm.p_max / base
    lo[layout.pb_box], up[layout.pb_box] = pcm.p_min / base, pcm.p_max / base
    lo[layout.q_box], up[layout.q_box] = pcm.soc_min, pcm.soc_max
    return lo, up


def build_horizon_qp(
    cfg: MpcConfig,
    params: SystemParams,
    p_load: float,
    prev_pg: float,
    prev_pb: float,
    soc_now: float,
    relaxed: bool = False,
) -> QpProblem:
    """The horizon QP in per-unit powers; see the module docstring for its layout."""
    _check_inputs(p_load, prev_pg, prev_pb, soc_now)
    layout, P, c, A = horizon_matrices(cfg, params, relaxed)
    lo, up = horizon_bounds(cfg, params, layout, p_load, prev_pg, prev_pb, soc_now)
    return QpProblem(P=P, c=c, A=A, lo=lo, up=up)


def objective_constant(cfg: MpcConfig, params: SystemParams) -> float:
    """Constant dropped from the QP objective (so the reported objective is the full cost)."""
    ref = cfg.p_g_ref / cfg.base(params)
    q0 = cfg.anchor(params)
    return 0.5 * cfg.horizon * (cfg.beta * ref**2 + cfg.gamma_q * q0**2)


def active_flags(
    params: SystemParams,
    base: float,
    p_g: np.ndarray,
    p_b: np.ndarray,
    q: np.ndarray,
    prev_pg: float,
    prev_pb: float,
) -> Tuple[Tuple[str, ...], ...]:
    """Names of the bounds each horizon step sits on."""
    pgm, pcm = params.pgm, params.pcm
    tol_w = ACTIVE_TOL_POWER * base
    dg = np.diff(np.concatenate([[prev_pg], p_g]))
    db = np.diff(np.concatenate([[prev_pb], p_b]))

    flags = []
    for k in range(p_g.size):
        checks = (
            ("pg_max", p_g[k] >= pgm.p_max - tol_w),
            ("pg_min", p_g[k] <= pgm.p_min + tol_w),
            ("pg_ramp_up", dg[k] >= pgm.ramp_limit - tol_w),
            ("pg_ramp_down", dg[k] <= -pgm.ramp_limit + tol_w),
            ("pb_max", p_b[k] >= pcm.p_max - tol_w),
            ("pb_min", p_b[k] <= pcm.p_min + tol_w),
            ("pb_ramp_up", db[k] >= pcm.ramp_limit - tol_w),
            ("pb_ramp_down", db[k] <= -pcm.ramp_limit + tol_w),
            ("soc_max", q[k] >= pcm.soc_max - ACTIVE_TOL_SOC),
            ("soc_min", q[k] <= pcm.soc_min + ACTIVE_TOL_SOC),
        )
        flags.append(tuple(name for name, hit in checks if hit))
    return tuple(flags)


# ----------------------------------------------------------------------
# controller
# ----------------------------------------------------------------------
class MpcController:
    """
    Owns the warm-start memory and the cached solvers of one receding-horizon
    loop. Not safe for concurrent calls; use one instance per simulation.
    """

    def __init__(self, cfg: MpcConfig, params: SystemParams):
        self.cfg = cfg
        self.params = params
        self.base = cfg.base(params)
        self._constant = objective_constant(cfg, params)
        self._solvers: Dict[bool, Tuple[HorizonLayout, np.ndarray, QpSolver]] = {}
        self._warm: Dict[bool, Tuple[np.ndarray, np.ndarray]] = {}
        # warm-started solves compared against a cold solve, and how many were no slower
        self.warm_compared = 0
        self.warm_not_worse = 0

    def _solver(self, relaxed: bool) -> Tuple[HorizonLayout, np.ndarray, QpSolver]:
        hit = self._solvers.get(relaxed)
        if hit is None:
            layout, P, c, A = horizon_matrices(self.cfg, self.params, relaxed)
            hit = (layout, c, QpSolver(P, A, self.cfg.tolerances))
            self._solvers[relaxed] = hit
        return hit

    def reset(self) -> None:
        self._warm.clear()

    def _solve(self, relaxed: bool, p_load: float, prev_pg: float, prev_pb: float, soc_now: float):
        layout, c, solver = self._solver(relaxed)
        lo, up = horizon_bounds(self.cfg, self.params, layout, p_load, prev_pg, prev_pb, soc_now)
        if _dump_enabled():
            dump_problem(QpProblem(P=solver.P, c=c, A=solver.A, lo=lo, up=up), tag="relaxed" if relaxed else "mpc")
        x0, y0 = self._warm.get(relaxed, (None, None))
        # shallow copy: shares the factor cache, keeps the pre-solve rho
        cold = copy.copy(solver) if x0 is not None and logger.isEnabledFor(logging.DEBUG) else None
        sol = solver.solve(c, lo, up, x0=x0, y0=y0)
        if cold is not None:
            self._compare_cold(cold, c, lo, up, sol.iterations)
        if sol.is_optimal:
            self._warm[relaxed] = (_shift(sol.x, layout), _shift(sol.duals, layout, rows=True))
        return layout, sol

    def _compare_cold(self, cold: QpSolver, c: np.ndarray, lo: np.ndarray, up: np.ndarray, warm_iters: int) -> None:
        ref = cold.solve(c, lo, up)
        self.warm_compared += 1
        if warm_iters <= ref.iterations:
            self.warm_not_worse += 1
        logger.debug(
            "warm start: %d iterations (cold %d); no slower in %d/%d solves",
            warm_iters, ref.iterations, self.warm_not_worse, self.warm_compared,
        )

    def step(self, p_load: float, prev_pg: float, prev_pb: float, soc_now: float) -> Tuple[float, float, HorizonSolution]:
        """Solve the horizon problem and return the first command pair (receding horizon)."""
        _check_inputs(p_load, prev_pg, prev_pb, soc_now)
        started = time.perf_counter()

        layout, sol = self._solve(False, p_load, prev_pg, prev_pb, soc_now)
        strict_status = sol.status
        relaxed = False
        if not sol.is_optimal:
            logger.warning(
                "horizon QP %s (p_load=%.4g W, soc=%.6f); relaxing power balance",
                strict_status, p_load, soc_now,
            )
            relaxed = True
            layout, sol = self._solve(True, p_load, prev_pg, prev_pb, soc_now)

        if not sol.is_optimal:
            logger.warning("relaxed QP %s; applying projected fallback command", sol.status)
            hs = self._fallback(p_load, prev_pg, prev_pb, soc_now, strict_status, sol.iterations)
        else:
            x = sol.x
            p_g = x[layout.pg] * self.base
            p_b = x[layout.pb] * self.base
            q = x[layout.q].copy()
            slack = x[layout.slack] * self.base if relaxed else np.zeros(layout.horizon)
            if relaxed and np.max(np.abs(slack)) > 0.0:
                logger.warning("power balance slack used: max %.4g W", float(np.max(np.abs(slack))))
            hs = HorizonSolution(
                p_g=p_g,
                p_b=p_b,
                q=q,
                objective=sol.objective + self._constant,
                status=sol.status,
                iterations=sol.iterations,
                primal_residual=sol.primal_residual,
                dual_residual=sol.dual_residual,
                slack=slack,
                active=active_flags(self.params, self.base, p_g, p_b, q, prev_pg, prev_pb),
                relaxed=relaxed,
                polished=sol.polished,
                strict_status=strict_status,
                raw=x.copy(),
            )

        hs = _with_time(hs, time.perf_counter() - started)
        logger.debug(
            "mpc solve: status=%s iters=%d prim=%.2e dual=%.2e polished=%s (%.4fs)",
            hs.log_status, hs.iterations, hs.primal_residual, hs.dual_residual, hs.polished, hs.solve_time,
        )
        return float(hs.p_g[0]), float(hs.p_b[0]), hs

    def _fallback(self, p_load, prev_pg, prev_pb, soc_now, strict_status, iterations) -> HorizonSolution:
        """Ramp- and box-limited projection of the balance point; keeps SoC inside its band."""
        pgm, pcm = self.params.pgm, self.params.pcm
        H = self.cfg.horizon
        kappa_w = _soc_gain(self.cfg, self.params) / self.base

        pg = float(np.clip(p_load, max(pgm.p_min, prev_pg - pgm.ramp_limit), min(pgm.p_max, prev_pg + pgm.ramp_limit)))
        pb_lo = max(pcm.p_min, prev_pb - pcm.ramp_limit, (soc_now - pcm.soc_max) / kappa_w)
        pb_hi = min(pcm.p_max, prev_pb + pcm.ramp_limit, (soc_now - pcm.soc_min) / kappa_w)
        pb = float(np.clip(p_load - pg, pb_lo, pb_hi)) if pb_lo <= pb_hi else float(np.clip(p_load - pg, pcm.p_min, pcm.p_max))

        p_g = np.full(H, pg)
        p_b = np.full(H, pb)
        q = soc_now - kappa_w * np.cumsum(p_b)
        return HorizonSolution(
            p_g=p_g,
            p_b=p_b,
            q=q,
            objective=float("nan"),
            status=STATUS_FALLBACK,
            iterations=iterations,
            primal_residual=float("nan"),
            dual_residual=float("nan"),
            slack=np.full(H, p_load - pg - pb),
            active=active_flags(self.params, self.base, p_g, p_b, q, prev_pg, prev_pb),
            relaxed=True,
            strict_status=strict_status,
        )


def _with_time(hs: HorizonSolution, dt: float) -> HorizonSolution:
    return replace(hs, solve_time=dt)


def _dump_enabled() -> bool:
    return bool(os.getenv("SPS_EMS_QP_DUMP_DIR"))


def _shift(v: np.ndarray, layout: HorizonLayout, rows: bool = False) -> np.ndarray:
    """Advance every horizon block by one step, repeating the last element."""
    out = v.copy()
    H = layout.horizon
    nblocks = (layout.m if rows else layout.n) // H
    for b in range(nblocks):
        blk = slice(b * H, (b + 1) * H)
        out[blk] = np.concatenate([v[blk][1:], v[blk][-1:]])
    return out


def mpc_step(
    cfg: MpcConfig,
    params: SystemParams,
    p_load: float,
    prev_pg: float,
    prev_pb: float,
    soc_now: float,
) -> Tuple[float, float, HorizonSolution]:
    """One cold-started receding-horizon solve."""
    return MpcController(cfg, params).step(p_load, prev_pg, prev_pb, soc_now)


def initial_commands(params: SystemParams, p_load0: float) -> Tuple[float, float]:
    """Startup commands: the PGM takes what it can of the initial load, the PCM the rest."""
    prev_pg = min(p_load0, params.pgm.p_max)
    return prev_pg, p_load0 - prev_pg
