# src/sps_ems/degradation/capacity.py
"""
Ah-throughput capacity fade with an Arrhenius prefactor:

    Q_L = exp((-zeta1 + T_b * C_r) / (R * T_b)) * integral |i_b| dt / 3600

Throughput is carried in ampere-seconds, Q_L in ampere-hours.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from sps_ems.errors import DomainError

logger = logging.getLogger(__name__)

GAS_CONSTANT = 8.314


class DegradationParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    zeta1: float = Field(31700.0, gt=0, description="[J/mol]")
    gas_const: float = Field(GAS_CONSTANT, description="[J/(mol*K)], fixed")
    temp_b: float = Field(298.15, gt=0, description="battery temperature [K]")
    c_rate_mode: Literal["fixed", "from-current"] = "fixed"
    c_rate_fixed: float = Field(0.5, ge=0, description="[1/h]")
    c_rate_warn: float = Field(5.0, gt=0, description="C-rate above which a warning is logged")

    @field_validator("gas_const")
    @classmethod
    def _exact_gas_constant(cls, v: float) -> float:
        if v != GAS_CONSTANT:
            raise ValueError(f"gas_const is fixed at {GAS_CONSTANT}")
        return v


@dataclass(frozen=True, slots=True)
class DegradationState:
    ah_throughput: float = 0.0  # ampere-seconds
    q_loss: float = 0.0  # ampere-hours
    delta_q_pct: float = 100.0  # (Q_b - Q_L) / Q_b * 100
    loss_pct: float = 0.0  # Q_L / Q_b * 100


def arrhenius_factor(params: DegradationParams, c_rate_value: float) -> float:
    return math.exp((-params.zeta1 + params.temp_b * c_rate_value) / (params.gas_const * params.temp_b))


def capacity_loss(params: DegradationParams, ah_throughput: float, c_rate_value: Optional[float] = None) -> float:
    """Capacity lost [A*h] for a throughput given in ampere-seconds."""
    if not ah_throughput >= 0.0:
        raise DomainError(f"ah_throughput must be >= 0 (got {ah_throughput!r})")
    cr = params.c_rate_fixed if c_rate_value is None else c_rate_value
    return arrhenius_factor(params, cr) * (ah_throughput / 3600.0)


def c_rate(i_b: float, capacity_ahr: float) -> float:
    if not capacity_ahr > 0.0:
        raise DomainError(f"capacity_ahr must be > 0 (got {capacity_ahr!r})")
    return abs(i_b) / capacity_ahr


class CapacityFadeModel:
    """Accumulator bound to one battery; warns once per instance about extreme C-rates."""

    def __init__(self, params: Optional[DegradationParams] = None, capacity_ahr: float = 20.0):
        if not capacity_ahr > 0.0:
            raise DomainError(f"capacity_ahr must be > 0 (got {capacity_ahr!r})")
        self.params = params or DegradationParams()
        self.capacity_ahr = capacity_ahr
        self._warned = False

    def initial(self) -> DegradationState:
        return DegradationState()

    def accumulate(self, state: DegradationState, i_b: float, dt: float) -> DegradationState:
        if not math.isfinite(i_b):
            raise DomainError(f"battery current is not finite ({i_b!r})")
        if not dt > 0.0:
            raise DomainError(f"dt must be > 0 (got {dt!r})")
        if i_b == 0.0:
            return state

        cr = c_rate(i_b, self.capacity_ahr)
        if cr > self.params.c_rate_warn and not self._warned:
            self._warned = True
            logger.warning(
                "battery C-rate %.2f exceeds %.2f (|i_b| = %.1f A on %.1f Ah)",
                cr, self.params.c_rate_warn, abs(i_b), self.capacity_ahr,
            )

        throughput = state.ah_throughput + abs(i_b) * dt
        if self.params.c_rate_mode == "fixed":
            q_loss = capacity_loss(self.params, throughput)
        else:
            # rate-dependent prefactor moves inside the integral
            q_loss = state.q_loss + capacity_loss(self.params, abs(i_b) * dt, cr)
        return self._with_loss(replace(state, ah_throughput=throughput), q_loss)

    def _with_loss(self, state: DegradationState, q_loss: float) -> DegradationState:
        cap = self.capacity_ahr
        return replace(
            state,
            q_loss=q_loss,
            delta_q_pct=(cap - q_loss) / cap * 100.0,
            loss_pct=q_loss / cap * 100.0,
        )


def accumulate(
    state: DegradationState,
    i_b: float,
    dt: float,
    model: Optional[CapacityFadeModel] = None,
) -> DegradationState:
    """Add |i_b| * dt to the throughput and recompute the loss figures."""
    return (model or CapacityFadeModel()).accumulate(state, i_b, dt)
