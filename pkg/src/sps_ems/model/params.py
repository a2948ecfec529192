# src/sps_ems/model/params.py
"""
Physical and rating constants of the lumped shipboard power system:
one PGM (generator), one PCM (battery) and one PLM (pulsed load) on a
common DC bus. All quantities are SI except `PcmParams.capacity_ahr`.
"""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field, model_validator


class _Params(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PgmParams(_Params):
    """Generator branch: controllable voltage source behind an RL line, bus capacitance."""

    l_g: float = Field(1e-3, gt=0, description="line inductance [H]")
    r_line: float = Field(0.1, ge=0, description="line resistance [ohm]")
    c_g: float = Field(10e-3, gt=0, description="bus capacitance [F]")
    p_min: float = Field(0.2e6, description="lower power limit [W]")
    p_max: float = Field(28e6, description="upper power limit [W]")
    ramp_limit: float = Field(2.8e6, gt=0, description="max change per MPC step [W]")
    # PI on the voltage error r_line * (i_ref - i_g); the PI zero cancels the
    # slow plant pole, leaving a 2.5 ms first-order current response
    kp: float = Field(4.0, description="proportional gain [V/V]")
    ki: float = Field(400.0, description="integral gain [V/(V*s)]")

    @model_validator(mode="after")
    def _check_limits(self) -> "PgmParams":
        if not self.p_min < self.p_max:
            raise ValueError(f"p_min ({self.p_min}) must be below p_max ({self.p_max})")
        return self


class PcmParams(_Params):
    """Battery branch. Negative power means charging."""

    capacity_ahr: float = Field(20.0, gt=0, description="capacity [A*h]")
    p_min: float = Field(-10e6, lt=0, description="max charge power (negative) [W]")
    p_max: float = Field(10e6, gt=0, description="max discharge power [W]")
    ramp_limit: float = Field(10e6, gt=0, description="max change per MPC step [W]")
    soc_min: float = Field(0.7, ge=0, le=1)
    soc_max: float = Field(0.8, ge=0, le=1)
    soc_init: float = Field(0.75, ge=0, le=1)

    @model_validator(mode="after")
    def _check_soc(self) -> "PcmParams":
        if not self.soc_min < self.soc_max:
            raise ValueError(f"soc_min ({self.soc_min}) must be below soc_max ({self.soc_max})")
        if not self.soc_min <= self.soc_init <= self.soc_max:
            raise ValueError(
                f"soc_init ({self.soc_init}) must lie in [{self.soc_min}, {self.soc_max}]"
            )
        return self

    @property
    def capacity_as(self) -> float:
        """Capacity in ampere-seconds (the unit the SoC recursion needs)."""
        return 3600.0 * self.capacity_ahr


class PlmParams(_Params):
    """Load branch: current sink regulated through a controllable voltage."""

    l_L: float = Field(1e-3, gt=0, description="inductance [H]")
    r_L: float = Field(0.05, ge=0, description="resistance [ohm]")
    # zero at r_L / l_L cancels the open-loop pole; closed loop is kp / l_L = 400 1/s
    kp: float = Field(0.4, description="proportional gain [V/A]")
    ki: float = Field(20.0, description="integral gain [V/(A*s)]")


class BusParams(_Params):
    """Common DC bus. The PCM converter droops on bus voltage and absorbs the power residual."""

    v_nominal: float = Field(12e3, gt=0, description="nominal bus voltage [V]")
    g_droop: float = Field(5.0, gt=0, description="PCM voltage droop conductance [S]")


class SystemParams(_Params):
    pgm: PgmParams = PgmParams()
    pcm: PcmParams = PcmParams()
    plm: PlmParams = PlmParams()
    bus: BusParams = BusParams()
