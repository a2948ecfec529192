# src/sps_ems/model/profile.py

from __future__ import annotations

import bisect
import math
from typing import List, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from sps_ems.errors import DomainError

_CONTIGUITY_TOL = 1e-9


class LoadSegment(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    t_start: float = Field(ge=0)
    t_end: float
    power: float = Field(ge=0, description="[W]")


def _default_segments() -> List[LoadSegment]:
    return [
        LoadSegment(t_start=0.0, t_end=20.0, power=15e6),
        LoadSegment(t_start=20.0, t_end=70.0, power=26e6),
        LoadSegment(t_start=70.0, t_end=120.0, power=15e6),
    ]


class LoadProfile(BaseModel):
    """
    Piecewise-constant PLM demand. Segments are contiguous and cover
    [0, t_final]; a time on a boundary belongs to the later segment.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    segments: Tuple[LoadSegment, ...] = Field(default_factory=lambda: tuple(_default_segments()))

    @model_validator(mode="after")
    def _check_segments(self) -> "LoadProfile":
        if not self.segments:
            raise ValueError("load profile needs at least one segment")
        if abs(self.segments[0].t_start) > _CONTIGUITY_TOL:
            raise ValueError("first segment must start at t = 0")
        for i, seg in enumerate(self.segments):
            if not seg.t_end > seg.t_start:
                raise ValueError(f"segment {i}: t_end ({seg.t_end}) must exceed t_start ({seg.t_start})")
            if i and abs(seg.t_start - self.segments[i - 1].t_end) > _CONTIGUITY_TOL:
                raise ValueError(
                    f"segment {i} starts at {seg.t_start} but segment {i - 1} ends at "
                    f"{self.segments[i - 1].t_end}; segments must be contiguous"
                )
        return self

    @property
    def t_final(self) -> float:
        return self.segments[-1].t_end

    @property
    def peak_power(self) -> float:
        return max(s.power for s in self.segments)


def load_power(profile: LoadProfile, t: float) -> float:
    """Demand [W] at time t."""
    if not math.isfinite(t) or t < 0.0 or t > profile.t_final:
        raise DomainError(f"t={t!r} outside load profile domain [0, {profile.t_final}]")
    starts = [s.t_start for s in profile.segments]
    idx = bisect.bisect_right(starts, t) - 1
    return profile.segments[max(idx, 0)].power


def step_profile(base: float, pulse: float, t_on: float, t_off: float, t_final: float) -> LoadProfile:
    """Base load with one rectangular pulse on [t_on, t_off)."""
    return LoadProfile(
        segments=(
            LoadSegment(t_start=0.0, t_end=t_on, power=base),
            LoadSegment(t_start=t_on, t_end=t_off, power=pulse),
            LoadSegment(t_start=t_off, t_end=t_final, power=base),
        )
    )


def constant_profile(power: float, t_final: float) -> LoadProfile:
    return LoadProfile(segments=(LoadSegment(t_start=0.0, t_end=t_final, power=power),))
