# src/sps_ems/control/scenarios.py
"""Battery-degradation heuristic scenarios as cost-weight presets."""

from __future__ import annotations

from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict
from rapidfuzz import fuzz, process, utils

from sps_ems.errors import ConfigError


class ScenarioPreset(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    beta: float
    gamma_p: float
    gamma_q: float
    label: str = ""


SCENARIOS: Dict[str, ScenarioPreset] = {
    "scenario-1": ScenarioPreset(name="scenario-1", beta=1.0, gamma_p=0.0, gamma_q=0.0, label="No PCM heuristic"),
    "scenario-2": ScenarioPreset(name="scenario-2", beta=1.0, gamma_p=1000.0, gamma_q=0.0, label="Power minimization heuristic"),
    "scenario-3": ScenarioPreset(name="scenario-3", beta=1.0, gamma_p=0.0, gamma_q=1000.0, label="SoC minimization heuristic"),
}


def scenario_names() -> List[str]:
    return list(SCENARIOS)


def suggest(name: str, choices: List[str], min_score: float = 60.0) -> Optional[str]:
    """Closest choice by fuzzy ratio, or None if nothing is close enough."""
    match = process.extractOne(name, choices, scorer=fuzz.ratio, processor=utils.default_process, score_cutoff=min_score)
    return match[0] if match else None


def scenario_weights(name: str) -> ScenarioPreset:
    preset = SCENARIOS.get(name)
    if preset is not None:
        return preset

    hint = suggest(name, scenario_names())
    diag = f"scenario: unknown name '{name}'"
    if hint:
        diag += f" (did you mean '{hint}'?)"
    raise ConfigError(f"unknown scenario '{name}'", [diag + f"; expected one of {', '.join(SCENARIOS)}"])
