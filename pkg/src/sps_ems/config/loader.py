# src/sps_ems/config/loader.py

from __future__ import annotations

import json
import logging
import os
import typing
from importlib import resources
from typing import Any, Dict, List, Literal, Optional, Tuple, Type

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from sps_ems.control.mpc import MpcConfig
from sps_ems.control.scenarios import suggest
from sps_ems.degradation.capacity import DegradationParams
from sps_ems.errors import ConfigError
from sps_ems.model.params import SystemParams
from sps_ems.model.profile import LoadProfile
from sps_ems.pipeline.orchestrator import RunSpec

logger = logging.getLogger(__name__)

CONFIG_ENV = "SPS_EMS_CONFIG"


class RunSection(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    scenario: str = "scenario-1"
    mode: Literal["device", "dispatch"] = "device"
    t_final: Optional[float] = Field(None, gt=0)
    plant_dt: float = Field(1e-3, gt=0)
    mpc_period: float = Field(1.0, gt=0)
    log_period: Optional[float] = Field(None, gt=0)
    seed: int = 0
    max_consecutive_failures: int = Field(3, ge=0)
    jobs: int = Field(1, ge=1)


class AppConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    system: SystemParams = SystemParams()
    mpc: MpcConfig = MpcConfig()
    degradation: DegradationParams = DegradationParams()
    load_profile: LoadProfile = LoadProfile()
    run: RunSection = RunSection()


# ----------------------------------------------------------------------
# diagnostics
# ----------------------------------------------------------------------
def _model_at(cls: Type[BaseModel], path: Tuple[Any, ...]) -> Optional[Type[BaseModel]]:
    for part in path:
        if isinstance(part, int):
            continue
        field = cls.model_fields.get(str(part))
        if field is None:
            return None
        ann = field.annotation
        candidates = [ann, *typing.get_args(ann)]
        nxt = next((c for c in candidates if isinstance(c, type) and issubclass(c, BaseModel)), None)
        if nxt is None:
            return None
        cls = nxt
    return cls


def diagnostics_from(err: ValidationError, root: Type[BaseModel] = AppConfig) -> List[str]:
    """One `dotted.path: message` line per pydantic error, with a suggestion for unknown keys."""
    out: List[str] = []
    for e in err.errors():
        loc = tuple(e.get("loc", ()))
        path = ".".join(str(p) for p in loc) or "<root>"
        msg = e.get("msg", "invalid value")
        if e.get("type") == "extra_forbidden" and loc:
            parent = _model_at(root, loc[:-1])
            if parent is not None:
                hint = suggest(str(loc[-1]), list(parent.model_fields))
                if hint:
                    msg += f" (did you mean '{hint}'?)"
        out.append(f"{path}: {msg}")
    return out


# ----------------------------------------------------------------------
# loading
# ----------------------------------------------------------------------
def default_config_text() -> str:
    return resources.files("sps_ems").joinpath("config").joinpath("default.json").read_text(encoding="utf-8")


def resolve_config_path(path: Optional[str] = None) -> Optional[str]:
    """--config wins over $SPS_EMS_CONFIG; None means the packaged default."""
    return path or os.getenv(CONFIG_ENV) or None


def parse_config(doc: Dict[str, Any], source: str = "<document>") -> AppConfig:
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: configuration must be a JSON object", [f"<root>: got {type(doc).__name__}"])
    try:
        cfg = AppConfig.model_validate(doc)
    except ValidationError as e:
        raise ConfigError(f"{source}: invalid configuration", diagnostics_from(e)) from e
    # cross-section consistency (timing vs profile, scenario name, mpc.ts)
    build_run_spec(cfg, source=source)
    return cfg


def load_config(path: Optional[str] = None) -> AppConfig:
    resolved = resolve_config_path(path)
    if resolved is None:
        source = "default.json"
        text = default_config_text()
    else:
        source = resolved
        if not os.path.exists(resolved):
            raise ConfigError(f"config file not found: {resolved}", [f"<root>: no such file '{resolved}'"])
        with open(resolved, "r", encoding="utf-8") as f:
            text = f.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{source}: not valid JSON", [f"<root>: line {e.lineno} column {e.colno}: {e.msg}"]) from e
    logger.debug("loaded configuration from %s", source)
    return parse_config(doc, source)


def build_run_spec(
    cfg: AppConfig,
    scenario: Optional[str] = None,
    mode: Optional[str] = None,
    seed: Optional[int] = None,
    source: str = "<config>",
) -> RunSpec:
    r = cfg.run
    payload = {
        "scenario": scenario or r.scenario,
        "system": cfg.system,
        "mpc": cfg.mpc,
        "degradation": cfg.degradation,
        "profile": cfg.load_profile,
        "mode": mode or r.mode,
        "t_final": r.t_final,
        "plant_dt": r.plant_dt,
        "mpc_period": r.mpc_period,
        "log_period": r.log_period,
        "seed": r.seed if seed is None else seed,
        "max_consecutive_failures": r.max_consecutive_failures,
    }
    try:
        return RunSpec.model_validate(payload)
    except ValidationError as e:
        diags = [d.replace("<root>", "run", 1) if d.startswith("<root>") else f"run.{d}" for d in diagnostics_from(e, RunSpec)]
        raise ConfigError(f"{source}: inconsistent run settings", diags) from e


def config_document(cfg: AppConfig) -> Dict[str, Any]:
    """Fully resolved JSON document; parse_config(config_document(c)) == c."""
    return cfg.model_dump(mode="json")


def resolved_parameter_table(cfg: AppConfig) -> List[Tuple[str, Any, str]]:
    """(name, value, SI unit) rows including derived quantities."""
    s = cfg.system
    m = cfg.mpc
    rows: List[Tuple[str, Any, str]] = [
        ("system.pgm.l_g", s.pgm.l_g, "H"),
        ("system.pgm.r_line", s.pgm.r_line, "ohm"),
        ("system.pgm.c_g", s.pgm.c_g, "F"),
        ("system.pgm.p_min", s.pgm.p_min, "W"),
        ("system.pgm.p_max", s.pgm.p_max, "W"),
        ("system.pgm.ramp_limit", s.pgm.ramp_limit, "W/step"),
        ("system.pgm.kp", s.pgm.kp, "V/V"),
        ("system.pgm.ki", s.pgm.ki, "V/(V*s)"),
        ("system.pcm.capacity_ahr", s.pcm.capacity_ahr, "A*h"),
        ("system.pcm.capacity_as", s.pcm.capacity_as, "A*s"),
        ("system.pcm.p_min", s.pcm.p_min, "W"),
        ("system.pcm.p_max", s.pcm.p_max, "W"),
        ("system.pcm.ramp_limit", s.pcm.ramp_limit, "W/step"),
        ("system.pcm.soc_min", s.pcm.soc_min, "-"),
        ("system.pcm.soc_max", s.pcm.soc_max, "-"),
        ("system.pcm.soc_init", s.pcm.soc_init, "-"),
        ("system.plm.l_L", s.plm.l_L, "H"),
        ("system.plm.r_L", s.plm.r_L, "ohm"),
        ("system.plm.kp", s.plm.kp, "V/A"),
        ("system.plm.ki", s.plm.ki, "V/(A*s)"),
        ("system.bus.v_nominal", s.bus.v_nominal, "V"),
        ("system.bus.g_droop", s.bus.g_droop, "S"),
        ("mpc.horizon", m.horizon, "steps"),
        ("mpc.ts", m.ts, "s"),
        ("mpc.beta", m.beta, "-"),
        ("mpc.gamma_p", m.gamma_p, "-"),
        ("mpc.gamma_q", m.gamma_q, "-"),
        ("mpc.p_g_ref", m.p_g_ref, "W"),
        ("mpc.q0_ref", m.anchor(s), "-"),
        ("mpc.power_base", m.base(s), "W"),
        ("mpc.slack_penalty", m.slack_penalty, "-"),
        ("mpc.tolerances.eps_abs", m.tolerances.eps_abs, "-"),
        ("mpc.tolerances.eps_rel", m.tolerances.eps_rel, "-"),
        ("mpc.tolerances.max_iter", m.tolerances.max_iter, "-"),
        ("mpc.tolerances.rho", m.tolerances.rho, "-"),
        ("mpc.tolerances.adaptive_rho", m.tolerances.adaptive_rho, "-"),
        ("mpc.tolerances.alpha", m.tolerances.alpha, "-"),
        ("degradation.zeta1", cfg.degradation.zeta1, "J/mol"),
        ("degradation.gas_const", cfg.degradation.gas_const, "J/(mol*K)"),
        ("degradation.temp_b", cfg.degradation.temp_b, "K"),
        ("degradation.c_rate_mode", cfg.degradation.c_rate_mode, "-"),
        ("degradation.c_rate_fixed", cfg.degradation.c_rate_fixed, "1/h"),
    ]
    for i, seg in enumerate(cfg.load_profile.segments):
        rows.append((f"load_profile.segments[{i}]", f"[{seg.t_start:g}, {seg.t_end:g}) {seg.power:g}", "s, s, W"))
    r = cfg.run
    rows += [
        ("run.scenario", r.scenario, "-"),
        ("run.mode", r.mode, "-"),
        ("run.t_final", cfg.load_profile.t_final if r.t_final is None else r.t_final, "s"),
        ("run.plant_dt", r.plant_dt, "s"),
        ("run.mpc_period", r.mpc_period, "s"),
        ("run.log_period", 0.1 if r.log_period is None else r.log_period, "s"),
        ("run.seed", r.seed, "-"),
    ]
    return rows
