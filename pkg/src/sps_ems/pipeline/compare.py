# src/sps_ems/pipeline/compare.py

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict

from sps_ems.control.scenarios import scenario_weights
from sps_ems.errors import ComparisonError
from sps_ems.pipeline.orchestrator import CUSTOM_SCENARIO, RunSpec, SimLog, run

logger = logging.getLogger(__name__)

# a PGM step counts as ramp-saturated within this relative distance of the limit
RAMP_SATURATION_RTOL = 1e-6
SOC_ORDER_MARGIN = 1e-4

METRICS = (
    "final_q_loss",
    "final_delta_q_pct",
    "final_loss_pct",
    "ah_throughput",
    "max_soc_deviation",
    "max_pgm_step",
    "ramp_saturated_steps",
    "max_abs_pb",
    "relaxed_steps",
)


class RunMetrics(BaseModel):
    model_config = ConfigDict(frozen=True)

    scenario: str
    final_q_loss: float
    final_delta_q_pct: float
    final_loss_pct: float
    ah_throughput: float
    max_soc_deviation: float
    max_pgm_step: float
    ramp_saturated_steps: int
    max_abs_pb: float
    relaxed_steps: int


class Verdict(BaseModel):
    model_config = ConfigDict(frozen=True)

    claim: str
    status: str  # pass | fail | indeterminate
    margin: float
    detail: str


class ComparisonReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    runs: Dict[str, RunMetrics]
    orderings: Dict[str, List[str]]
    pairwise: Dict[str, Dict[str, str]]
    verdicts: List[Verdict]
    meta: Dict[str, Any] = {}

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")


def run_metrics(log: SimLog) -> RunMetrics:
    if not log.rows:
        raise ComparisonError(f"{log.scenario}: log has no rows")
    q0 = float(log.meta["q0"])
    ramp = float(log.meta["pgm_ramp_limit"])

    soc = log.column("soc")
    p_b = log.column("p_b")
    first_pg = float(log.meta["initial_commands"][0])
    cmd_pg = np.array([first_pg] + [s.cmd_pg for s in log.solves])
    steps = np.abs(np.diff(cmd_pg))
    final = log.final

    return RunMetrics(
        scenario=log.scenario,
        final_q_loss=final.q_loss,
        final_delta_q_pct=final.delta_q_pct,
        final_loss_pct=final.loss_pct,
        ah_throughput=final.ah_throughput,
        max_soc_deviation=float(np.max(np.abs(soc - q0))),
        max_pgm_step=float(steps.max()) if steps.size else 0.0,
        ramp_saturated_steps=int(np.sum(steps >= ramp * (1.0 - RAMP_SATURATION_RTOL))),
        max_abs_pb=float(np.max(np.abs(p_b))),
        relaxed_steps=sum(1 for s in log.solves if s.relaxed),
    )


def _relation(a: float, b: float) -> str:
    return "<" if a < b else (">" if a > b else "=")


def _verdicts(m: Dict[str, RunMetrics]) -> List[Verdict]:
    if not {"scenario-1", "scenario-2", "scenario-3"} <= set(m):
        return []
    s1, s2, s3 = m["scenario-1"], m["scenario-2"], m["scenario-3"]
    out: List[Verdict] = []

    ok = s2.final_q_loss < s1.final_q_loss and s2.final_q_loss <= s3.final_q_loss
    margin = min(s1.final_q_loss, s3.final_q_loss) - s2.final_q_loss
    out.append(Verdict(
        claim="scenario-2 has the smallest capacity loss",
        status="pass" if ok else "fail",
        margin=margin,
        detail=f"Q_L = {s1.final_q_loss:.6e} / {s2.final_q_loss:.6e} / {s3.final_q_loss:.6e} Ah",
    ))

    margin = min(s1.max_soc_deviation, s2.max_soc_deviation) - s3.max_soc_deviation
    if margin >= SOC_ORDER_MARGIN:
        status = "pass"
    elif margin > 0.0:
        status = "indeterminate"
    else:
        status = "fail"
    out.append(Verdict(
        claim="scenario-3 stays closest to the initial SoC",
        status=status,
        margin=margin,
        detail=(
            f"max |soc - q0| = {s1.max_soc_deviation:.6f} / {s2.max_soc_deviation:.6f} / "
            f"{s3.max_soc_deviation:.6f} (margin needed {SOC_ORDER_MARGIN:g})"
        ),
    ))

    ok = s2.ramp_saturated_steps >= s1.ramp_saturated_steps and s3.ramp_saturated_steps >= s1.ramp_saturated_steps
    out.append(Verdict(
        claim="scenarios 2 and 3 use the PGM ramp limit at least as often as scenario 1",
        status="pass" if ok else "fail",
        margin=float(min(s2.ramp_saturated_steps, s3.ramp_saturated_steps) - s1.ramp_saturated_steps),
        detail=f"ramp-saturated steps = {s1.ramp_saturated_steps} / {s2.ramp_saturated_steps} / {s3.ramp_saturated_steps}",
    ))
    return out


def compare(runs: Sequence[SimLog]) -> ComparisonReport:
    """Per-run metrics, ascending orderings, pairwise relations and the scenario verdicts."""
    if not runs:
        raise ComparisonError("nothing to compare")
    ref = runs[0]
    names = [r.scenario for r in runs]
    if len(set(names)) != len(names):
        raise ComparisonError(f"duplicate scenario names: {names}")
    for r in runs[1:]:
        if r.meta.get("profile") != ref.meta.get("profile"):
            raise ComparisonError(f"{r.scenario} and {ref.scenario} use different load profiles")
        if r.meta.get("t_final") != ref.meta.get("t_final"):
            raise ComparisonError(
                f"{r.scenario} ends at {r.meta.get('t_final')}s but {ref.scenario} at {ref.meta.get('t_final')}s"
            )

    metrics = {r.scenario: run_metrics(r) for r in runs}
    orderings = {
        key: sorted(metrics, key=lambda name: (getattr(metrics[name], key), name))
        for key in METRICS
    }
    pairwise: Dict[str, Dict[str, str]] = {}
    for key in METRICS:
        rel: Dict[str, str] = {}
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                rel[f"{a} vs {b}"] = _relation(getattr(metrics[a], key), getattr(metrics[b], key))
        pairwise[key] = rel

    return ComparisonReport(
        runs=metrics,
        orderings=orderings,
        pairwise=pairwise,
        verdicts=_verdicts(metrics),
        meta={
            "mode": ref.mode,
            "t_final": ref.meta.get("t_final"),
            "profile": ref.meta.get("profile"),
            "scenarios": names,
        },
    )


def format_table(report: ComparisonReport) -> str:
    """Plain-text table, one column per run."""
    names = list(report.runs)
    width = max(14, *(len(n) for n in names))
    head = f"{'metric':<22}" + "".join(f"{n:>{width + 2}}" for n in names)
    lines = [head, "-" * len(head)]
    for key in METRICS:
        cells = []
        for n in names:
            v = getattr(report.runs[n], key)
            cells.append(f"{v:>{width + 2}d}" if isinstance(v, int) else f"{v:>{width + 2}.6g}")
        lines.append(f"{key:<22}" + "".join(cells))
    return "\n".join(lines)


def run_scenarios(base: RunSpec, scenarios: Iterable[str], jobs: int = 1) -> List[SimLog]:
    """Run one spec per scenario name; with jobs > 1 the runs go to a process pool."""
    names = list(scenarios)
    for name in names:
        if name != CUSTOM_SCENARIO:
            scenario_weights(name)
    specs = [base.model_copy(update={"scenario": name}) for name in names]
    if jobs <= 1 or len(specs) <= 1:
        return [run(s) for s in specs]
    logger.info("running %d scenarios on %d worker processes", len(specs), jobs)
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run, specs))


def compare_scenarios(base: RunSpec, scenarios: Optional[Iterable[str]] = None, jobs: int = 1) -> ComparisonReport:
    names = list(scenarios or ("scenario-1", "scenario-2", "scenario-3"))
    return compare(run_scenarios(base, names, jobs))
