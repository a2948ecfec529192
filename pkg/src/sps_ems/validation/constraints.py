# src/sps_ems/validation/constraints.py
# Constraint certification of MPC solutions and simulation logs.
# Checks are done in watts / SoC fractions, independently of the QP that
# produced the numbers, so a scaling or indexing slip in the QP shows up here.

from __future__ import annotations

from typing import Any, Dict, List, Sequence

import numpy as np

from sps_ems.model.params import SystemParams
from sps_ems.pipeline.orchestrator import SimLog, SolveRecord

POWER_TOL = 1e-3  # W
SOC_TOL = 1e-9
PLANT_SOC_BAND = 1e-3

CHECKS = ("balance", "pg_ramp", "pb_ramp", "pg_box", "pb_box", "soc_box", "soc_recursion")


def _excess(v: np.ndarray) -> float:
    return float(np.max(np.maximum(v, 0.0))) if v.size else 0.0


def horizon_violations(
    p_g: Sequence[float],
    p_b: Sequence[float],
    q: Sequence[float],
    p_load: float,
    prev_pg: float,
    prev_pb: float,
    soc_now: float,
    params: SystemParams,
    ts: float,
) -> Dict[str, float]:
    """Largest violation of each horizon constraint (0.0 when satisfied)."""
    pg = np.asarray(p_g, dtype=float)
    pb = np.asarray(p_b, dtype=float)
    q = np.asarray(q, dtype=float)
    pgm, pcm = params.pgm, params.pcm

    dg = np.diff(np.concatenate([[prev_pg], pg]))
    db = np.diff(np.concatenate([[prev_pb], pb]))
    q_prev = np.concatenate([[soc_now], q[:-1]])
    gain = ts / (pcm.capacity_as * params.bus.v_nominal)

    return {
        "balance": float(np.max(np.abs(pg + pb - p_load))),
        "pg_ramp": _excess(np.abs(dg) - pgm.ramp_limit),
        "pb_ramp": _excess(np.abs(db) - pcm.ramp_limit),
        "pg_box": _excess(np.maximum(pg - pgm.p_max, pgm.p_min - pg)),
        "pb_box": _excess(np.maximum(pb - pcm.p_max, pcm.p_min - pb)),
        "soc_box": _excess(np.maximum(q - pcm.soc_max, pcm.soc_min - q)),
        "soc_recursion": float(np.max(np.abs(q - (q_prev - gain * pb)))),
    }


def _limits(power_tol: float, soc_tol: float) -> Dict[str, float]:
    return {
        "balance": power_tol,
        "pg_ramp": power_tol,
        "pb_ramp": power_tol,
        "pg_box": power_tol,
        "pb_box": power_tol,
        "soc_box": soc_tol,
        "soc_recursion": soc_tol,
    }


def certify_solve(
    rec: SolveRecord,
    params: SystemParams,
    ts: float,
    power_tol: float = POWER_TOL,
    soc_tol: float = SOC_TOL,
) -> Dict[str, Any]:
    v = horizon_violations(rec.p_g, rec.p_b, rec.q, rec.p_load, rec.prev_pg, rec.prev_pb, rec.soc, params, ts)
    limits = _limits(power_tol, soc_tol)
    # a relaxed solve trades balance for slack; that is reported, not certified
    checked = [k for k in CHECKS if not (rec.relaxed and k == "balance")]
    failed = [k for k in checked if v[k] > limits[k]]
    return {"t": rec.t, "violations": v, "failed": failed, "ok": not failed}


def certify_log(
    log: SimLog,
    params: SystemParams,
    ts: float,
    power_tol: float = POWER_TOL,
    soc_tol: float = SOC_TOL,
    plant_soc_band: float = PLANT_SOC_BAND,
) -> Dict[str, Any]:
    """
    Certify every optimal solve of a run plus the logged plant SoC band.
    Non-optimal solves are counted but not certified.
    """
    worst = {k: 0.0 for k in CHECKS}
    failures: List[str] = []
    n_certified = 0
    n_ok = 0

    for rec in log.solves:
        if not (rec.is_optimal or rec.status.startswith("relaxed:")):
            continue
        n_certified += 1
        res = certify_solve(rec, params, ts, power_tol, soc_tol)
        for k, val in res["violations"].items():
            if not (rec.relaxed and k == "balance"):
                worst[k] = max(worst[k], val)
        if res["ok"]:
            n_ok += 1
        else:
            failures.append(
                f"t={rec.t:g}s: " + ", ".join(f"{k}={res['violations'][k]:.3e}" for k in res["failed"])
            )

    soc = log.column("soc")
    pcm = params.pcm
    excursion = _excess(np.maximum(soc - pcm.soc_max, pcm.soc_min - soc)) if soc.size else 0.0
    coverage_pct = round(n_ok / n_certified * 100, 2) if n_certified else 0.0

    return {
        "n_solves": len(log.solves),
        "n_certified": n_certified,
        "n_ok": n_ok,
        "coverage_pct": coverage_pct,
        "worst": worst,
        "plant_soc_excursion": excursion,
        "plant_soc_ok": excursion <= plant_soc_band,
        "ok": n_ok == n_certified and excursion <= plant_soc_band,
        "failure_examples": failures[:5],
    }
