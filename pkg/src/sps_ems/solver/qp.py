# src/sps_ems/solver/qp.py
"""
Dense convex QP data types:

    minimize    1/2 x'Px + c'x
    subject to  lo <= Ax <= up

Dual convention: y_i > 0 when row i sits on its upper bound, y_i < 0 on
its lower bound, so stationarity reads Px + c + A'y = 0.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from sps_ems.errors import QpDimensionError

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-10

STATUS_OPTIMAL = "optimal"
STATUS_MAX_ITER = "max-iterations"
STATUS_INFEASIBLE = "infeasible-detected"


class ToleranceSet(BaseModel):
    """Termination and algorithm settings of the ADMM solver."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    eps_abs: float = Field(1e-6, gt=0)
    eps_rel: float = Field(1e-6, ge=0)
    eps_pinf: float = Field(1e-5, gt=0, description="primal infeasibility certificate")
    max_iter: int = Field(4000, ge=1)
    rho: float = Field(0.1, gt=0, description="initial penalty on inequality rows")
    adaptive_rho: bool = True
    adaptive_rho_interval: int = Field(25, ge=1)
    adaptive_rho_tolerance: float = Field(5.0, gt=1, description="rho changes only by more than this factor")
    sigma: float = Field(1e-6, gt=0)
    alpha: float = Field(1.6, gt=0, lt=2)
    scaling_iter: int = Field(10, ge=0)
    polish: bool = True
    polish_interval: int = Field(25, ge=1)
    polish_tol: float = Field(1e-11, gt=0, description="feasibility a polished point must reach")


@dataclass(frozen=True)
class QpProblem:
    P: np.ndarray
    c: np.ndarray
    A: np.ndarray
    lo: np.ndarray
    up: np.ndarray

    def __post_init__(self) -> None:
        P = _as_matrix(self.P, "P")
        A = _as_matrix(self.A, "A")
        c = _as_vector(self.c, "c")
        lo = _as_vector(self.lo, "lo", allow_inf=True)
        up = _as_vector(self.up, "up", allow_inf=True)

        n = c.shape[0]
        if P.shape != (n, n):
            raise QpDimensionError(f"P has shape {P.shape}, expected ({n}, {n})")
        if A.shape[1] != n and A.size:
            raise QpDimensionError(f"A has {A.shape[1]} columns, expected {n}")
        if A.size == 0:
            A = A.reshape(0, n)
        m = A.shape[0]
        if lo.shape != (m,) or up.shape != (m,):
            raise QpDimensionError(f"bounds have shapes {lo.shape}/{up.shape}, expected ({m},)")
        if np.any(np.isnan(lo)) or np.any(np.isnan(up)):
            raise QpDimensionError("bounds contain NaN")
        if np.any(lo == np.inf) or np.any(up == -np.inf):
            raise QpDimensionError("lo may not be +inf and up may not be -inf")
        if np.any(lo > up):
            bad = int(np.argmax(lo > up))
            raise QpDimensionError(f"lo > up in row {bad} ({lo[bad]} > {up[bad]})")
        asym = float(np.max(np.abs(P - P.T))) if n else 0.0
        if asym > SYMMETRY_TOL * max(1.0, float(np.max(np.abs(P))) if n else 1.0):
            raise QpDimensionError(f"P is not symmetric (max |P - P'| = {asym:.3e})")

        for name, arr in (("P", P), ("c", c), ("A", A), ("lo", lo), ("up", up)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.P @ x + self.c @ x)


@dataclass(frozen=True)
class QpSolution:
    x: np.ndarray
    duals: np.ndarray
    status: str
    iterations: int
    primal_residual: float
    dual_residual: float
    eps_prim: float
    eps_dual: float
    objective: float
    polished: bool = False

    @property
    def is_optimal(self) -> bool:
        return self.status == STATUS_OPTIMAL


def _as_matrix(a: Any, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True)
    if arr.ndim != 2:
        raise QpDimensionError(f"{name} must be 2-D (got ndim={arr.ndim})")
    if not np.all(np.isfinite(arr)):
        raise QpDimensionError(f"{name} contains non-finite entries")
    return arr


def _as_vector(a: Any, name: str, allow_inf: bool = False) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True).reshape(-1)
    ok = ~np.isnan(arr) if allow_inf else np.isfinite(arr)
    if not np.all(ok):
        raise QpDimensionError(f"{name} contains non-finite entries")
    return arr


def _inf_norm(v: np.ndarray) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


def kkt_residuals(p: QpProblem, x: np.ndarray, y: np.ndarray) -> Tuple[float, float]:
    """(primal, dual) infinity-norm residuals: ||clip(Ax) - Ax|| and ||Px + c + A'y||."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != (p.n,) or y.shape != (p.m,):
        raise QpDimensionError(f"x/y have shapes {x.shape}/{y.shape}, expected ({p.n},)/({p.m},)")
    ax = p.A @ x
    prim = _inf_norm(np.minimum(np.maximum(ax, p.lo), p.up) - ax)
    dual = _inf_norm(p.P @ x + p.c + p.A.T @ y)
    return prim, dual


def residual_thresholds(p: QpProblem, x: np.ndarray, y: np.ndarray, tol: ToleranceSet) -> Tuple[float, float]:
    """Absolute-plus-relative thresholds the residuals are compared against."""
    ax = p.A @ x
    z = np.minimum(np.maximum(ax, p.lo), p.up)
    eps_prim = tol.eps_abs + tol.eps_rel * max(_inf_norm(ax), _inf_norm(z))
    eps_dual = tol.eps_abs + tol.eps_rel * max(
        _inf_norm(p.P @ x), _inf_norm(p.A.T @ y), _inf_norm(p.c)
    )
    return eps_prim, eps_dual


def problem_document(p: QpProblem) -> Dict[str, Any]:
    """JSON-ready view of the problem; infinite bounds become null."""

    def _bounds(v: np.ndarray) -> list:
        return [float(b) if np.isfinite(b) else None for b in v]

    return {
        "n": p.n,
        "m": p.m,
        "P": p.P.tolist(),
        "c": p.c.tolist(),
        "A": p.A.tolist(),
        "lo": _bounds(p.lo),
        "up": _bounds(p.up),
    }


def problem_from_document(doc: Dict[str, Any]) -> QpProblem:
    lo = [-np.inf if b is None else b for b in doc["lo"]]
    up = [np.inf if b is None else b for b in doc["up"]]
    n = len(doc["c"])
    A = np.array(doc["A"], dtype=float).reshape(len(lo), n)
    return QpProblem(P=np.array(doc["P"]), c=np.array(doc["c"]), A=A, lo=np.array(lo), up=np.array(up))


def dump_problem(p: QpProblem, directory: Optional[str] = None, tag: str = "qp") -> Optional[str]:
    """
    Write the problem as JSON for offline inspection. The directory
    defaults to $SPS_EMS_QP_DUMP_DIR; nothing is written if neither is set.
    """
    directory = directory or os.getenv("SPS_EMS_QP_DUMP_DIR")
    if not directory:
        return None
    os.makedirs(directory, exist_ok=True)

    payload = json.dumps(problem_document(p), sort_keys=True)
    h = hashlib.sha256(payload.encode("utf-8")).hexdigest()
    path = os.path.join(directory, f"{tag}_{h}.json")
    if not os.path.exists(path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(payload)
        logger.debug("dumped QP (n=%d, m=%d) to %s", p.n, p.m, path)
    return path
