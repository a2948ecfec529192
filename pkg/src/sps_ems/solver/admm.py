# src/sps_ems/solver/admm.py
"""
Operator-splitting (ADMM) QP solver with Ruiz equilibration, a primal
infeasibility certificate and active-set polishing.

Iteration on the scaled problem (x, z, y):

    (P + sigma I + A' R A) x~ = sigma x - c + A'(R z - y)
    z~  = A x~
    x  <- alpha x~ + (1 - alpha) x
    z+  = Proj[lo, up](alpha z~ + (1 - alpha) z + R^-1 y)
    y  <- y + R (alpha z~ + (1 - alpha) z - z+)

R = diag(rho_i): rho on inequality rows, 1e3 rho on equality rows,
RHO_MIN on rows with both bounds infinite.

rho is adapted every adaptive_rho_interval iterations to
rho * sqrt(r_prim / r_dual) on the normalised scaled residuals, snapped to
a quarter-decade grid so the factor cache stays small, and carried over
to the next solve on the same solver.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.linalg as sla

from sps_ems.errors import QpDimensionError
from sps_ems.solver.qp import (
    STATUS_INFEASIBLE,
    STATUS_MAX_ITER,
    STATUS_OPTIMAL,
    QpProblem,
    QpSolution,
    ToleranceSet,
    kkt_residuals,
    residual_thresholds,
)

logger = logging.getLogger(__name__)

RHO_MIN = 1e-6
RHO_MAX = 1e6
RHO_EQ_FACTOR = 1e3
RHO_GRID = 4  # steps per decade
ACTIVE_RTOL = 1e-9
MIN_SCALING = 1e-4
MAX_SCALING = 1e4
INF_SURROGATE = 1e20
POLISH_DELTA = 1e-7
POLISH_REFINE_ITER = 10


@dataclass(frozen=True)
class _Scaling:
    D: np.ndarray
    E: np.ndarray
    cost: float


def _equilibrate(P: np.ndarray, A: np.ndarray, iters: int) -> Tuple[_Scaling, np.ndarray, np.ndarray]:
    """Ruiz equilibration of the KKT matrix [[P, A'], [A, 0]] followed by cost scaling."""
    n, m = P.shape[0], A.shape[0]
    D = np.ones(n)
    E = np.ones(m)
    Ps = P.copy()
    As = A.copy()

    for _ in range(iters):
        norm_x = np.abs(Ps).max(axis=0) if n else np.zeros(0)
        if m:
            norm_x = np.maximum(norm_x, np.abs(As).max(axis=0))
            norm_z = np.abs(As).max(axis=1)
        else:
            norm_z = np.zeros(0)
        d = 1.0 / np.sqrt(_limit_scaling(norm_x))
        e = 1.0 / np.sqrt(_limit_scaling(norm_z))
        Ps = d[:, None] * Ps * d[None, :]
        As = e[:, None] * As * d[None, :]
        D *= d
        E *= e

    mean_col = float(np.mean(np.abs(Ps).max(axis=0))) if n else 0.0
    cost = 1.0 / float(_limit_scaling(np.array([mean_col]))[0])
    Ps *= cost
    return _Scaling(D=D, E=E, cost=cost), Ps, As


def _limit_scaling(v: np.ndarray) -> np.ndarray:
    v = np.where(v < MIN_SCALING, 1.0, v)
    return np.minimum(v, MAX_SCALING)


def _snap_rho(rho: float) -> float:
    rho = min(max(rho, RHO_MIN), RHO_MAX)
    return float(10.0 ** (round(RHO_GRID * np.log10(rho)) / RHO_GRID))


class QpSolver:
    """
    Solver bound to fixed (P, A). Scaling and the factorisation of the
    x-update matrix are computed once and reused across solves that only
    change c, lo, up, which is what a receding-horizon loop needs.
    """

    def __init__(self, P: np.ndarray, A: np.ndarray, tol: Optional[ToleranceSet] = None):
        self.tol = tol or ToleranceSet()
        P = np.asarray(P, dtype=float)
        A = np.asarray(A, dtype=float)
        if A.size == 0:
            A = A.reshape(0, P.shape[0])
        if P.ndim != 2 or P.shape[0] != P.shape[1] or A.ndim != 2 or A.shape[1] != P.shape[0]:
            raise QpDimensionError(f"incompatible P {P.shape} and A {A.shape}")
        self.P = P
        self.A = A
        self.n = P.shape[0]
        self.m = A.shape[0]
        self.scaling, self._Ps, self._As = _equilibrate(P, A, self.tol.scaling_iter)
        self._factors: Dict[bytes, Tuple[np.ndarray, object]] = {}
        # inequality-row penalty the next solve starts from
        self.rho = self.tol.rho

    # ------------------------------------------------------------------
    # cached linear algebra
    # ------------------------------------------------------------------
    def _rho_vector(self, lo_s: np.ndarray, up_s: np.ndarray, rho_ineq: float) -> np.ndarray:
        rho = np.full(self.m, rho_ineq)
        free = np.isinf(lo_s) & np.isinf(up_s)
        eq = (up_s - lo_s) < 1e-12 * np.maximum(1.0, np.abs(up_s))
        rho[free] = RHO_MIN
        rho[eq & ~free] = min(RHO_EQ_FACTOR * rho_ineq, RHO_MAX)
        return rho

    def _rho_estimate(self, rho_ineq: float, c_s: np.ndarray, x: np.ndarray, z: np.ndarray, y: np.ndarray) -> float:
        """Balance the normalised primal and dual residuals of the scaled problem."""
        ax = self._As @ x
        px = self._Ps @ x
        aty = self._As.T @ y
        prim = _inf_norm(ax - z) / (max(_inf_norm(ax), _inf_norm(z)) + 1e-10)
        dual = _inf_norm(px + c_s + aty) / (max(_inf_norm(px), _inf_norm(aty), _inf_norm(c_s)) + 1e-10)
        return _snap_rho(rho_ineq * np.sqrt(prim / (dual + 1e-10)))

    def _factor(self, rho: np.ndarray):
        key = rho.tobytes()
        hit = self._factors.get(key)
        if hit is None:
            K = self._Ps + self.tol.sigma * np.eye(self.n) + self._As.T @ (rho[:, None] * self._As)
            hit = sla.cho_factor(K, lower=False, check_finite=False)
            self._factors[key] = hit
        return hit

    # ------------------------------------------------------------------
    # solve
    # ------------------------------------------------------------------
    def solve(
        self,
        c: np.ndarray,
        lo: np.ndarray,
        up: np.ndarray,
        x0: Optional[np.ndarray] = None,
        y0: Optional[np.ndarray] = None,
    ) -> QpSolution:
        problem = QpProblem(P=self.P, c=c, A=self.A, lo=lo, up=up)
        tol = self.tol
        S = self.scaling
        D, E, cs = S.D, S.E, S.cost

        c_s = cs * D * problem.c
        lo_s = E * problem.lo
        up_s = E * problem.up
        rho_ineq = self.rho
        rho = self._rho_vector(lo_s, up_s, rho_ineq)
        factor = self._factor(rho)
        As, Ps = self._As, self._Ps

        # warm start (given unscaled)
        x = np.zeros(self.n) if x0 is None else np.asarray(x0, dtype=float) / D
        y = np.zeros(self.m) if y0 is None else cs * np.asarray(y0, dtype=float) / E
        z = np.minimum(np.maximum(As @ x, lo_s), up_s)

        lo_cert = np.where(np.isfinite(problem.lo), problem.lo, -INF_SURROGATE)
        up_cert = np.where(np.isfinite(problem.up), problem.up, INF_SURROGATE)

        best: Optional[QpSolution] = None
        best_score = np.inf
        y_u = E * y / cs

        for it in range(1, tol.max_iter + 1):
            rhs = tol.sigma * x - c_s + As.T @ (rho * z - y)
            xt = sla.cho_solve(factor, rhs, check_finite=False)
            zt = As @ xt
            x = tol.alpha * xt + (1.0 - tol.alpha) * x
            zr = tol.alpha * zt + (1.0 - tol.alpha) * z
            z = np.minimum(np.maximum(zr + y / rho, lo_s), up_s)
            y = y + rho * (zr - z)

            x_u = D * x
            y_prev_u = y_u
            y_u = E * y / cs

            prim, dual = kkt_residuals(problem, x_u, y_u)
            eps_p, eps_d = residual_thresholds(problem, x_u, y_u, tol)
            score = max(prim / eps_p, dual / eps_d)
            if score < best_score:
                best_score = score
                best = _solution(problem, x_u, y_u, STATUS_MAX_ITER, it, prim, dual, eps_p, eps_d)

            converged = prim <= eps_p and dual <= eps_d
            if tol.polish and (converged or it % tol.polish_interval == 0):
                polished = self._polish(problem, z, y, it)
                if polished is not None:
                    logger.debug("polished at iteration %d (admm converged: %s)", it, converged)
                    return polished
            if converged:
                return _solution(problem, x_u, y_u, STATUS_OPTIMAL, it, prim, dual, eps_p, eps_d)

            if self.m and _primal_infeasible(problem, y_u - y_prev_u, lo_cert, up_cert, tol.eps_pinf):
                logger.debug("primal infeasibility certificate at iteration %d", it)
                return _solution(problem, x_u, y_u, STATUS_INFEASIBLE, it, prim, dual, eps_p, eps_d)

            if tol.adaptive_rho and self.m and it % tol.adaptive_rho_interval == 0:
                new_rho = self._rho_estimate(rho_ineq, c_s, x, z, y)
                if new_rho > rho_ineq * tol.adaptive_rho_tolerance or new_rho < rho_ineq / tol.adaptive_rho_tolerance:
                    logger.debug("iteration %d: rho %.3g -> %.3g", it, rho_ineq, new_rho)
                    rho_ineq = self.rho = new_rho
                    rho = self._rho_vector(lo_s, up_s, rho_ineq)
                    factor = self._factor(rho)

        assert best is not None
        logger.debug(
            "iteration cap %d reached; best iterate prim=%.3e dual=%.3e",
            tol.max_iter, best.primal_residual, best.dual_residual,
        )
        return QpSolution(
            x=best.x,
            duals=best.duals,
            status=STATUS_MAX_ITER,
            iterations=tol.max_iter,
            primal_residual=best.primal_residual,
            dual_residual=best.dual_residual,
            eps_prim=best.eps_prim,
            eps_dual=best.eps_dual,
            objective=best.objective,
        )

    def _polish(self, problem: QpProblem, z: np.ndarray, y: np.ndarray, it: int) -> Optional[QpSolution]:
        """
        Guess the active set, solve the reduced equality KKT system exactly
        and accept the point only if it certifies as a KKT point: feasible
        to polish_tol, stationary to eps_dual, duals of the correct sign on
        every active row. The first guess reads (z, y); the second takes the
        rows whose z sits on a bound, which is right earlier when the duals
        lag behind the primal iterate.
        """
        S = self.scaling
        lo_s = S.E * problem.lo
        up_s = S.E * problem.up
        eq = (up_s - lo_s) < 1e-12 * np.maximum(1.0, np.abs(up_s))

        guesses = [(~eq & (z - lo_s < -y), ~eq & (up_s - z < y))]
        near = ACTIVE_RTOL * np.maximum(1.0, np.abs(z))
        on_bound = (~eq & (z - lo_s <= near), ~eq & (up_s - z <= near))
        if not (np.array_equal(on_bound[0], guesses[0][0]) and np.array_equal(on_bound[1], guesses[0][1])):
            guesses.append(on_bound)

        for at_lo, at_up in guesses:
            sol = self._polish_with(problem, eq, at_lo & ~at_up, at_up, lo_s, up_s, it)
            if sol is not None:
                return sol
        return None

    def _polish_with(
        self,
        problem: QpProblem,
        eq: np.ndarray,
        at_lo: np.ndarray,
        at_up: np.ndarray,
        lo_s: np.ndarray,
        up_s: np.ndarray,
        it: int,
    ) -> Optional[QpSolution]:
        tol = self.tol
        S = self.scaling
        active = eq | at_lo | at_up
        rows = np.flatnonzero(active)
        target = np.where(at_up, up_s, lo_s)[rows]

        n, k = self.n, rows.size
        A_red = self._As[rows]
        K = np.zeros((n + k, n + k))
        K[:n, :n] = self._Ps
        K[:n, n:] = A_red.T
        K[n:, :n] = A_red
        K_reg = K.copy()
        K_reg[:n, :n] += POLISH_DELTA * np.eye(n)
        K_reg[n:, n:] -= POLISH_DELTA * np.eye(k)
        rhs = np.concatenate([-S.cost * S.D * problem.c, target])

        try:
            lu = sla.lu_factor(K_reg, check_finite=False)
        except (ValueError, np.linalg.LinAlgError):
            return None
        sol = sla.lu_solve(lu, rhs, check_finite=False)
        for _ in range(POLISH_REFINE_ITER):
            r = rhs - K @ sol
            if _inf_norm(r) <= 1e-15 * max(1.0, _inf_norm(rhs)):
                break
            sol = sol + sla.lu_solve(lu, r, check_finite=False)
        if not np.all(np.isfinite(sol)):
            return None

        y_s = np.zeros(self.m)
        y_s[rows] = sol[n:]
        x_u = S.D * sol[:n]
        y_u = S.E * y_s / S.cost

        prim, dual = kkt_residuals(problem, x_u, y_u)
        eps_p, eps_d = residual_thresholds(problem, x_u, y_u, tol)
        ax = problem.A @ x_u
        feas_limit = min(eps_p, tol.polish_tol * max(1.0, _inf_norm(ax)))
        sign_slack = eps_d
        signs_ok = bool(np.all(y_u[at_lo] <= sign_slack) and np.all(y_u[at_up] >= -sign_slack))
        if prim > feas_limit or dual > eps_d or not signs_ok:
            return None
        return _solution(problem, x_u, y_u, STATUS_OPTIMAL, it, prim, dual, eps_p, eps_d, polished=True)


def _inf_norm(v: np.ndarray) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


def _primal_infeasible(
    problem: QpProblem,
    delta_y: np.ndarray,
    lo_cert: np.ndarray,
    up_cert: np.ndarray,
    eps: float,
) -> bool:
    # a certificate may not push against an infinite bound
    dy = np.where(np.isinf(problem.up), np.minimum(delta_y, 0.0), delta_y)
    dy = np.where(np.isinf(problem.lo), np.maximum(dy, 0.0), dy)
    norm = _inf_norm(dy)
    if norm <= eps:
        return False
    support = float(up_cert @ np.maximum(dy, 0.0) + lo_cert @ np.minimum(dy, 0.0))
    if support >= -eps * norm:
        return False
    return _inf_norm(problem.A.T @ dy) < eps * norm


def _solution(
    problem: QpProblem,
    x: np.ndarray,
    y: np.ndarray,
    status: str,
    it: int,
    prim: float,
    dual: float,
    eps_p: float,
    eps_d: float,
    polished: bool = False,
) -> QpSolution:
    return QpSolution(
        x=x.copy(),
        duals=y.copy(),
        status=status,
        iterations=it,
        primal_residual=prim,
        dual_residual=dual,
        eps_prim=eps_p,
        eps_dual=eps_d,
        objective=problem.objective(x),
        polished=polished,
    )


def solve(
    p: QpProblem,
    warm_start: Optional[np.ndarray] = None,
    tol: Optional[ToleranceSet] = None,
    warm_duals: Optional[np.ndarray] = None,
) -> QpSolution:
    """Solve one QP on a fresh solver. Pure: no state survives the call."""
    if warm_start is not None and np.shape(warm_start) != (p.n,):
        raise QpDimensionError(f"warm start has shape {np.shape(warm_start)}, expected ({p.n},)")
    if warm_duals is not None and np.shape(warm_duals) != (p.m,):
        raise QpDimensionError(f"warm duals have shape {np.shape(warm_duals)}, expected ({p.m},)")
    return QpSolver(p.P, p.A, tol).solve(p.c, p.lo, p.up, x0=warm_start, y0=warm_duals)
