import json
import os

import numpy as np
import pytest

from sps_ems.errors import QpDimensionError
from sps_ems.solver.admm import QpSolver, solve
from sps_ems.solver.qp import (
    STATUS_INFEASIBLE,
    STATUS_MAX_ITER,
    STATUS_OPTIMAL,
    QpProblem,
    ToleranceSet,
    dump_problem,
    kkt_residuals,
    problem_from_document,
)


def _random_spd(rng, n, lo=1.0, hi=4.0):
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    P = Q @ np.diag(rng.uniform(lo, hi, size=n)) @ Q.T
    return 0.5 * (P + P.T)


def _grid_oracle(P, c, lo, up, half=10):
    """
    Box-constrained minimiser by repeated refinement of a uniform grid.
    The grid is clipped to the box so bound coordinates are always sampled.
    """
    n = c.size
    h = float(np.max(up - lo)) / (2 * half)
    center = 0.5 * (lo + up)
    steps = np.arange(-half, half + 1)
    while True:
        axes = [np.unique(np.clip(center[i] + h * steps, lo[i], up[i])) for i in range(n)]
        X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        f = 0.5 * np.einsum("ij,jk,ik->i", X, P, X) + X @ c
        center = X[int(np.argmin(f))]
        if h <= 5e-6:
            return center
        h = 3.0 * h / half


def _box_problem(rng, n):
    P = _random_spd(rng, n)
    c = 3.0 * rng.normal(size=n)
    lo = rng.uniform(-2.0, 0.0, size=n)
    up = lo + rng.uniform(0.5, 3.0, size=n)
    return QpProblem(P=P, c=c, A=np.eye(n), lo=lo, up=up)


class TestExamples:
    def test_projection_onto_box(self):
        p = QpProblem(P=np.eye(2), c=[-2.0, -2.0], A=np.eye(2), lo=[0.0, 0.0], up=[1.0, 1.0])
        sol = solve(p)
        assert sol.status == STATUS_OPTIMAL
        assert sol.x == pytest.approx([1.0, 1.0], abs=1e-6)

    def test_upper_bound_dual_is_positive(self):
        # minimize (x - 3)^2 on [0, 2]
        p = QpProblem(P=[[2.0]], c=[-6.0], A=[[1.0]], lo=[0.0], up=[2.0])
        sol = solve(p)
        assert sol.x == pytest.approx([2.0], abs=1e-6)
        assert sol.duals == pytest.approx([2.0], abs=1e-5)

    def test_balance_split_per_unit(self):
        # beta = 1, gamma_p = 1000, p_ref = 15 MW, load = 20 MW, base 28 MW
        base = 28e6
        p = QpProblem(
            P=np.diag([1.0, 1000.0]),
            c=[-15e6 / base, 0.0],
            A=[[1.0, 1.0]],
            lo=[20e6 / base],
            up=[20e6 / base],
        )
        sol = solve(p)
        assert sol.status == STATUS_OPTIMAL
        assert sol.x[1] * base == pytest.approx(5e6 / 1001, abs=1e-2)
        assert sol.x[0] * base == pytest.approx(20e6 - 5e6 / 1001, abs=1e-2)

    def test_unconstrained(self):
        rng = np.random.default_rng(11)
        P = _random_spd(rng, 3)
        c = rng.normal(size=3)
        sol = solve(QpProblem(P=P, c=c, A=np.zeros((0, 3)), lo=[], up=[]))
        assert sol.status == STATUS_OPTIMAL
        assert sol.x == pytest.approx(np.linalg.solve(P, -c), abs=1e-8)


class TestKktResiduals:
    def test_stationary_point_has_zero_dual_residual(self):
        rng = np.random.default_rng(5)
        P = _random_spd(rng, 3)
        x = rng.normal(size=3)
        p = QpProblem(P=P, c=-P @ x, A=np.eye(3), lo=np.full(3, -10.0), up=np.full(3, 10.0))
        prim, dual = kkt_residuals(p, x, np.zeros(3))
        assert prim == 0.0
        assert dual == pytest.approx(0.0, abs=1e-12)

    def test_perturbation_shows_up_in_dual_residual(self):
        rng = np.random.default_rng(6)
        P = _random_spd(rng, 4)
        x = rng.normal(size=4)
        p = QpProblem(P=P, c=-P @ x, A=np.eye(4), lo=np.full(4, -10.0), up=np.full(4, 10.0))
        for j in range(4):
            e = np.zeros(4)
            e[j] = 1.0
            _, dual = kkt_residuals(p, x + e, np.zeros(4))
            assert dual == pytest.approx(np.max(np.abs(P[:, j])), rel=1e-9)

    def test_primal_residual_is_distance_to_bounds(self):
        p = QpProblem(P=np.eye(1), c=[0.0], A=[[1.0]], lo=[0.0], up=[1.0])
        prim, _ = kkt_residuals(p, np.array([1.25]), np.zeros(1))
        assert prim == pytest.approx(0.25)


class TestProblemValidation:
    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(P=np.ones((2, 3)), c=np.zeros(2), A=np.eye(2), lo=np.zeros(2), up=np.ones(2)),
            dict(P=np.array([[1.0, 0.5], [0.0, 1.0]]), c=np.zeros(2), A=np.eye(2), lo=np.zeros(2), up=np.ones(2)),
            dict(P=np.eye(2), c=np.zeros(2), A=np.ones((1, 3)), lo=np.zeros(1), up=np.ones(1)),
            dict(P=np.eye(2), c=np.zeros(2), A=np.eye(2), lo=np.ones(2), up=np.zeros(2)),
            dict(P=np.eye(2), c=np.zeros(2), A=np.eye(2), lo=np.zeros(3), up=np.ones(3)),
            dict(P=np.eye(2), c=np.array([0.0, np.nan]), A=np.eye(2), lo=np.zeros(2), up=np.ones(2)),
        ],
    )
    def test_inconsistent_data_rejected(self, kwargs):
        with pytest.raises(QpDimensionError):
            QpProblem(**kwargs)

    def test_arrays_are_copied_and_frozen(self):
        P = np.eye(2)
        p = QpProblem(P=P, c=np.zeros(2), A=np.eye(2), lo=np.zeros(2), up=np.ones(2))
        P[0, 0] = 5.0
        assert p.P[0, 0] == 1.0
        with pytest.raises(ValueError):
            p.c[0] = 1.0


class TestAgainstOracles:
    def test_random_box_problems_match_grid_search(self):
        rng = np.random.default_rng(2024)
        for _ in range(200):
            p = _box_problem(rng, int(rng.integers(1, 5)))
            sol = solve(p)
            assert sol.status == STATUS_OPTIMAL
            ref = _grid_oracle(p.P, p.c, p.lo, p.up)
            assert np.max(np.abs(sol.x - ref)) <= 1e-4

    def test_random_equality_problems_match_kkt_solve(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            n = int(rng.integers(2, 7))
            m = int(rng.integers(1, n))
            M = rng.normal(size=(n, n))
            P = M @ M.T + np.eye(n)
            c = rng.normal(size=n)
            A = rng.normal(size=(m, n))
            b = rng.normal(size=m)

            K = np.block([[P, A.T], [A, np.zeros((m, m))]])
            ref = np.linalg.solve(K, np.concatenate([-c, b]))

            sol = solve(QpProblem(P=P, c=c, A=A, lo=b, up=b))
            assert sol.status == STATUS_OPTIMAL
            assert np.max(np.abs(sol.x - ref[:n])) <= 1e-8


class TestInvariance:
    @pytest.mark.parametrize("alpha", [1e-3, 0.5, 10.0, 1e3])
    def test_cost_rescaling(self, alpha):
        # absolute tolerances are not scale-free, so take them out of the picture
        tol = ToleranceSet(eps_abs=1e-10, eps_rel=1e-8)
        rng = np.random.default_rng(13)
        for _ in range(20):
            n = 3
            P = _random_spd(rng, n)
            c = 3.0 * rng.normal(size=n)
            A = np.vstack([np.ones((1, n)), np.eye(n)])
            lo = np.concatenate([[0.5], np.full(n, -1.0)])
            up = np.concatenate([[0.5], np.full(n, 1.0)])
            base = solve(QpProblem(P=P, c=c, A=A, lo=lo, up=up), tol=tol)
            scaled = solve(QpProblem(P=alpha * P, c=alpha * c, A=A, lo=lo, up=up), tol=tol)
            assert base.status == scaled.status == STATUS_OPTIMAL
            assert np.max(np.abs(scaled.x - base.x)) <= 1e-6
            assert scaled.duals == pytest.approx(alpha * base.duals, rel=1e-5, abs=1e-6 * alpha)

    def test_deterministic(self):
        p = _box_problem(np.random.default_rng(99), 4)
        a, b = solve(p), solve(p)
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.duals, b.duals)
        assert a.iterations == b.iterations

    def test_warm_start_does_not_change_the_answer(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            p = _box_problem(rng, 3)
            cold = solve(p)
            warm = solve(p, warm_start=cold.x)
            assert warm.status == STATUS_OPTIMAL
            assert np.max(np.abs(warm.x - cold.x)) <= 1e-6

    def test_primal_dual_warm_start_is_no_slower_on_most_instances(self):
        rng = np.random.default_rng(29)
        trials, warm_not_worse = 0, 0
        while trials < 60:
            n = int(rng.integers(2, 6))
            p = _box_problem(rng, n)
            if trials % 2:
                # one extra general row keeps the active set off the axes
                a = rng.normal(size=(1, n))
                ax = float(a @ (0.5 * (p.lo + p.up)))
                p = QpProblem(P=p.P, c=p.c, A=np.vstack([p.A, a]), lo=np.append(p.lo, ax - 0.5), up=np.append(p.up, ax + 0.5))
            cold = solve(p)
            if not cold.is_optimal:
                continue
            trials += 1
            warm = solve(p, warm_start=cold.x, warm_duals=cold.duals)
            assert warm.is_optimal
            assert np.max(np.abs(warm.x - cold.x)) <= 1e-5
            warm_not_worse += warm.iterations <= cold.iterations
        assert warm_not_worse / trials >= 0.9

    def test_bad_warm_start_shape(self):
        p = _box_problem(np.random.default_rng(1), 2)
        with pytest.raises(QpDimensionError):
            solve(p, warm_start=np.zeros(3))
        with pytest.raises(QpDimensionError):
            solve(p, warm_duals=np.zeros(3))


class TestStatuses:
    def test_infeasible_detected(self):
        p = QpProblem(P=np.eye(1), c=[0.0], A=[[1.0], [1.0]], lo=[0.0, 2.0], up=[1.0, 3.0])
        sol = solve(p)
        assert sol.status == STATUS_INFEASIBLE
        assert not sol.is_optimal

    def test_iteration_cap_is_never_reported_optimal(self):
        tol = ToleranceSet(max_iter=3, polish=False, eps_abs=1e-12, eps_rel=1e-12)
        p = QpProblem(P=np.eye(2), c=[-3.0, -3.0], A=np.eye(2), lo=[0.0, 0.0], up=[2.0, 2.0])
        sol = solve(p, tol=tol)
        assert sol.status == STATUS_MAX_ITER
        assert sol.iterations == 3
        assert np.all(np.isfinite(sol.x))

    def test_solver_reuses_factorisation_across_bounds(self):
        solver = QpSolver(np.eye(2), np.eye(2), ToleranceSet(adaptive_rho=False))
        first = solver.solve(np.array([-3.0, -3.0]), np.zeros(2), np.full(2, 2.0))
        second = solver.solve(np.array([-3.0, -3.0]), np.zeros(2), np.full(2, 1.0))
        assert first.x == pytest.approx([2.0, 2.0], abs=1e-6)
        assert second.x == pytest.approx([1.0, 1.0], abs=1e-6)
        assert len(solver._factors) == 1
        assert solver.rho == ToleranceSet().rho

    def test_adapted_rho_stays_on_grid_and_carries_over(self):
        rng = np.random.default_rng(5)
        p = _box_problem(rng, 4)
        solver = QpSolver(p.P, p.A)
        solver.solve(p.c, p.lo, p.up)
        rho = solver.rho
        assert 1e-6 <= rho <= 1e6
        assert 4 * np.log10(rho) == pytest.approx(round(4 * np.log10(rho)), abs=1e-9)
        # one factor per distinct rho
        assert len(solver._factors) <= 1 + 4 * 12
        again = solver.solve(p.c, p.lo, p.up)
        assert again.is_optimal
        assert again.x == pytest.approx(solve(p).x, abs=1e-6)


class TestDump:
    def test_dump_uses_env_directory_and_round_trips(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SPS_EMS_QP_DUMP_DIR", str(tmp_path))
        p = QpProblem(P=np.eye(2), c=[1.0, 2.0], A=np.eye(2), lo=[-np.inf, 0.0], up=[1.0, np.inf])
        path = dump_problem(p)
        assert path is not None and os.path.dirname(path) == str(tmp_path)
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
        assert doc["lo"][0] is None and doc["up"][1] is None
        back = problem_from_document(doc)
        assert np.array_equal(back.lo, p.lo) and np.array_equal(back.up, p.up)
        assert np.array_equal(back.P, p.P)

    def test_no_directory_means_no_dump(self, monkeypatch):
        monkeypatch.delenv("SPS_EMS_QP_DUMP_DIR", raising=False)
        p = QpProblem(P=np.eye(1), c=[0.0], A=[[1.0]], lo=[0.0], up=[1.0])
        assert dump_problem(p) is None
