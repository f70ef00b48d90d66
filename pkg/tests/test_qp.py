import numpy as np
import pytest

from urbanmpc import (OcpQp, OcpSolution, StageRows, dump_qp, kkt_residuals,
                      load_qp, solve)

from conftest import random_ocp_qp


def riccati_lqr_oracle(qp):
    """Textbook affine LQR solve for instances without inequality rows."""
    N, nx, nu = qp.N, qp.nx, qp.nu
    P = qp.Q[N].copy()
    plin = qp.q[N].copy()
    K = np.zeros((N, nu, nx))
    kff = np.zeros((N, nu))
    for k in range(N - 1, -1, -1):
        A, B = qp.A[k], qp.B[k]
        G = qp.R[k] + B.T @ P @ B
        F = qp.S[k].T + B.T @ P @ A
        h = qp.r[k] + B.T @ (P @ qp.b[k] + plin)
        K[k] = -np.linalg.solve(G, F)
        kff[k] = -np.linalg.solve(G, h)
        plin = qp.q[k] + A.T @ (P @ qp.b[k] + plin) + F.T @ kff[k]
        P = qp.Q[k] + A.T @ P @ A + F.T @ K[k]
        P = 0.5 * (P + P.T)
    xs = np.zeros((N + 1, nx))
    us = np.zeros((N, nu))
    xs[0] = qp.x0
    for k in range(N):
        us[k] = K[k] @ xs[k] + kff[k]
        xs[k + 1] = qp.A[k] @ xs[k] + qp.B[k] @ us[k] + qp.b[k]
    return xs, us


def cvxpy_oracle(qp):
    """Dense reference solve of the same data with an independent method."""
    import cvxpy as cp

    N, nx, nu = qp.N, qp.nx, qp.nu
    xs = [cp.Variable(nx) for _ in range(N + 1)]
    us = [cp.Variable(nu) for _ in range(N)]
    cost = 0
    cons = [xs[0] == qp.x0]
    for k in range(N):
        H = np.block([[qp.Q[k], qp.S[k]], [qp.S[k].T, qp.R[k]]])
        z = cp.hstack([xs[k], us[k]])
        cost += 0.5 * cp.quad_form(z, cp.psd_wrap(H)) \
            + qp.q[k] @ xs[k] + qp.r[k] @ us[k]
        cons.append(xs[k + 1] == qp.A[k] @ xs[k] + qp.B[k] @ us[k] + qp.b[k])
    cost += 0.5 * cp.quad_form(xs[N], cp.psd_wrap(qp.Q[N])) + qp.q[N] @ xs[N]

    slack_cost = 0
    for k in range(N + 1):
        sl = qp.stage_slice(k)
        for i in range(sl.start, sl.stop):
            row = qp.C[i] @ xs[k]
            if k < N:
                row = row + qp.D[i] @ us[k]
            if qp.soft_weight[i] > 0:
                if np.isfinite(qp.dlo[i]):
                    s = cp.Variable(nonneg=True)
                    cons.append(row >= qp.dlo[i] - s)
                    slack_cost += qp.soft_weight[i] * s
                if np.isfinite(qp.dup[i]):
                    s = cp.Variable(nonneg=True)
                    cons.append(row <= qp.dup[i] + s)
                    slack_cost += qp.soft_weight[i] * s
            else:
                if np.isfinite(qp.dlo[i]):
                    cons.append(row >= qp.dlo[i])
                if np.isfinite(qp.dup[i]):
                    cons.append(row <= qp.dup[i])
    prob = cp.Problem(cp.Minimize(cost + slack_cost), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-11, tol_gap_rel=1e-11,
               tol_feas=1e-11)
    assert prob.status == "optimal"
    return float(prob.value)


class TestSolveBasics:
    def test_unconstrained_matches_riccati_oracle(self, rng):
        for _ in range(10):
            qp = random_ocp_qp(rng, with_rows=False)
            sol = solve(qp)
            assert sol.optimal
            xs, us = riccati_lqr_oracle(qp)
            np.testing.assert_allclose(sol.x, xs, atol=1e-8)
            np.testing.assert_allclose(sol.u, us, atol=1e-8)

    def test_double_integrator_clipped_input(self):
        # N=1, 1D double integrator in (pos, vel), min u^2 + x1'x1, |u| <= 1;
        # unconstrained optimum wants u = -(B'QB+R)^{-1} B'Q(Ax0) ~ -1.45,
        # so the box clips it at -1 (KKT by hand)
        A = np.array([[[1.0, 1.0], [0.0, 1.0]]])
        B = np.array([[[0.5], [1.0]]])
        b = np.zeros((1, 2))
        Q = np.stack([np.zeros((2, 2)), np.eye(2)])
        S = np.zeros((1, 2, 1))
        R = np.array([[[0.1]]])
        q = np.zeros((2, 2))
        r = np.zeros((1, 1))
        x0 = np.array([1.0, 1.0])
        rows = [StageRows(C=np.zeros((1, 2)), D=[[1.0]], dlo=[-1.0], dup=[1.0],
                          soft_weight=[0.0]), None]
        qp = OcpQp(A, B, b, Q, S, R, q, r, x0, rows)
        sol = solve(qp)
        assert sol.optimal
        assert sol.u[0, 0] == pytest.approx(-1.0, abs=1e-7)

    def test_random_instances_match_dense_reference(self, rng):
        pytest.importorskip("cvxpy")
        for _ in range(20):
            qp = random_ocp_qp(rng)
            sol = solve(qp)
            assert sol.optimal
            res = kkt_residuals(qp, sol)
            assert np.all(res <= 1e-8)
            mine = qp.objective(sol.x, sol.u, sol.slack_lo, sol.slack_up)
            ref = cvxpy_oracle(qp)
            assert mine == pytest.approx(ref, abs=1e-6)

    def test_rejects_non_psd_cost(self, rng):
        qp = random_ocp_qp(rng, N=3, nx=2, nu=1, with_rows=False)
        qp.Q[1] = np.array([[1.0, 0.0], [0.0, -0.5]])
        with pytest.raises(ValueError):
            solve(qp)

    def test_max_iter_status_reported(self, rng):
        # infeasible hard instance: x0 pinned above a hard upper bound
        qp = random_ocp_qp(rng, N=3, nx=2, nu=1, with_rows=False)
        rows = [StageRows(C=[[1.0, 0.0]], D=np.zeros((1, 1)),
                          dlo=[-np.inf], dup=[qp.x0[0] - 1.0],
                          soft_weight=[0.0])] + [None] * 3
        qp2 = OcpQp(qp.A, qp.B, qp.b, qp.Q, qp.S, qp.R, qp.q, qp.r, qp.x0, rows)
        sol = solve(qp2, max_iter=20)
        assert sol.status == "max-iter"
        assert np.all(np.isfinite(sol.x))


class TestSoftConstraints:
    def test_exact_penalty_matches_hard_solution(self, rng):
        # feasible instances: the relaxed problem must reproduce the hard one
        for _ in range(12):
            qp_hard = random_ocp_qp(rng)
            hard = solve(qp_hard, tol=1e-10)
            assert hard.optimal
            w = 10.0 * max(1.0, float(np.max(hard.ineq_mult_lo, initial=0.0)),
                           float(np.max(hard.ineq_mult_up, initial=0.0)))
            rows = []
            for k in range(qp_hard.N + 1):
                sl = qp_hard.stage_slice(k)
                if sl.start == sl.stop:
                    rows.append(None)
                    continue
                rows.append(StageRows(
                    C=qp_hard.C[sl], D=qp_hard.D[sl], dlo=qp_hard.dlo[sl],
                    dup=qp_hard.dup[sl],
                    soft_weight=np.full(sl.stop - sl.start, w)))
            qp_soft = OcpQp(qp_hard.A, qp_hard.B, qp_hard.b, qp_hard.Q,
                            qp_hard.S, qp_hard.R, qp_hard.q, qp_hard.r,
                            qp_hard.x0, rows)
            soft = solve(qp_soft, tol=1e-10)
            assert soft.optimal
            assert soft.max_slack() <= 1e-8
            np.testing.assert_allclose(soft.x, hard.x, atol=1e-6)
            np.testing.assert_allclose(soft.u, hard.u, atol=1e-6)

    def test_torn_constraint_uses_slack(self):
        # bound below the pinned initial state: only the slack can serve it
        A = np.array([[[1.0]]])
        B = np.array([[[1.0]]])
        b = np.zeros((1, 1))
        Q = np.ones((2, 1, 1))
        S = np.zeros((1, 1, 1))
        R = np.ones((1, 1, 1))
        q = np.zeros((2, 1))
        r = np.zeros((1, 1))
        x0 = np.array([2.0])
        rows = [StageRows(C=[[1.0]], D=[[0.0]], dlo=[-np.inf], dup=[0.5],
                          soft_weight=[30.0]), None]
        qp = OcpQp(A, B, b, Q, S, R, q, r, x0, rows)
        sol = solve(qp)
        assert sol.optimal
        assert sol.max_slack() == pytest.approx(1.5, abs=1e-6)


class TestWarmStart:
    def test_identical_resolve_converges_immediately(self, rng):
        qp = random_ocp_qp(rng)
        sol = solve(qp)
        assert sol.optimal
        re = solve(qp, warm_start=sol)
        assert re.optimal
        assert re.iterations <= 2

    def test_primal_only_warm_start_still_solves(self, rng):
        qp = random_ocp_qp(rng)
        sol = solve(qp)
        primal_only = OcpSolution(
            x=sol.x, u=sol.u, eq_mult=np.zeros((0, 0)),
            ineq_mult_lo=np.zeros(0), ineq_mult_up=np.zeros(0),
            slack_lo=np.zeros(0), slack_up=np.zeros(0),
            status="optimal", iterations=0, residuals=np.zeros(4))
        re = solve(qp, warm_start=primal_only)
        assert re.optimal
        np.testing.assert_allclose(re.x, sol.x, atol=1e-6)


class TestKktResiduals:
    def test_optimal_solution_within_tol(self, rng):
        qp = random_ocp_qp(rng)
        sol = solve(qp, tol=1e-9)
        res = kkt_residuals(qp, sol)
        assert np.all(res <= 1e-8)

    def test_perturbation_increases_stationarity(self, rng):
        qp = random_ocp_qp(rng)
        sol = solve(qp)
        base = kkt_residuals(qp, sol)[0]
        sol.u[0, 0] += 0.1
        assert kkt_residuals(qp, sol)[0] > base + 1e-4

    def test_zero_candidate_primal_residual_is_b_norm(self, rng):
        qp = random_ocp_qp(rng, with_rows=False)
        qp.x0[:] = 0.0
        zero = OcpSolution(
            x=np.zeros((qp.N + 1, qp.nx)), u=np.zeros((qp.N, qp.nu)),
            eq_mult=np.zeros((qp.N + 1, qp.nx)),
            ineq_mult_lo=np.zeros(0), ineq_mult_up=np.zeros(0),
            slack_lo=np.zeros(0), slack_up=np.zeros(0),
            status="optimal", iterations=0, residuals=np.zeros(4))
        res = kkt_residuals(qp, zero)
        assert res[1] == pytest.approx(np.max(np.abs(qp.b)), abs=1e-14)


class TestInvariants:
    def test_dynamics_satisfied_on_optimal_exit(self, rng):
        for _ in range(5):
            qp = random_ocp_qp(rng)
            sol = solve(qp)
            assert sol.optimal
            for k in range(qp.N):
                d = sol.x[k + 1] - qp.A[k] @ sol.x[k] - qp.B[k] @ sol.u[k] \
                    - qp.b[k]
                assert np.max(np.abs(d)) <= 1e-8

    def test_merit_decreases_monotonically(self, rng):
        for _ in range(10):
            qp = random_ocp_qp(rng)
            sol = solve(qp)
            assert sol.optimal
            mh = sol.merit_history
            assert np.all(np.diff(mh) <= 1e-12)


class TestBinaryDump:
    def test_round_trip(self, rng, tmp_path):
        qp = random_ocp_qp(rng, soft_weight=5.0)
        sol = solve(qp)
        path = tmp_path / "case.qpdump"
        dump_qp(qp, path, sol)
        qp2, sol2 = load_qp(path)
        np.testing.assert_array_equal(qp.A, qp2.A)
        np.testing.assert_array_equal(qp.C, qp2.C)
        np.testing.assert_array_equal(qp.dlo, qp2.dlo)
        np.testing.assert_array_equal(qp.soft_weight, qp2.soft_weight)
        np.testing.assert_array_equal(sol.x, sol2.x)
        np.testing.assert_array_equal(sol.ineq_mult_up, sol2.ineq_mult_up)
        assert sol2.status == sol.status
        assert sol2.iterations == sol.iterations

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "bogus.qpdump"
        path.write_bytes(b"NOTADUMP" + b"\x00" * 64)
        with pytest.raises(ValueError, match="not an OCP QP dump"):
            load_qp(path)

    def test_problem_only_dump(self, rng, tmp_path):
        qp = random_ocp_qp(rng)
        path = tmp_path / "bare.qpdump"
        dump_qp(qp, path)
        qp2, sol2 = load_qp(path)
        assert sol2 is None
        np.testing.assert_array_equal(qp.Q, qp2.Q)
